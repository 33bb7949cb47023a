//! Colored-marker detection in RGB frames.
//!
//! Pipeline per frame: luma grayscale, subtract gray from the marker's
//! dominant color channel, threshold, 8-connected component labeling, then
//! centroid/area per component and joint association across frames.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("image dimensions {width}x{height} do not match {len} bytes")]
    BadDimensions {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("malformed PNM header: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Rgb8 = [u8; 3];

pub const MARKER_GREEN: Rgb8 = [0, 255, 0];

/// Row-major RGB8 raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, VisionError> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(VisionError::BadDimensions {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Image filled with a single color. Panics on zero dimensions.
    pub fn filled(width: usize, height: usize, color: Rgb8) -> Self {
        assert!(width > 0 && height > 0);
        let pixels = color.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb8 {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb8) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    /// Binary PPM (P6, maxval 255).
    pub fn write_ppm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)
    }

    pub fn read_ppm<R: Read>(r: R) -> Result<Self, VisionError> {
        let mut r = BufReader::new(r);
        let (width, height) = read_pnm_header(&mut r, "P6")?;
        let mut pixels = vec![0u8; width * height * 3];
        r.read_exact(&mut pixels)?;
        Self::new(width, height, pixels)
    }

    pub fn save_ppm(&self, path: &Path) -> Result<(), VisionError> {
        let f = std::fs::File::create(path)?;
        self.write_ppm(io::BufWriter::new(f))?;
        Ok(())
    }

    pub fn load_ppm(path: &Path) -> Result<Self, VisionError> {
        Self::read_ppm(std::fs::File::open(path)?)
    }
}

fn read_pnm_header<R: BufRead>(r: &mut R, magic: &str) -> Result<(usize, usize), VisionError> {
    let mut tokens = Vec::new();
    let mut line = String::new();
    while tokens.len() < 4 {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(VisionError::BadHeader("truncated".into()));
        }
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(str::to_owned));
    }
    if tokens[0] != magic {
        return Err(VisionError::BadHeader(format!("expected {magic}, got {}", tokens[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| VisionError::BadHeader(format!("bad number {s:?}")))
    };
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval != 255 {
        return Err(VisionError::BadHeader(format!("unsupported maxval {maxval}")));
    }
    Ok((w, h))
}

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, VisionError> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(VisionError::BadDimensions {
                width,
                height,
                len: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Marker color where set, black elsewhere.
    pub fn to_image(&self, marker_color: Rgb8) -> RasterImage {
        let mut pixels = Vec::with_capacity(self.bits.len() * 3);
        for &b in &self.bits {
            pixels.extend_from_slice(&if b { marker_color } else { [0, 0, 0] });
        }
        RasterImage {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    /// Binary PGM (P5), 255 for set pixels.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let data: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        w.write_all(&data)
    }
}

/// Mask and labeling thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub marker_color: Rgb8,
    /// Marker strength must exceed this to be foreground.
    pub binarize_threshold: u8,
    /// Components smaller than this (pixels) are dropped.
    pub min_area: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            marker_color: MARKER_GREEN,
            binarize_threshold: 40,
            min_area: 9,
        }
    }
}

/// Rounded BT.601 luma.
#[inline]
pub fn luma(c: Rgb8) -> u8 {
    let y = 0.299 * f64::from(c[0]) + 0.587 * f64::from(c[1]) + 0.114 * f64::from(c[2]);
    y.round().clamp(0.0, 255.0) as u8
}

fn dominant_channel(c: Rgb8) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if c[i] > c[best] {
            best = i;
        }
    }
    best
}

#[inline]
fn strength_of(c: Rgb8, channel: usize) -> u8 {
    c[channel].saturating_sub(luma(c))
}

/// Per-pixel `clamp(C_marker − gray, 0, 255)`.
pub fn marker_strength(frame: &RasterImage, marker_color: Rgb8) -> Vec<u8> {
    let ch = dominant_channel(marker_color);
    frame
        .pixels
        .chunks_exact(3)
        .map(|p| strength_of([p[0], p[1], p[2]], ch))
        .collect()
}

/// Foreground where the marker strength exceeds `threshold`.
pub fn marker_mask(frame: &RasterImage, marker_color: Rgb8, threshold: u8) -> BinaryMask {
    let bits = marker_strength(frame, marker_color)
        .into_iter()
        .map(|s| s > threshold)
        .collect();
    BinaryMask {
        width: frame.width,
        height: frame.height,
        bits,
    }
}

/// One labeled component.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// 1-based, in raster order of each component's first pixel.
    pub label: u32,
    pub area: usize,
    pub sum_x: f64,
    pub sum_y: f64,
    /// Inclusive bounding box `(min_x, min_y, max_x, max_y)`.
    pub bbox: (usize, usize, usize, usize),
}

/// Result of [`connected_components`]. `labels[i] == 0` is background or a
/// discarded component.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub components: Vec<Component>,
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let ra = find(parent, a);
    let rb = find(parent, b);
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass 8-connected labeling with union-find.
pub fn connected_components(mask: &BinaryMask, min_area: usize) -> Components {
    let (w, h) = (mask.width, mask.height);
    let mut provisional = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbours[n] = l;
                    n += 1;
                }
            };
            if x > 0 {
                push(provisional[y * w + x - 1]);
            }
            if y > 0 {
                if x > 0 {
                    push(provisional[(y - 1) * w + x - 1]);
                }
                push(provisional[(y - 1) * w + x]);
                if x + 1 < w {
                    push(provisional[(y - 1) * w + x + 1]);
                }
            }
            let label = if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                l
            } else {
                let m = *neighbours[..n].iter().min().unwrap();
                for &l in &neighbours[..n] {
                    union(&mut parent, m, l);
                }
                m
            };
            provisional[y * w + x] = label;
        }
    }

    // Second pass numbers components by their first pixel in raster order.
    let mut root_to_index = vec![u32::MAX; parent.len()];
    let mut stats: Vec<Component> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = provisional[y * w + x];
            if p == 0 {
                continue;
            }
            let r = find(&mut parent, p) as usize;
            if root_to_index[r] == u32::MAX {
                root_to_index[r] = stats.len() as u32;
                stats.push(Component {
                    label: 0,
                    area: 0,
                    sum_x: 0.0,
                    sum_y: 0.0,
                    bbox: (x, y, x, y),
                });
            }
            let c = &mut stats[root_to_index[r] as usize];
            c.area += 1;
            c.sum_x += x as f64;
            c.sum_y += y as f64;
            c.bbox.0 = c.bbox.0.min(x);
            c.bbox.1 = c.bbox.1.min(y);
            c.bbox.2 = c.bbox.2.max(x);
            c.bbox.3 = c.bbox.3.max(y);
        }
    }

    let mut final_label = vec![0u32; stats.len()];
    let mut components = Vec::new();
    for (i, mut c) in stats.into_iter().enumerate() {
        if c.area >= min_area {
            c.label = components.len() as u32 + 1;
            final_label[i] = c.label;
            components.push(c);
        }
    }
    let labels = provisional
        .iter()
        .map(|&p| {
            if p == 0 {
                0
            } else {
                let r = find(&mut parent, p) as usize;
                final_label[root_to_index[r] as usize]
            }
        })
        .collect();
    Components {
        width: w,
        height: h,
        labels,
        components,
    }
}

/// A detected marker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerBlob {
    /// Subpixel `(u, v)`: column, row.
    pub centroid: (f64, f64),
    /// Pixel count.
    pub area: usize,
    /// Component label.
    pub label: u32,
    /// Coverage-weighted area in pixels, when a strength map was supplied.
    pub coverage_area: Option<f64>,
}

impl MarkerBlob {
    /// Coverage-weighted area if available, else the pixel count.
    pub fn best_area(&self) -> f64 {
        self.coverage_area.unwrap_or(self.area as f64)
    }
}

/// Centroid and area of the `expected_count` largest components, in label order.
pub fn extract_markers(components: &Components, expected_count: usize) -> Vec<MarkerBlob> {
    let mut ranked: Vec<&Component> = components.components.iter().collect();
    ranked.sort_by(|a, b| b.area.cmp(&a.area).then(a.label.cmp(&b.label)));
    ranked.truncate(expected_count);
    ranked.sort_by_key(|c| c.label);
    ranked
        .into_iter()
        .map(|c| MarkerBlob {
            centroid: (c.sum_x / c.area as f64, c.sum_y / c.area as f64),
            area: c.area,
            label: c.label,
            coverage_area: None,
        })
        .collect()
}

/// Sums normalized marker strength over each blob's pixels and its
/// one-pixel ring, recovering the antialiased edge the threshold cut off.
pub fn attach_coverage_areas(
    blobs: &mut [MarkerBlob],
    components: &Components,
    strength: &[u8],
    full_strength: u8,
) {
    let (w, h) = (components.width, components.height);
    let full = f64::from(full_strength.max(1));
    for blob in blobs.iter_mut() {
        let Some(c) = components.components.iter().find(|c| c.label == blob.label) else {
            continue;
        };
        let (x0, y0) = (c.bbox.0.saturating_sub(1), c.bbox.1.saturating_sub(1));
        let (x1, y1) = ((c.bbox.2 + 1).min(w - 1), (c.bbox.3 + 1).min(h - 1));
        let mut sum = 0.0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let own = components.labels[y * w + x];
                let take = if own == blob.label {
                    true
                } else if own == 0 {
                    // ring pixel: background touching this component
                    let mut touches = false;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                            if nx >= 0
                                && ny >= 0
                                && (nx as usize) < w
                                && (ny as usize) < h
                                && components.labels[ny as usize * w + nx as usize] == blob.label
                            {
                                touches = true;
                            }
                        }
                    }
                    touches
                } else {
                    false
                };
                if take {
                    sum += (f64::from(strength[y * w + x]) / full).min(1.0);
                }
            }
        }
        blob.coverage_area = Some(sum);
    }
}

/// Full per-frame detection: mask, label, keep `expected_count` largest, and
/// attach coverage areas.
pub fn detect_markers(frame: &RasterImage, params: &DetectorParams, expected_count: usize) -> Vec<MarkerBlob> {
    let strength = marker_strength(frame, params.marker_color);
    let bits = strength.iter().map(|&s| s > params.binarize_threshold).collect();
    let mask = BinaryMask {
        width: frame.width,
        height: frame.height,
        bits,
    };
    let comps = connected_components(&mask, params.min_area);
    let mut blobs = extract_markers(&comps, expected_count);
    let full = strength_of(params.marker_color, dominant_channel(params.marker_color));
    attach_coverage_areas(&mut blobs, &comps, &strength, full);
    blobs
}

/// Tracked leg joints, proximal to distal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Joint {
    Hip,
    Knee,
    Ankle,
}

impl Joint {
    pub const ALL: [Joint; 3] = [Joint::Hip, Joint::Knee, Joint::Ankle];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Joint::Hip => "hip",
            Joint::Knee => "knee",
            Joint::Ankle => "ankle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "hip" => Some(Joint::Hip),
            "knee" => Some(Joint::Knee),
            "ankle" => Some(Joint::Ankle),
            _ => None,
        }
    }
}

/// Per-joint image observation. When `valid` is false the pixel and area are
/// meaningless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerObservation {
    pub t: f64,
    pub joint: Joint,
    pub pixel: (f64, f64),
    pub area_px: f64,
    pub valid: bool,
}

impl MarkerObservation {
    pub fn missing(t: f64, joint: Joint) -> Self {
        Self {
            t,
            joint,
            pixel: (0.0, 0.0),
            area_px: 0.0,
            valid: false,
        }
    }

    fn from_blob(t: f64, joint: Joint, b: &MarkerBlob) -> Self {
        Self {
            t,
            joint,
            pixel: b.centroid,
            area_px: b.best_area(),
            valid: true,
        }
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Assigns up to three blobs to hip, knee and ankle.
///
/// Without a usable previous assignment the blobs are ordered top to bottom
/// (smallest `v` is the hip); this needs all three blobs. Otherwise each joint
/// takes its nearest blob within `max_jump` pixels of its previous position,
/// closest pairs first; near-equal distances (within 1 px) prefer the smaller
/// `u`. Joints left without a blob come back with `valid = false`.
pub fn assign_joint_labels(
    t: f64,
    blobs: &[MarkerBlob],
    prev: Option<&[MarkerObservation; 3]>,
    max_jump: f64,
) -> [MarkerObservation; 3] {
    let mut out = Joint::ALL.map(|j| MarkerObservation::missing(t, j));
    let blobs = &blobs[..blobs.len().min(3)];
    let prev_positions: [Option<(f64, f64)>; 3] = match prev {
        Some(p) => p.map(|o| o.valid.then_some(o.pixel)),
        None => [None; 3],
    };
    if prev_positions.iter().all(Option::is_none) {
        if blobs.len() == 3 {
            let mut order: Vec<&MarkerBlob> = blobs.iter().collect();
            order.sort_by(|a, b| {
                a.centroid
                    .1
                    .partial_cmp(&b.centroid.1)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.centroid.0.partial_cmp(&b.centroid.0).unwrap_or(std::cmp::Ordering::Equal))
            });
            for (j, b) in Joint::ALL.iter().zip(order) {
                out[j.index()] = MarkerObservation::from_blob(t, *j, b);
            }
        }
        return out;
    }
    let radii = [max_jump; 3];
    let matched = greedy_match(blobs, &prev_positions, &radii);
    for (j, m) in matched.iter().enumerate() {
        if let Some(bi) = m {
            out[j] = MarkerObservation::from_blob(t, Joint::ALL[j], &blobs[*bi]);
        }
    }
    out
}

fn greedy_match(
    blobs: &[MarkerBlob],
    prev: &[Option<(f64, f64)>; 3],
    radii: &[f64; 3],
) -> [Option<usize>; 3] {
    let mut pairs = Vec::new();
    for (j, p) in prev.iter().enumerate() {
        let Some(p) = p else { continue };
        for (bi, b) in blobs.iter().enumerate() {
            let d = dist(*p, b.centroid);
            if d <= radii[j] {
                pairs.push((d, j, bi));
            }
        }
    }
    pairs.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= 1.0 {
            let ua = blobs[a.2].centroid.0;
            let ub = blobs[b.2].centroid.0;
            ua.partial_cmp(&ub)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal))
                .then(a.1.cmp(&b.1))
        } else {
            a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal)
        }
    });
    let mut joint_of = [None; 3];
    let mut used = [false; 3];
    for (_, j, bi) in pairs {
        if joint_of[j].is_none() && !used[bi] {
            joint_of[j] = Some(bi);
            used[bi] = true;
        }
    }
    joint_of
}

/// Stateful association over a frame sequence.
///
/// Remembers each joint's last seen position so a marker lost for a few
/// frames can be picked up again; the search radius grows with the number of
/// frames the joint has been missing.
#[derive(Debug, Clone)]
pub struct JointAssociator {
    pub max_jump: f64,
    pub max_radius: f64,
    last: [Option<(f64, f64)>; 3],
    missed: [u32; 3],
}

impl JointAssociator {
    pub fn new(max_jump: f64) -> Self {
        Self {
            max_jump,
            max_radius: 2.5 * max_jump,
            last: [None; 3],
            missed: [0; 3],
        }
    }

    pub fn step(&mut self, t: f64, blobs: &[MarkerBlob]) -> [MarkerObservation; 3] {
        let out = if self.last.iter().all(Option::is_none) {
            assign_joint_labels(t, blobs, None, self.max_jump)
        } else {
            let blobs = &blobs[..blobs.len().min(3)];
            let radii = [0, 1, 2].map(|j| {
                (self.max_jump * (1.0 + f64::from(self.missed[j]))).min(self.max_radius)
            });
            let matched = greedy_match(blobs, &self.last, &radii);
            let mut out = Joint::ALL.map(|j| MarkerObservation::missing(t, j));
            for (j, m) in matched.iter().enumerate() {
                if let Some(bi) = m {
                    out[j] = MarkerObservation::from_blob(t, Joint::ALL[j], &blobs[*bi]);
                }
            }
            out
        };
        for (j, o) in out.iter().enumerate() {
            if o.valid {
                self.last[j] = Some(o.pixel);
                self.missed[j] = 0;
            } else {
                self.missed[j] += 1;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray_frame(w: usize, h: usize) -> RasterImage {
        RasterImage::filled(w, h, [128, 128, 128])
    }

    #[test]
    fn green_patch_mask_matches_patch() {
        let mut img = gray_frame(40, 30);
        for y in 5..15 {
            for x in 12..22 {
                img.set(x, y, MARKER_GREEN);
            }
        }
        let m = marker_mask(&img, MARKER_GREEN, 40);
        for y in 0..30 {
            for x in 0..40 {
                assert_eq!(m.get(x, y), (12..22).contains(&x) && (5..15).contains(&y));
            }
        }
        assert_eq!(marker_mask(&gray_frame(8, 8), MARKER_GREEN, 40).count(), 0);
    }

    #[test]
    fn mask_is_idempotent() {
        let mut img = gray_frame(20, 20);
        img.set(3, 4, MARKER_GREEN);
        img.set(10, 11, [40, 200, 60]);
        let m = marker_mask(&img, MARKER_GREEN, 40);
        let again = marker_mask(&m.to_image(MARKER_GREEN), MARKER_GREEN, 40);
        assert_eq!(m, again);
    }

    fn mask_from(w: usize, h: usize, on: &[(usize, usize)]) -> BinaryMask {
        let mut bits = vec![false; w * h];
        for &(x, y) in on {
            bits[y * w + x] = true;
        }
        BinaryMask::new(w, h, bits).unwrap()
    }

    #[test]
    fn rectangle_is_one_component() {
        let on: Vec<_> = (2..9).flat_map(|x| (3..7).map(move |y| (x, y))).collect();
        let c = connected_components(&mask_from(12, 10, &on), 1);
        assert_eq!(c.components.len(), 1);
        assert_eq!(c.components[0].area, 7 * 4);
    }

    #[test]
    fn corner_touch_joins_under_8_connectivity() {
        let mut on = Vec::new();
        for x in 0..3 {
            for y in 0..3 {
                on.push((x, y));
                on.push((x + 3, y + 3));
            }
        }
        let c = connected_components(&mask_from(8, 8, &on), 1);
        assert_eq!(c.components.len(), 1);
        assert_eq!(c.components[0].area, 18);
    }

    #[test]
    fn small_components_are_dropped_and_labels_follow_raster_order() {
        let mut on = vec![(0, 0)];
        for x in 5..8 {
            for y in 1..4 {
                on.push((x, y));
            }
        }
        for x in 1..4 {
            for y in 6..9 {
                on.push((x, y));
            }
        }
        let c = connected_components(&mask_from(10, 10, &on), 9);
        assert_eq!(c.components.len(), 2);
        assert_eq!(c.labels[0], 0);
        assert_eq!(c.labels[1 * 10 + 5], 1);
        assert_eq!(c.labels[6 * 10 + 1], 2);
    }

    #[test]
    fn centroid_of_square() {
        let on: Vec<_> = (10..13).flat_map(|x| (20..23).map(move |y| (x, y))).collect();
        let c = connected_components(&mask_from(40, 40, &on), 1);
        let b = extract_markers(&c, 3);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].centroid, (11.0, 21.0));
        assert_eq!(b[0].area, 9);
        let empty = connected_components(&mask_from(5, 5, &[]), 1);
        assert!(extract_markers(&empty, 3).is_empty());
    }

    fn blob(u: f64, v: f64) -> MarkerBlob {
        MarkerBlob {
            centroid: (u, v),
            area: 100,
            label: 0,
            coverage_area: None,
        }
    }

    #[test]
    fn first_frame_orders_by_height() {
        let a = assign_joint_labels(0.0, &[blob(300.0, 400.0), blob(310.0, 100.0), blob(305.0, 250.0)], None, 50.0);
        assert_eq!(a[0].pixel.1, 100.0);
        assert_eq!(a[1].pixel.1, 250.0);
        assert_eq!(a[2].pixel.1, 400.0);
        assert!(a.iter().all(|o| o.valid));
    }

    #[test]
    fn missing_knee_is_invalid() {
        let prev = assign_joint_labels(0.0, &[blob(300.0, 100.0), blob(300.0, 250.0), blob(300.0, 400.0)], None, 50.0);
        let a = assign_joint_labels(0.033, &[blob(302.0, 101.0), blob(305.0, 398.0)], Some(&prev), 50.0);
        assert!(a[0].valid && a[2].valid);
        assert!(!a[1].valid);
        assert_eq!(a[2].pixel, (305.0, 398.0));
    }

    #[test]
    fn equidistant_tie_prefers_smaller_u() {
        let mut prev = [
            MarkerObservation::missing(0.0, Joint::Hip),
            MarkerObservation::missing(0.0, Joint::Knee),
            MarkerObservation::missing(0.0, Joint::Ankle),
        ];
        prev[1] = MarkerObservation {
            t: 0.0,
            joint: Joint::Knee,
            pixel: (100.0, 100.0),
            area_px: 100.0,
            valid: true,
        };
        let a = assign_joint_labels(0.1, &[blob(110.0, 100.0), blob(90.0, 100.0)], Some(&prev), 50.0);
        assert_eq!(a[1].pixel, (90.0, 100.0));
    }

    #[test]
    fn ppm_round_trip() {
        let mut img = gray_frame(5, 4);
        img.set(1, 2, [1, 2, 3]);
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P6\n5 4\n255\n"));
        assert_eq!(RasterImage::read_ppm(&buf[..]).unwrap(), img);
        let mut pgm = Vec::new();
        marker_mask(&img, MARKER_GREEN, 40).write_pgm(&mut pgm).unwrap();
        assert_eq!(pgm.len(), b"P5\n5 4\n255\n".len() + 20);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(RasterImage::new(2, 2, vec![0; 11]).is_err());
        assert!(RasterImage::new(0, 2, vec![]).is_err());
    }
}
