//! Connected-component labeling against a breadth-first flood fill, plus
//! image file round trips.

use std::collections::VecDeque;

use legtrack::vision::{connected_components, detect_markers, BinaryMask, DetectorParams, RasterImage, MARKER_GREEN};
use proptest::prelude::*;

#[derive(Debug, PartialEq)]
struct Region {
    first: usize,
    area: usize,
    sum_x: f64,
    sum_y: f64,
    bbox: (usize, usize, usize, usize),
}

/// Eight-connected regions in raster order of their first pixel.
fn flood_regions(w: usize, h: usize, bits: &[bool]) -> (Vec<usize>, Vec<Region>) {
    let mut region = vec![usize::MAX; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if !bits[start] || region[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut r = Region {
            first: start,
            area: 0,
            sum_x: 0.0,
            sum_y: 0.0,
            bbox: (usize::MAX, usize::MAX, 0, 0),
        };
        let mut queue = VecDeque::from([start]);
        region[start] = id;
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            r.area += 1;
            r.sum_x += x as f64;
            r.sum_y += y as f64;
            r.bbox = (r.bbox.0.min(x), r.bbox.1.min(y), r.bbox.2.max(x), r.bbox.3.max(y));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if bits[j] && region[j] == usize::MAX {
                        region[j] = id;
                        queue.push_back(j);
                    }
                }
            }
        }
        out.push(r);
    }
    (region, out)
}

fn mask_strategy() -> impl Strategy<Value = (usize, usize, Vec<bool>)> {
    (1usize..24, 1usize..24, 0.2f64..0.7).prop_flat_map(|(w, h, p)| {
        (Just(w), Just(h), prop::collection::vec(prop::bool::weighted(p), w * h))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn labeling_matches_flood_fill((w, h, bits) in mask_strategy(), min_area in 0usize..6) {
        let mask = BinaryMask::new(w, h, bits.clone()).unwrap();
        let got = connected_components(&mask, min_area);
        let (region, want) = flood_regions(w, h, &bits);
        let kept: Vec<&Region> = want.iter().filter(|r| r.area >= min_area.max(1)).collect();
        prop_assert_eq!(got.components.len(), kept.len());
        // labels come in raster order of first pixel, like the oracle's regions
        for (c, r) in got.components.iter().zip(&kept) {
            prop_assert_eq!(c.area, r.area);
            prop_assert_eq!(c.bbox, r.bbox);
            prop_assert!((c.sum_x - r.sum_x).abs() < 1e-9 && (c.sum_y - r.sum_y).abs() < 1e-9);
            prop_assert_eq!(got.labels[r.first], c.label);
        }
        // same label exactly when same region
        for i in 0..w * h {
            let l = got.labels[i];
            if l == 0 {
                prop_assert!(!bits[i] || want[region[i]].area < min_area);
                continue;
            }
            let c = got.components.iter().position(|c| c.label == l).unwrap();
            prop_assert_eq!(kept[c].first, want[region[i]].first);
        }
    }
}

#[test]
fn diagonal_pixels_join() {
    let bits = vec![true, false, false, true];
    let c = connected_components(&BinaryMask::new(2, 2, bits).unwrap(), 0);
    assert_eq!(c.components.len(), 1);
    assert_eq!(c.components[0].area, 2);
}

#[test]
fn u_shape_merges_into_one_label() {
    // two arms meet only at the bottom row, which forces a label merge
    let rows = ["x...x", "x...x", "x...x", "xxxxx"];
    let bits: Vec<bool> = rows.iter().flat_map(|r| r.chars().map(|c| c == 'x')).collect();
    let c = connected_components(&BinaryMask::new(5, 4, bits).unwrap(), 0);
    assert_eq!(c.components.len(), 1);
    assert_eq!(c.components[0].area, 11);
}

#[test]
fn ppm_round_trip_and_pgm_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 7 % 256) as u8).collect();
    let img = RasterImage::new(4, 3, pixels).unwrap();
    let p = dir.path().join("a.ppm");
    img.save_ppm(&p).unwrap();
    assert_eq!(RasterImage::load_ppm(&p).unwrap(), img);

    let mask = BinaryMask::new(2, 2, vec![true, false, false, true]).unwrap();
    let mut buf = Vec::new();
    mask.write_pgm(&mut buf).unwrap();
    assert_eq!(buf, b"P5\n2 2\n255\n\xff\x00\x00\xff");

    std::fs::write(&p, b"P3\n1 1\n255\n0 0 0").unwrap();
    assert!(RasterImage::load_ppm(&p).is_err());
    std::fs::write(&p, b"P6\n2 2\n255\n\x00").unwrap();
    assert!(RasterImage::load_ppm(&p).is_err());
}

#[test]
fn detector_finds_solid_square() {
    let mut img = RasterImage::filled(40, 30, [128, 128, 128]);
    for y in 10..16 {
        for x in 20..26 {
            img.set(x, y, MARKER_GREEN);
        }
    }
    let blobs = detect_markers(&img, &DetectorParams::default(), 3);
    assert_eq!(blobs.len(), 1);
    assert_eq!(blobs[0].area, 36);
    assert_eq!(blobs[0].centroid, (22.5, 12.5));
    assert!((blobs[0].best_area() - 36.0).abs() < 1e-9);
}
