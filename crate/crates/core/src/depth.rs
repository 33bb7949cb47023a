//! Joint depth from marker size and inter-marker distance, the per-joint
//! depth filter that fuses them, and pinhole back-projection.

use thiserror::Error;

use crate::quat::Vec3;
use crate::scalar::{lit, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("invalid observation: {0}")]
    InvalidObservation(&'static str),
    #[error("invalid camera model: {0}")]
    InvalidCamera(&'static str),
}

/// Pinhole camera without distortion. Camera frame: +X right, +Y down, +Z
/// along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel<T> {
    pub focal_px: T,
    pub width: usize,
    pub height: usize,
    pub cx: T,
    pub cy: T,
    /// Side length of the square markers, meters.
    pub marker_side_m: T,
}

impl<T: Real> CameraModel<T> {
    /// 640×480 camera, focal length 600 px, 5 cm markers.
    pub fn default_vga() -> Self {
        Self {
            focal_px: lit(600.0),
            width: 640,
            height: 480,
            cx: lit(320.0),
            cy: lit(240.0),
            marker_side_m: lit(0.05),
        }
    }

    pub fn validate(&self) -> Result<(), DepthError> {
        if !(self.focal_px > T::zero()) {
            return Err(DepthError::InvalidCamera("focal length must be positive"));
        }
        if !(self.marker_side_m > T::zero()) {
            return Err(DepthError::InvalidCamera("marker side must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(DepthError::InvalidCamera("resolution must be non-zero"));
        }
        Ok(())
    }

    /// Pixel `(u, v)` of a camera-frame point. Requires `p.z > 0`.
    pub fn project(&self, p: Vec3<T>) -> (T, T) {
        (
            self.cx + self.focal_px * p.x / p.z,
            self.cy + self.focal_px * p.y / p.z,
        )
    }

    /// Side length in pixels of a fronto-parallel marker at depth `z`.
    pub fn marker_side_px(&self, z: T) -> T {
        self.focal_px * self.marker_side_m / z
    }

    pub fn contains(&self, (u, v): (T, T)) -> bool {
        let half: T = lit(0.5);
        u >= -half
            && v >= -half
            && u <= lit::<T>(self.width as f64) - half
            && v <= lit::<T>(self.height as f64) - half
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthSource {
    Area,
    Distance,
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthEstimate<T> {
    /// Meters along the optical axis.
    pub z: T,
    /// m².
    pub var: T,
    pub source: DepthSource,
}

/// `z = f · side / √area`, with variance from a ±0.5 px uncertainty on the
/// apparent side length.
pub fn depth_from_area<T: Real>(area_px: T, cam: &CameraModel<T>) -> Result<DepthEstimate<T>, DepthError> {
    if !(area_px > T::zero()) || !area_px.is_finite() {
        return Err(DepthError::InvalidObservation("marker area must be positive"));
    }
    let side = area_px.sqrt();
    let z = cam.focal_px * cam.marker_side_m / side;
    let sigma = z * lit(0.5) / side;
    Ok(DepthEstimate {
        z,
        var: sigma * sigma,
        source: DepthSource::Area,
    })
}

/// `z = f · L / ‖a − b‖` for two markers a known distance `L` apart, with
/// variance from ±0.5 px on each endpoint.
pub fn depth_from_distance<T: Real>(
    a: (T, T),
    b: (T, T),
    real_dist_m: T,
    cam: &CameraModel<T>,
) -> Result<DepthEstimate<T>, DepthError> {
    let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    if !(d > T::one()) || !d.is_finite() {
        return Err(DepthError::InvalidObservation("marker pixel distance must exceed 1 px"));
    }
    if !(real_dist_m > T::zero()) {
        return Err(DepthError::InvalidObservation("segment length must be positive"));
    }
    let z = cam.focal_px * real_dist_m / d;
    let sigma_d = lit::<T>(0.5) * lit::<T>(2.0).sqrt();
    let sigma = z * sigma_d / d;
    Ok(DepthEstimate {
        z,
        var: sigma * sigma,
        source: DepthSource::Distance,
    })
}

/// Camera-frame point at depth `z` seen at pixel `(u, v)`.
pub fn backproject<T: Real>(pixel: (T, T), z: T, cam: &CameraModel<T>) -> Vec3<T> {
    Vec3::new(
        (pixel.0 - cam.cx) * z / cam.focal_px,
        (pixel.1 - cam.cy) * z / cam.focal_px,
        z,
    )
}

/// Tuning for [`DepthFilter`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthFilterParams<T> {
    /// Extra depth variance per frame on top of the distance increment, m².
    pub motion_var: T,
    /// Depth variance per frame when no distance estimate drives the
    /// prediction, m².
    pub gap_var: T,
}

impl<T: Real> Default for DepthFilterParams<T> {
    fn default() -> Self {
        Self {
            motion_var: lit(1e-6),
            gap_var: lit(4e-4),
        }
    }
}

/// Output of one [`DepthFilter`] frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedDepth<T> {
    /// `None` until the filter has seen any estimate.
    pub estimate: Option<DepthEstimate<T>>,
    /// False when neither source was usable this frame; the estimate then
    /// carries the prediction.
    pub valid: bool,
}

/// Per-joint depth filter.
///
/// The distance-based estimate plays the system-model role: its change from
/// the previous frame drives the prediction. The area-based estimate is the
/// measurement. Because consecutive increments share the distance noise of
/// the frame between them, the state carries that noise term next to the
/// depth: `x = [z, n]` with `d_k = z_k + n_k`, and the prediction is
/// `z_k = z_{k−1} + n_{k−1} + (d_k − d_{k−1}) − n_k`.
#[derive(Debug, Clone)]
pub struct DepthFilter<T> {
    params: DepthFilterParams<T>,
    z: T,
    n: T,
    // covariance [[pzz, pzn], [pzn, pnn]]
    pzz: T,
    pzn: T,
    pnn: T,
    last_distance: Option<T>,
    initialized: bool,
}

impl<T: Real> DepthFilter<T> {
    pub fn new(params: DepthFilterParams<T>) -> Self {
        Self {
            params,
            z: T::zero(),
            n: T::zero(),
            pzz: T::zero(),
            pzn: T::zero(),
            pnn: T::zero(),
            last_distance: None,
            initialized: false,
        }
    }

    pub fn variance(&self) -> T {
        self.pzz
    }

    fn output(&self, valid: bool) -> FusedDepth<T> {
        FusedDepth {
            estimate: self.initialized.then_some(DepthEstimate {
                z: self.z,
                var: self.pzz,
                source: DepthSource::Fused,
            }),
            valid,
        }
    }

    pub fn step(
        &mut self,
        distance: Option<DepthEstimate<T>>,
        area: Option<DepthEstimate<T>>,
    ) -> FusedDepth<T> {
        if !self.initialized {
            match (distance, area) {
                (Some(d), _) => {
                    self.z = d.z;
                    self.n = T::zero();
                    self.pzz = d.var;
                    self.pzn = -d.var;
                    self.pnn = d.var;
                    self.last_distance = Some(d.z);
                }
                (None, Some(a)) => {
                    self.z = a.z;
                    self.n = T::zero();
                    self.pzz = a.var;
                    self.pzn = T::zero();
                    self.pnn = T::zero();
                    self.last_distance = None;
                    self.initialized = true;
                    return self.output(true);
                }
                (None, None) => return self.output(false),
            }
            self.initialized = true;
        } else {
            self.predict(distance);
        }
        if let Some(a) = area {
            self.update_area(a);
        }
        self.output(distance.is_some() || area.is_some())
    }

    fn predict(&mut self, distance: Option<DepthEstimate<T>>) {
        match (distance, self.last_distance) {
            (Some(d), Some(prev)) => {
                // F = [[1, 1], [0, 0]], L = [-1, 1]ᵀ with noise var d.var.
                self.z = self.z + self.n + (d.z - prev);
                self.n = T::zero();
                let p = self.pzz + lit::<T>(2.0) * self.pzn + self.pnn;
                self.pzz = p + d.var + self.params.motion_var;
                self.pzn = -d.var;
                self.pnn = d.var;
                self.last_distance = Some(d.z);
            }
            (Some(d), None) => {
                // Random-walk prior on z, fresh n, then the exact relation d = z + n.
                let pzz = self.pzz + self.params.gap_var;
                let s = pzz + d.var;
                let innov = d.z - self.z;
                let kz = pzz / s;
                let kn = d.var / s;
                self.z = self.z + kz * innov;
                self.n = kn * innov;
                self.pzz = pzz - kz * pzz;
                self.pzn = -kz * d.var;
                self.pnn = d.var - kn * d.var;
                self.last_distance = Some(d.z);
            }
            (None, _) => {
                self.z = self.z + self.n;
                self.n = T::zero();
                self.pzz = self.pzz + self.params.gap_var;
                self.pzn = T::zero();
                self.pnn = T::zero();
                self.last_distance = None;
            }
        }
    }

    fn update_area(&mut self, a: DepthEstimate<T>) {
        let s = self.pzz + a.var;
        if !(s > T::zero()) {
            return;
        }
        let kz = self.pzz / s;
        let kn = self.pzn / s;
        let innov = a.z - self.z;
        self.z = self.z + kz * innov;
        self.n = self.n + kn * innov;
        let (pzz, pzn, pnn) = (self.pzz, self.pzn, self.pnn);
        self.pzz = pzz - kz * pzz;
        self.pzn = pzn - kz * pzn;
        self.pnn = pnn - kn * pzn;
    }
}

/// Runs a fresh [`DepthFilter`] over `(distance, area)` pairs for one joint.
pub fn fuse_depth<T: Real>(
    stream: &[(Option<DepthEstimate<T>>, Option<DepthEstimate<T>>)],
    params: DepthFilterParams<T>,
) -> Vec<FusedDepth<T>> {
    let mut f = DepthFilter::new(params);
    stream.iter().map(|&(d, a)| f.step(d, a)).collect()
}
