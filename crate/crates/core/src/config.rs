//! Run configuration: one TOML file, unknown keys rejected, every field
//! optional with a documented default.
//!
//! ```toml
//! seed = 7
//!
//! [gait]
//! preset = "run_in_place"
//! duration = 20.0
//!
//! [filter]
//! accel_threshold = 0.2
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::{CameraModel, DepthFilterParams};
use crate::ekf::{BiasConvention, FilterConfig, LegModel, NoiseConfig};
use crate::imu::{EarthFields, GyroBiasModel};
use crate::pipeline::MissingPolicy;
use crate::quat::Vec3;
use crate::sim::{CameraPose, GaitKind, GaitProfile, Scenario, SensorNoiseSpec};
use crate::vision::DetectorParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Top-level run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for all simulated noise.
    pub seed: u64,
    /// Directory written by `simulate`, read by `track` when set.
    pub input_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub rates: RatesConfig,
    pub gait: GaitConfig,
    pub leg: LegConfig,
    pub camera: CameraConfig,
    pub noise: SensorNoiseSpec,
    pub fields: FieldsConfig,
    pub filter: FilterSection,
    pub depth: DepthConfig,
    pub vision: VisionConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesConfig {
    pub imu_hz: f64,
    pub camera_hz: f64,
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self {
            imu_hz: 100.0,
            camera_hz: 30.0,
        }
    }
}

/// A gait preset with optional per-field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitConfig {
    pub preset: GaitKind,
    pub duration: Option<f64>,
    pub cadence: Option<f64>,
    pub hip_amplitude_deg: Option<f64>,
    pub hip_offset_deg: Option<f64>,
    pub knee_max_deg: Option<f64>,
    pub knee_phase: Option<f64>,
    pub sway_deg: Option<f64>,
    pub pelvis_amplitude: Option<f64>,
    pub pelvis_period: Option<f64>,
    pub bounce: Option<f64>,
}

impl Default for GaitConfig {
    fn default() -> Self {
        Self {
            preset: GaitKind::Walk,
            duration: None,
            cadence: None,
            hip_amplitude_deg: None,
            hip_offset_deg: None,
            knee_max_deg: None,
            knee_phase: None,
            sway_deg: None,
            pelvis_amplitude: None,
            pelvis_period: None,
            bounce: None,
        }
    }
}

impl GaitConfig {
    pub fn preset(kind: GaitKind) -> Self {
        Self {
            preset: kind,
            ..Self::default()
        }
    }

    pub fn profile(&self) -> GaitProfile {
        let mut p = GaitProfile::for_kind(self.preset);
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.duration, self.duration);
        set(&mut p.cadence, self.cadence);
        set(&mut p.hip_amplitude_deg, self.hip_amplitude_deg);
        set(&mut p.hip_offset_deg, self.hip_offset_deg);
        set(&mut p.knee_max_deg, self.knee_max_deg);
        set(&mut p.knee_phase, self.knee_phase);
        set(&mut p.sway_deg, self.sway_deg);
        set(&mut p.pelvis_amplitude, self.pelvis_amplitude);
        set(&mut p.pelvis_period, self.pelvis_period);
        set(&mut p.bounce, self.bounce);
        p
    }
}

/// Segment lengths and signed IMU lever arms, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LegConfig {
    pub l_u: f64,
    pub l_l: f64,
    pub r_u: f64,
    pub r_l: f64,
}

impl Default for LegConfig {
    fn default() -> Self {
        let m = LegModel::<f64>::default();
        Self {
            l_u: m.l_u,
            l_l: m.l_l,
            r_u: m.r_u,
            r_l: m.r_l,
        }
    }
}

impl From<LegConfig> for LegModel<f64> {
    fn from(c: LegConfig) -> Self {
        LegModel {
            l_u: c.l_u,
            l_l: c.l_l,
            r_u: c.r_u,
            r_l: c.r_l,
        }
    }
}

/// Pinhole intrinsics and a side-view placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
    pub cx: f64,
    pub cy: f64,
    pub marker_side_m: f64,
    /// Distance from the walkway, meters.
    pub distance: f64,
    /// Optical center height above ground, meters.
    pub mount_height: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        let c = CameraModel::<f64>::default_vga();
        Self {
            focal_px: c.focal_px,
            width: c.width,
            height: c.height,
            cx: c.cx,
            cy: c.cy,
            marker_side_m: c.marker_side_m,
            distance: 2.5,
            mount_height: 0.55,
        }
    }
}

impl CameraConfig {
    pub fn model(&self) -> CameraModel<f64> {
        CameraModel {
            focal_px: self.focal_px,
            width: self.width,
            height: self.height,
            cx: self.cx,
            cy: self.cy,
            marker_side_m: self.marker_side_m,
        }
    }

    pub fn pose(&self) -> CameraPose {
        CameraPose::side_view(self.distance, self.mount_height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldsConfig {
    pub gravity: f64,
    /// Magnetic dip below the horizon, degrees.
    pub mag_dip_deg: f64,
}

impl Default for FieldsConfig {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            mag_dip_deg: 60.0,
        }
    }
}

impl FieldsConfig {
    pub fn fields(&self) -> EarthFields<f64> {
        EarthFields::with_dip(self.gravity, self.mag_dip_deg.to_radians())
    }
}

/// Filter noise and tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub q_diag: Vec<f64>,
    pub r1_diag: Vec<f64>,
    pub r2_diag: Vec<f64>,
    pub r3_diag: Vec<f64>,
    pub accel_threshold: f64,
    pub gated_variance: f64,
    pub alpha: f64,
    pub bias_tau: f64,
    pub initial_bias_var: f64,
    pub bias_convention: BiasConventionConfig,
    pub velocity_resync_period: f64,
    pub max_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasConventionConfig {
    Additive,
    Subtractive,
}

impl Default for FilterSection {
    fn default() -> Self {
        let n = NoiseConfig::<f64>::default();
        Self {
            q_diag: n.q_diag,
            r1_diag: n.r1_diag,
            r2_diag: n.r2_diag,
            r3_diag: n.r3_diag,
            accel_threshold: n.accel_threshold,
            gated_variance: n.gated_variance,
            alpha: 5.0,
            bias_tau: 100.0,
            initial_bias_var: 1e-4,
            bias_convention: BiasConventionConfig::Additive,
            velocity_resync_period: 1.0 / 30.0,
            max_gap: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepthConfig {
    pub motion_var: f64,
    pub gap_var: f64,
    pub missing_policy: MissingPolicy,
}

impl Default for DepthConfig {
    fn default() -> Self {
        let p = DepthFilterParams::<f64>::default();
        Self {
            motion_var: p.motion_var,
            gap_var: p.gap_var,
            missing_policy: MissingPolicy::CenterFill,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMode {
    /// Marker observations tabulated directly from the projection.
    Blobs,
    /// Rendered PPM frames run through marker detection.
    Frames,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisionConfig {
    pub mode: CameraMode,
    pub binarize_threshold: u8,
    pub min_area: usize,
    /// Association gate between frames, pixels.
    pub max_jump: f64,
    /// Also write binarized masks as PGM when rendering frames.
    pub write_masks: bool,
}

impl Default for VisionConfig {
    fn default() -> Self {
        let d = DetectorParams::default();
        Self {
            mode: CameraMode::Blobs,
            binarize_threshold: d.binarize_threshold,
            min_area: d.min_area,
            max_jump: 40.0,
            write_masks: false,
        }
    }
}

impl VisionConfig {
    pub fn detector(&self) -> DetectorParams {
        DetectorParams {
            binarize_threshold: self.binarize_threshold,
            min_area: self.min_area,
            ..DetectorParams::default()
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// The effective configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        if !(self.rates.imu_hz > 0.0 && self.rates.camera_hz > 0.0) {
            return Err(inv("rates must be positive".into()));
        }
        if self.rates.camera_hz > self.rates.imu_hz {
            return Err(inv("camera rate above IMU rate".into()));
        }
        self.gait.profile().validate().map_err(|e| inv(e.to_string()))?;
        self.noise.validate().map_err(|e| inv(e.to_string()))?;
        self.camera.model().validate().map_err(|e| inv(e.to_string()))?;
        if !(self.camera.distance > 0.5) {
            return Err(inv("camera distance must exceed 0.5 m".into()));
        }
        if !(self.depth.motion_var >= 0.0 && self.depth.gap_var >= 0.0) {
            return Err(inv("depth variances must be >= 0".into()));
        }
        if !(self.vision.max_jump > 0.0) {
            return Err(inv("vision.max_jump must be positive".into()));
        }
        self.filter_config().validate().map_err(|e| inv(e.to_string()))?;
        Ok(())
    }

    pub fn leg(&self) -> LegModel<f64> {
        self.leg.into()
    }

    pub fn scenario(&self) -> Scenario {
        let mut s = Scenario::new(self.gait.profile(), self.seed);
        s.leg = self.leg();
        s.imu_rate = self.rates.imu_hz;
        s.camera_rate = self.rates.camera_hz;
        s.camera = self.camera.model();
        s.pose = self.camera.pose();
        s.noise = self.noise;
        s.fields = self.fields.fields();
        s
    }

    pub fn filter_config(&self) -> FilterConfig<f64> {
        let f = &self.filter;
        let mut cfg = FilterConfig::new(self.fields.fields(), self.camera.pose().to_ned);
        cfg.noise = NoiseConfig {
            q_diag: f.q_diag.clone(),
            r1_diag: f.r1_diag.clone(),
            r2_diag: f.r2_diag.clone(),
            r3_diag: f.r3_diag.clone(),
            accel_threshold: f.accel_threshold,
            gated_variance: f.gated_variance,
        };
        cfg.leg = self.leg();
        cfg.bias_model = GyroBiasModel::with_tau(f.bias_tau);
        cfg.alpha = f.alpha;
        cfg.initial_bias_var = f.initial_bias_var;
        cfg.bias_convention = match f.bias_convention {
            BiasConventionConfig::Additive => BiasConvention::Additive,
            BiasConventionConfig::Subtractive => BiasConvention::Subtractive,
        };
        cfg.velocity_resync_period = f.velocity_resync_period;
        cfg.max_gap = f.max_gap;
        cfg
    }

    pub fn depth_params(&self) -> DepthFilterParams<f64> {
        DepthFilterParams {
            motion_var: self.depth.motion_var,
            gap_var: self.depth.gap_var,
        }
    }

    /// Camera optical center in NED.
    pub fn camera_position(&self) -> Vec3<f64> {
        self.camera.pose().position
    }
}
