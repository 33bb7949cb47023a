//! Leg motion tracking by fusing two IMUs with single-camera marker tracks.

pub mod config;
pub mod depth;
pub mod ekf;
pub mod imu;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod quat;
pub mod scalar;
pub mod sim;
pub mod vision;

pub use scalar::Real;

/// Double-precision aliases used by the pipeline and CLI.
pub type Vec3 = quat::Vec3<f64>;
pub type Quat = quat::Quaternion<f64>;
pub type ImuSample = imu::ImuSample<f64>;
pub type FusionState = ekf::FusionState<f64>;
pub type FilterConfig = ekf::FilterConfig<f64>;
pub type FusionFilter = ekf::FusionFilter<f64>;
pub type CameraModel = depth::CameraModel<f64>;

/// Single-precision aliases for embedded targets.
pub type Vec3f = quat::Vec3<f32>;
pub type Quatf = quat::Quaternion<f32>;
pub type FusionStatef = ekf::FusionState<f32>;
pub type FusionFilterf = ekf::FusionFilter<f32>;
