//! Camera processing, the three estimator variants and RMSE evaluation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::{
    backproject, depth_from_area, depth_from_distance, CameraModel, DepthEstimate, DepthFilter, DepthFilterParams,
    DepthSource,
};
use crate::ekf::{chain_joints, ekf_run, CameraJoints, FilterConfig, FilterError, FilterHealth, LegModel};
use crate::imu::ImuSample;
use crate::quat::{compose_frames, Frame, FrameRotation, QuatError, Quaternion, Vec3};
use crate::sim::CameraPose;
use crate::vision::{detect_markers, DetectorParams, Joint, JointAssociator, MarkerObservation, RasterImage};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Frame(#[from] QuatError),
    #[error("track length mismatch: {est} estimate rows vs {truth} truth rows")]
    LengthMismatch { est: usize, truth: usize },
    #[error("no usable hip position for t = {0}")]
    NoHip(f64),
    #[error("empty track")]
    Empty,
}

/// How missing markers are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Image-plane coordinates zeroed, depth the mean of the other joints'
    /// depths. A frame with no valid joint stays unfilled.
    #[default]
    CenterFill,
    /// Per-joint linear interpolation in time between valid frames.
    LinearTime,
}

/// One camera frame of joint positions in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraFrame3d {
    pub t: f64,
    pub joints: [Vec3<f64>; 3],
    /// Observed this frame.
    pub valid: [bool; 3],
    /// Position came from the missing-marker policy.
    pub filled: [bool; 3],
}

impl CameraFrame3d {
    /// Valid joints only, for the filter's camera update.
    pub fn to_filter_input(&self) -> CameraJoints<f64> {
        CameraJoints {
            t: self.t,
            joints: [0, 1, 2].map(|j| self.valid[j].then_some(self.joints[j])),
        }
    }
}

/// Distance-based depth per joint: hip from the hip–knee pair, ankle from
/// knee–ankle, knee from the mean of the two.
pub fn distance_depths(
    obs: &[MarkerObservation; 3],
    cam: &CameraModel<f64>,
    leg: &LegModel<f64>,
) -> [Option<DepthEstimate<f64>>; 3] {
    let pair = |a: usize, b: usize, len: f64| {
        if obs[a].valid && obs[b].valid {
            depth_from_distance(obs[a].pixel, obs[b].pixel, len, cam).ok()
        } else {
            None
        }
    };
    let upper = pair(0, 1, leg.l_u);
    let lower = pair(1, 2, leg.l_l);
    let knee = match (upper, lower) {
        (Some(a), Some(b)) => Some(DepthEstimate {
            z: 0.5 * (a.z + b.z),
            var: 0.25 * (a.var + b.var),
            source: DepthSource::Distance,
        }),
        (a, b) => a.or(b),
    };
    [upper, knee, lower]
}

/// Per-frame fused depth for each joint, `None` until a joint's filter has
/// seen any estimate or when neither source was usable this frame.
pub fn estimate_depths(
    observations: &[[MarkerObservation; 3]],
    cam: &CameraModel<f64>,
    leg: &LegModel<f64>,
    params: DepthFilterParams<f64>,
) -> Vec<[Option<DepthEstimate<f64>>; 3]> {
    let mut filters = [0; 3].map(|_| DepthFilter::new(params));
    observations
        .iter()
        .map(|obs| {
            let dist = distance_depths(obs, cam, leg);
            let mut out = [None; 3];
            for j in 0..3 {
                let area = if obs[j].valid {
                    depth_from_area(obs[j].area_px, cam).ok()
                } else {
                    None
                };
                let d = if obs[j].valid { dist[j] } else { None };
                let fused = filters[j].step(d, area);
                if fused.valid {
                    out[j] = fused.estimate;
                }
            }
            out
        })
        .collect()
}

/// Back-projects observed joints; joints without a depth are marked invalid.
pub fn joints_3d(
    observations: &[[MarkerObservation; 3]],
    depths: &[[Option<DepthEstimate<f64>>; 3]],
    cam: &CameraModel<f64>,
) -> Vec<CameraFrame3d> {
    observations
        .iter()
        .zip(depths)
        .map(|(obs, dep)| {
            let mut f = CameraFrame3d {
                t: obs[0].t,
                joints: [Vec3::zeros(); 3],
                valid: [false; 3],
                filled: [false; 3],
            };
            for j in 0..3 {
                if let (true, Some(d)) = (obs[j].valid, dep[j]) {
                    f.joints[j] = backproject(obs[j].pixel, d.z, cam);
                    f.valid[j] = true;
                }
            }
            f
        })
        .collect()
}

/// Fills invalid joints according to `policy`. Valid joints pass through.
pub fn interpolate_missing(frames: &[CameraFrame3d], policy: MissingPolicy) -> Vec<CameraFrame3d> {
    match policy {
        MissingPolicy::CenterFill => frames
            .iter()
            .map(|f| {
                let mut out = *f;
                let depths: Vec<f64> = (0..3).filter(|&j| f.valid[j]).map(|j| f.joints[j].z).collect();
                // nothing seen: no depth to borrow, leave the frame empty
                if depths.is_empty() {
                    return out;
                }
                let mean = depths.iter().sum::<f64>() / depths.len() as f64;
                for j in 0..3 {
                    if !f.valid[j] {
                        out.joints[j] = Vec3::new(0.0, 0.0, mean);
                        out.filled[j] = true;
                    }
                }
                out
            })
            .collect(),
        MissingPolicy::LinearTime => {
            let mut out = frames.to_vec();
            for j in 0..3 {
                let valid: Vec<usize> = (0..frames.len()).filter(|&k| frames[k].valid[j]).collect();
                for k in 0..frames.len() {
                    if frames[k].valid[j] {
                        continue;
                    }
                    let next = valid.partition_point(|&v| v < k);
                    let before = next.checked_sub(1).map(|i| valid[i]);
                    let after = valid.get(next).copied();
                    let p = match (before, after) {
                        (Some(a), Some(b)) => {
                            let (ta, tb) = (frames[a].t, frames[b].t);
                            let s = (frames[k].t - ta) / (tb - ta);
                            frames[a].joints[j] + (frames[b].joints[j] - frames[a].joints[j]) * s
                        }
                        (Some(a), None) => frames[a].joints[j],
                        (None, Some(b)) => frames[b].joints[j],
                        (None, None) => continue,
                    };
                    out[k].joints[j] = p;
                    out[k].filled[j] = true;
                }
            }
            out
        }
    }
}

/// Depth, back-projection and the missing-marker policy in one pass.
pub fn camera_frames(
    observations: &[[MarkerObservation; 3]],
    cam: &CameraModel<f64>,
    leg: &LegModel<f64>,
    params: DepthFilterParams<f64>,
    policy: MissingPolicy,
) -> Vec<CameraFrame3d> {
    let depths = estimate_depths(observations, cam, leg, params);
    interpolate_missing(&joints_3d(observations, &depths, cam), policy)
}

/// Marker detection plus frame-to-frame joint association.
pub struct FrameTracker {
    params: DetectorParams,
    associator: JointAssociator,
}

impl FrameTracker {
    pub fn new(params: DetectorParams, max_jump: f64) -> Self {
        Self {
            params,
            associator: JointAssociator::new(max_jump),
        }
    }

    pub fn observe(&mut self, t: f64, frame: &RasterImage) -> [MarkerObservation; 3] {
        let blobs = detect_markers(frame, &self.params, 3);
        self.associator.step(t, &blobs)
    }
}

/// Time-indexed positions with linear interpolation and end clamping.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Track {
    samples: Vec<(f64, Vec3<f64>)>,
}

impl Track {
    /// `samples` must be sorted by time.
    pub fn new(samples: Vec<(f64, Vec3<f64>)>) -> Self {
        debug_assert!(samples.windows(2).all(|w| w[0].0 <= w[1].0));
        Self { samples }
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn at(&self, t: f64) -> Option<Vec3<f64>> {
        let s = &self.samples;
        let first = s.first()?;
        let i = s.partition_point(|(ts, _)| *ts <= t);
        if i == 0 {
            return Some(first.1);
        }
        if i == s.len() {
            return Some(s[i - 1].1);
        }
        let (t0, p0) = s[i - 1];
        let (t1, p1) = s[i];
        if t1 <= t0 {
            return Some(p1);
        }
        Some(p0 + (p1 - p0) * ((t - t0) / (t1 - t0)))
    }
}

/// One output row of an estimator, NED.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRow {
    pub t: f64,
    pub joints: [Vec3<f64>; 3],
    pub q: [Quaternion<f64>; 2],
    pub bias: [Vec3<f64>; 2],
    pub gated: [bool; 2],
}

/// Which estimator produced a track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ImuOnly,
    CameraOnly,
    Fused,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::ImuOnly, Variant::CameraOnly, Variant::Fused];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ImuOnly => "imu_only",
            Variant::CameraOnly => "camera_only",
            Variant::Fused => "fused",
        }
    }
}

/// Inputs shared by all three estimators.
#[derive(Debug, Clone)]
pub struct TrackingInputs<'a> {
    pub imu_upper: &'a [ImuSample<f64>],
    pub imu_lower: &'a [ImuSample<f64>],
    /// Camera frames after the missing-marker policy.
    pub camera: &'a [CameraFrame3d],
    pub pose: CameraPose,
    /// External hip positions (NED) for the IMU-only variant.
    pub reference_hip: Option<&'a Track>,
}

/// Hip track in NED built from frames where the hip marker was seen.
pub fn camera_hip_track(frames: &[CameraFrame3d], pose: &CameraPose) -> Track {
    Track::new(
        frames
            .iter()
            .filter(|f| f.valid[0])
            .map(|f| (f.t, pose.camera_to_ned(f.joints[0])))
            .collect(),
    )
}

fn filter_rows(
    inputs: &TrackingInputs<'_>,
    cfg: &FilterConfig<f64>,
    hip: &Track,
) -> Result<(Vec<EstimateRow>, FilterHealth), PipelineError> {
    let camera: Vec<CameraJoints<f64>> = if cfg.use_measurement[2] {
        inputs.camera.iter().map(CameraFrame3d::to_filter_input).collect()
    } else {
        Vec::new()
    };
    let (steps, health) = ekf_run(inputs.imu_upper, inputs.imu_lower, &camera, cfg)?;
    let rows = steps
        .iter()
        .map(|s| {
            let h = hip.at(s.t).ok_or(PipelineError::NoHip(s.t))?;
            Ok(EstimateRow {
                t: s.t,
                joints: chain_joints(h, &s.state, &cfg.leg),
                q: [s.state.upper.q, s.state.lower.q],
                bias: [s.state.upper.bias, s.state.lower.bias],
                gated: s.gated,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok((rows, health))
}

/// Measurements 1 and 2 only, hip from the external reference.
pub fn run_imu_only(
    inputs: &TrackingInputs<'_>,
    cfg: &FilterConfig<f64>,
) -> Result<(Vec<EstimateRow>, FilterHealth), PipelineError> {
    let mut cfg = cfg.clone();
    cfg.use_measurement[2] = false;
    let hip = inputs.reference_hip.cloned().unwrap_or_default();
    filter_rows(inputs, &cfg, &hip)
}

/// All three measurements, hip from the camera.
pub fn run_fused(
    inputs: &TrackingInputs<'_>,
    cfg: &FilterConfig<f64>,
) -> Result<(Vec<EstimateRow>, FilterHealth), PipelineError> {
    let hip = camera_hip_track(inputs.camera, &inputs.pose);
    filter_rows(inputs, cfg, &hip)
}

/// Camera joints interpolated to the IMU timestamps.
pub fn run_camera_only(inputs: &TrackingInputs<'_>) -> Result<Vec<EstimateRow>, PipelineError> {
    if inputs.camera.is_empty() {
        return Err(PipelineError::Empty);
    }
    let tracks: Vec<Track> = (0..3)
        .map(|j| {
            Track::new(
                inputs
                    .camera
                    .iter()
                    .filter(|f| f.valid[j] || f.filled[j])
                    .map(|f| (f.t, inputs.pose.camera_to_ned(f.joints[j])))
                    .collect(),
            )
        })
        .collect();
    inputs
        .imu_upper
        .iter()
        .map(|s| {
            let mut joints = [Vec3::zeros(); 3];
            for j in 0..3 {
                joints[j] = tracks[j].at(s.t).ok_or(PipelineError::Empty)?;
            }
            Ok(EstimateRow {
                t: s.t,
                joints,
                q: [Quaternion::identity(); 2],
                bias: [Vec3::zeros(); 2],
                gated: [false; 2],
            })
        })
        .collect()
}

/// Ground truth positions at one instant, NED.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub t: f64,
    pub joints: [Vec3<f64>; 3],
}

/// Per-joint, per-axis RMSE in centimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    /// `[joint][axis]`
    pub axis_cm: [[f64; 3]; 3],
    pub euclidean_cm: [f64; 3],
    /// All joints pooled.
    pub overall_cm: f64,
    pub samples: usize,
}

/// Nearest truth row for each estimate row; both tracks are mapped into
/// the reference frame before differencing.
pub fn evaluate(
    est: &[EstimateRow],
    truth: &[TruthRow],
    ned_to_reference: FrameRotation<f64>,
    max_skew: f64,
) -> Result<RmseReport, PipelineError> {
    if est.is_empty() || truth.is_empty() {
        return Err(PipelineError::Empty);
    }
    let (ne, nt) = (est.len() as f64, truth.len() as f64);
    if (ne - nt).abs() > 0.01 * nt {
        return Err(PipelineError::LengthMismatch {
            est: est.len(),
            truth: truth.len(),
        });
    }
    // both tracks share the NED frame; route through it explicitly
    let to_ref = compose_frames(ned_to_reference, FrameRotation::identity(Frame::Ned, Frame::Ned))?;
    let mut sq = [[0.0; 3]; 3];
    let mut n = 0usize;
    for row in est {
        let i = truth.partition_point(|r| r.t < row.t);
        let cand = [i.checked_sub(1), (i < truth.len()).then_some(i)];
        let Some(k) = cand
            .iter()
            .flatten()
            .copied()
            .min_by(|&a, &b| (truth[a].t - row.t).abs().total_cmp(&(truth[b].t - row.t).abs()))
        else {
            continue;
        };
        if (truth[k].t - row.t).abs() > max_skew {
            continue;
        }
        for j in 0..3 {
            let e = to_ref.apply(row.joints[j]) - to_ref.apply(truth[k].joints[j]);
            for a in 0..3 {
                sq[j][a] += e[a] * e[a];
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(PipelineError::Empty);
    }
    let mut axis_cm = [[0.0; 3]; 3];
    let mut euclidean_cm = [0.0; 3];
    let mut total = 0.0;
    for j in 0..3 {
        for a in 0..3 {
            axis_cm[j][a] = 100.0 * (sq[j][a] / n as f64).sqrt();
        }
        let s: f64 = sq[j].iter().sum();
        euclidean_cm[j] = 100.0 * (s / n as f64).sqrt();
        total += s;
    }
    Ok(RmseReport {
        axis_cm,
        euclidean_cm,
        overall_cm: 100.0 * (total / (3 * n) as f64).sqrt(),
        samples: n,
    })
}

/// `100 · (new − base) / base`.
pub fn percent_change(new: f64, base: f64) -> f64 {
    if base == 0.0 {
        return 0.0;
    }
    100.0 * (new - base) / base
}

/// Z-up reference frame used for reporting: x north, y west, z up.
pub fn default_reference() -> FrameRotation<f64> {
    FrameRotation::new(
        Frame::Ned,
        Frame::Reference,
        Quaternion::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), std::f64::consts::PI),
    )
}

pub fn joint_label(j: usize) -> &'static str {
    Joint::ALL[j].name()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn frame(t: f64, z: [f64; 3], valid: [bool; 3]) -> CameraFrame3d {
        CameraFrame3d {
            t,
            joints: z.map(|z| Vec3::new(0.1, 0.2, z)),
            valid,
            filled: [false; 3],
        }
    }

    #[test]
    fn center_fill_knee_gap() {
        let f = frame(0.0, [2.0, 9.0, 3.0], [true, false, true]);
        let out = interpolate_missing(&[f], MissingPolicy::CenterFill);
        assert_eq!(out[0].joints[1], Vec3::new(0.0, 0.0, 2.5));
        assert!(out[0].filled[1]);
        assert_eq!(out[0].joints[0], f.joints[0]);
    }

    #[test]
    fn empty_frame_stays_unfilled() {
        let f = frame(0.0, [2.0, 2.0, 2.0], [false; 3]);
        for p in [MissingPolicy::CenterFill, MissingPolicy::LinearTime] {
            let out = interpolate_missing(&[f], p);
            assert_eq!(out[0].filled, [false; 3]);
        }
    }

    #[test]
    fn all_valid_passes_through() {
        let fs = vec![frame(0.0, [2.0, 2.1, 2.2], [true; 3]), frame(0.1, [2.0, 2.1, 2.2], [true; 3])];
        for p in [MissingPolicy::CenterFill, MissingPolicy::LinearTime] {
            assert_eq!(interpolate_missing(&fs, p), fs);
        }
    }

    #[test]
    fn linear_policy_midpoint() {
        let fs = vec![
            frame(0.0, [2.0; 3], [true; 3]),
            frame(0.1, [0.0; 3], [true, false, true]),
            frame(0.2, [3.0; 3], [true; 3]),
        ];
        let out = interpolate_missing(&fs, MissingPolicy::LinearTime);
        assert_abs_diff_eq!(out[1].joints[1].z, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn track_interpolation_and_clamping() {
        let tr = Track::new(vec![(0.0, Vec3::zeros()), (1.0, Vec3::new(2.0, 0.0, 0.0))]);
        assert_eq!(tr.at(-1.0), Some(Vec3::zeros()));
        assert_eq!(tr.at(0.25).unwrap().x, 0.5);
        assert_eq!(tr.at(5.0).unwrap().x, 2.0);
        assert_eq!(Track::default().at(0.0), None);
    }

    fn rows(offset: Vec3<f64>) -> (Vec<EstimateRow>, Vec<TruthRow>) {
        let truth: Vec<TruthRow> = (0..100)
            .map(|k| TruthRow {
                t: k as f64 * 0.01,
                joints: [Vec3::new(k as f64 * 0.01, 0.0, -0.9), Vec3::zeros(), Vec3::new(0.1, 0.2, 0.3)],
            })
            .collect();
        let est = truth
            .iter()
            .map(|r| EstimateRow {
                t: r.t,
                joints: r.joints.map(|p| p + offset),
                q: [Quaternion::identity(); 2],
                bias: [Vec3::zeros(); 2],
                gated: [false; 2],
            })
            .collect();
        (est, truth)
    }

    #[test]
    fn identical_tracks_have_zero_error() {
        let (e, t) = rows(Vec3::zeros());
        let r = evaluate(&e, &t, default_reference(), 0.005).unwrap();
        assert_eq!(r.overall_cm, 0.0);
    }

    #[test]
    fn constant_offset_one_centimeter() {
        let (e, t) = rows(Vec3::new(0.01, 0.0, 0.0));
        let r = evaluate(&e, &t, default_reference(), 0.005).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(r.axis_cm[j][0], 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(r.euclidean_cm[j], 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let (mut e, t) = rows(Vec3::zeros());
        e.truncate(90);
        assert!(matches!(
            evaluate(&e, &t, default_reference(), 0.005),
            Err(PipelineError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn percent_change_sign() {
        assert_abs_diff_eq!(percent_change(7.0, 10.0), -30.0, epsilon = 1e-12);
    }
}
