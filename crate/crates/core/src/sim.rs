//! Synthetic two-link leg motion: ground truth, IMU streams and camera
//! marker observations.
//!
//! World frame is NED with the ground at `z = 0`, so heights are negative.
//! The subject walks along north; the camera sits to the west looking east,
//! perpendicular to the sagittal plane. Each sensor's x-axis points along its
//! segment toward the proximal joint, y east and z completing the triad
//! (north when standing).
//!
//! Noise comes from ChaCha8 seeded with `seed`; the IMU and camera draws use
//! separate ChaCha streams so one does not shift the other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::CameraModel;
use crate::ekf::LegModel;
use crate::imu::{EarthFields, ImuSample};
use crate::quat::{Frame, FrameRotation, Quaternion, Vec3};
use crate::vision::{Joint, MarkerObservation, RasterImage, Rgb8, MARKER_GREEN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("joint {joint} at t = {t} s is not in front of the camera (z = {z} m)")]
    BehindCamera { t: f64, joint: &'static str, z: f64 },
    #[error("invalid gait profile: {0}")]
    Profile(String),
    #[error("invalid noise settings: {0}")]
    Noise(String),
    #[error("sample rate {rate} Hz too low for cadence {cadence} Hz")]
    RateTooLow { rate: f64, cadence: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitKind {
    Walk,
    RunInPlace,
    Static,
}

/// Closed-form periodic gait. Angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitProfile {
    pub kind: GaitKind,
    /// Seconds.
    pub duration: f64,
    /// Stride frequency, Hz.
    pub cadence: f64,
    /// Hip flexion `offset + amplitude · sin(2π f t)`.
    pub hip_amplitude_deg: f64,
    pub hip_offset_deg: f64,
    /// Knee flexion raised cosine between 0 and `knee_max_deg`.
    pub knee_max_deg: f64,
    /// Phase lead of knee flexion over hip flexion, radians.
    pub knee_phase: f64,
    /// Out-of-plane sway amplitude about north.
    pub sway_deg: f64,
    /// Pelvis north excursion `A sin(2π t / T)`, meters.
    pub pelvis_amplitude: f64,
    /// Seconds.
    pub pelvis_period: f64,
    /// Vertical bounce amplitude at twice the cadence, meters.
    pub bounce: f64,
    /// Hip height above the straight-leg ankle position, meters.
    pub ankle_clearance: f64,
    /// Largest tolerated hyperextension, degrees.
    pub max_hyperextension_deg: f64,
}

impl GaitProfile {
    pub fn walk() -> Self {
        Self {
            kind: GaitKind::Walk,
            duration: 60.0,
            cadence: 0.9,
            // Kept small: the 0.2 m/s² gate must stay open in most steps.
            hip_amplitude_deg: 6.0,
            hip_offset_deg: 5.0,
            knee_max_deg: 14.0,
            knee_phase: 2.0,
            sway_deg: 3.0,
            pelvis_amplitude: 0.5,
            pelvis_period: 12.0,
            bounce: 0.0,
            ankle_clearance: 0.08,
            max_hyperextension_deg: 5.0,
        }
    }

    pub fn run_in_place() -> Self {
        Self {
            kind: GaitKind::RunInPlace,
            duration: 20.0,
            cadence: 2.5,
            hip_amplitude_deg: 25.0,
            hip_offset_deg: 25.0,
            knee_max_deg: 80.0,
            knee_phase: 1.2,
            sway_deg: 3.0,
            pelvis_amplitude: 0.0,
            pelvis_period: 12.0,
            bounce: 0.03,
            ankle_clearance: 0.08,
            max_hyperextension_deg: 5.0,
        }
    }

    pub fn standing(duration: f64) -> Self {
        Self {
            kind: GaitKind::Static,
            duration,
            cadence: 1.0,
            hip_amplitude_deg: 0.0,
            hip_offset_deg: 0.0,
            knee_max_deg: 0.0,
            knee_phase: 0.0,
            sway_deg: 0.0,
            pelvis_amplitude: 0.0,
            pelvis_period: 12.0,
            bounce: 0.0,
            ankle_clearance: 0.08,
            max_hyperextension_deg: 5.0,
        }
    }

    pub fn for_kind(kind: GaitKind) -> Self {
        match kind {
            GaitKind::Walk => Self::walk(),
            GaitKind::RunInPlace => Self::run_in_place(),
            GaitKind::Static => Self::standing(10.0),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: &str| Err(SimError::Profile(m.to_string()));
        if !(self.cadence > 0.0) {
            return err("cadence must be positive");
        }
        if !(self.duration > 0.0) {
            return err("duration must be positive");
        }
        if !(self.pelvis_period > 0.0) {
            return err("pelvis period must be positive");
        }
        // a negative peak would bend the knee backwards
        if self.knee_max_deg < -self.max_hyperextension_deg {
            return err("knee flexion exceeds the hyperextension limit");
        }
        let all = [
            self.hip_amplitude_deg,
            self.hip_offset_deg,
            self.knee_max_deg,
            self.knee_phase,
            self.sway_deg,
            self.pelvis_amplitude,
            self.bounce,
            self.ankle_clearance,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return err("non-finite parameter");
        }
        Ok(())
    }
}

/// Sensor noise and marker corruption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorNoiseSpec {
    pub gyro_sigma: f64,
    pub accel_sigma: f64,
    pub mag_sigma: f64,
    /// Stationary standard deviation of the gyro bias, rad/s.
    pub bias_init: f64,
    pub bias_tau: f64,
    pub marker_dropout_prob: f64,
    pub pixel_jitter_sigma: f64,
}

impl Default for SensorNoiseSpec {
    fn default() -> Self {
        Self {
            gyro_sigma: 0.01,
            accel_sigma: 0.05,
            mag_sigma: 0.01,
            bias_init: 0.01,
            bias_tau: 100.0,
            marker_dropout_prob: 0.02,
            pixel_jitter_sigma: 0.3,
        }
    }
}

impl SensorNoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            gyro_sigma: 0.0,
            accel_sigma: 0.0,
            mag_sigma: 0.0,
            bias_init: 0.0,
            bias_tau: 100.0,
            marker_dropout_prob: 0.0,
            pixel_jitter_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let v = [
            self.gyro_sigma,
            self.accel_sigma,
            self.mag_sigma,
            self.bias_init,
            self.pixel_jitter_sigma,
        ];
        if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(SimError::Noise("sigmas must be finite and >= 0".into()));
        }
        if !(self.bias_tau > 0.0) {
            return Err(SimError::Noise("bias_tau must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.marker_dropout_prob) {
            return Err(SimError::Noise("dropout probability outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Camera placement: orientation into NED and optical center in NED.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub to_ned: FrameRotation<f64>,
    pub position: Vec3<f64>,
}

impl CameraPose {
    /// Optical axis east, image rows down, `distance` meters west of the
    /// walkway at `height` meters.
    pub fn side_view(distance: f64, height: f64) -> Self {
        // camera x → −north, y → down, z → east: half turn about (0, 1, 1)
        let q = Quaternion::from_axis_angle(Vec3::new(0.0, 1.0, 1.0), std::f64::consts::PI);
        Self {
            to_ned: FrameRotation::new(Frame::Camera, Frame::Ned, q),
            position: Vec3::new(0.0, -distance, -height),
        }
    }

    pub fn ned_to_camera(&self, p: Vec3<f64>) -> Vec3<f64> {
        self.to_ned.q.rotate_inverse(p - self.position)
    }

    pub fn camera_to_ned(&self, p: Vec3<f64>) -> Vec3<f64> {
        self.to_ned.q.rotate(p) + self.position
    }
}

impl Default for CameraPose {
    fn default() -> Self {
        Self::side_view(2.5, 0.55)
    }
}

/// Ground truth at one instant. World vectors are NED; `omega` is in each
/// sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthStep {
    pub t: f64,
    /// hip, knee, ankle
    pub joints: [Vec3<f64>; 3],
    /// upper, lower: sensor to NED
    pub q: [Quaternion<f64>; 2],
    pub omega: [Vec3<f64>; 2],
    pub imu_position: [Vec3<f64>; 2],
    pub imu_velocity: [Vec3<f64>; 2],
    /// Kinematic acceleration of each IMU, NED.
    pub imu_acceleration: [Vec3<f64>; 2],
    pub knee_velocity: Vec3<f64>,
}

#[derive(Clone, Copy)]
struct Angle {
    v: f64,
    d: f64,
    dd: f64,
}

fn sine(amp: f64, w: f64, phase: f64, t: f64) -> Angle {
    let a = w * t + phase;
    Angle {
        v: amp * a.sin(),
        d: amp * w * a.cos(),
        dd: -amp * w * w * a.sin(),
    }
}

fn raised_cosine(peak: f64, w: f64, phase: f64, t: f64) -> Angle {
    let a = w * t + phase;
    let h = 0.5 * peak;
    Angle {
        v: h * (1.0 - a.cos()),
        d: h * w * a.sin(),
        dd: h * w * w * a.cos(),
    }
}

/// Standing sensor frame: x up, y east, z north.
fn standing_base() -> Quaternion<f64> {
    Quaternion::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), std::f64::consts::FRAC_PI_2)
}

/// Segment orientation `Rx(β) Ry(θ) R0` with world-frame ω and α.
fn segment_motion(beta: Angle, theta: Angle) -> (Quaternion<f64>, Vec3<f64>, Vec3<f64>) {
    let ex = Vec3::new(1.0, 0.0, 0.0);
    let ey = Vec3::new(0.0, 1.0, 0.0);
    let rx = Quaternion::from_axis_angle(ex, beta.v);
    let ry = Quaternion::from_axis_angle(ey, theta.v);
    let q = rx.multiply(ry).multiply(standing_base());
    let axis_y = rx.rotate(ey);
    let omega = ex * beta.d + axis_y * theta.d;
    let alpha = ex * beta.dd + axis_y * theta.dd + (ex * beta.d).cross(axis_y * theta.d);
    (q, omega, alpha)
}

/// Closed-form truth at time `t`.
pub fn truth_at(profile: &GaitProfile, leg: &LegModel<f64>, t: f64) -> TruthStep {
    let w = 2.0 * std::f64::consts::PI * profile.cadence;
    let rad = f64::to_radians;
    let hip = {
        let s = sine(rad(profile.hip_amplitude_deg), w, 0.0, t);
        Angle {
            v: s.v + rad(profile.hip_offset_deg),
            ..s
        }
    };
    let knee = raised_cosine(rad(profile.knee_max_deg), w, profile.knee_phase, t);
    let shank = Angle {
        v: hip.v - knee.v,
        d: hip.d - knee.d,
        dd: hip.dd - knee.dd,
    };
    let sway = sine(rad(profile.sway_deg), w, 0.5, t);

    let wp = 2.0 * std::f64::consts::PI / profile.pelvis_period;
    let px = sine(profile.pelvis_amplitude, wp, 0.0, t);
    let bounce = sine(profile.bounce, 2.0 * w, std::f64::consts::FRAC_PI_2, t);
    let height = leg.l_u + leg.l_l + profile.ankle_clearance;
    let hip_p = Vec3::new(px.v, 0.0, -height + bounce.v);
    let hip_v = Vec3::new(px.d, 0.0, bounce.d);
    let hip_a = Vec3::new(px.dd, 0.0, bounce.dd);

    let (qu, wu, au) = segment_motion(sway, hip);
    let (ql, wl, al) = segment_motion(sway, shank);

    let du = qu.rotate(Vec3::new(-leg.l_u, 0.0, 0.0));
    let dl = ql.rotate(Vec3::new(-leg.l_l, 0.0, 0.0));
    let knee_p = hip_p + du;
    let ankle_p = knee_p + dl;
    let knee_v = hip_v + wu.cross(du);
    let knee_a = hip_a + au.cross(du) + wu.cross(wu.cross(du));

    // IMU sits at −r along x from the knee
    let ru = qu.rotate(leg.lever(crate::ekf::Segment::Upper));
    let rl = ql.rotate(leg.lever(crate::ekf::Segment::Lower));
    let imu_u = knee_p - ru;
    let imu_l = knee_p - rl;
    let imu_u_v = knee_v - wu.cross(ru);
    let imu_l_v = knee_v - wl.cross(rl);
    let imu_u_a = knee_a - (au.cross(ru) + wu.cross(wu.cross(ru)));
    let imu_l_a = knee_a - (al.cross(rl) + wl.cross(wl.cross(rl)));

    TruthStep {
        t,
        joints: [hip_p, knee_p, ankle_p],
        q: [qu, ql],
        omega: [qu.rotate_inverse(wu), ql.rotate_inverse(wl)],
        imu_position: [imu_u, imu_l],
        imu_velocity: [imu_u_v, imu_l_v],
        imu_acceleration: [imu_u_a, imu_l_a],
        knee_velocity: knee_v,
    }
}

/// Truth sampled at `rate` Hz over the profile duration, `t = k / rate`.
pub fn generate_truth(profile: &GaitProfile, rate: f64, leg: &LegModel<f64>) -> Result<Vec<TruthStep>, SimError> {
    profile.validate()?;
    if !(rate >= 20.0 * profile.cadence) {
        return Err(SimError::RateTooLow {
            rate,
            cadence: profile.cadence,
        });
    }
    let n = (profile.duration * rate).round() as usize + 1;
    Ok((0..n).map(|k| truth_at(profile, leg, k as f64 / rate)).collect())
}

/// Two IMU streams plus the bias each gyro carried.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuStreams {
    pub upper: Vec<ImuSample<f64>>,
    pub lower: Vec<ImuSample<f64>>,
    pub bias: Vec<[Vec3<f64>; 2]>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, sigma: f64) -> Vec3<f64> {
    if sigma == 0.0 {
        return Vec3::zeros();
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

/// Sensor readings for a sampled truth track. The bias follows the exact
/// discretization of `ḃ = −b/τ + w` with stationary deviation `bias_init`.
pub fn synthesize_imu(
    truth: &[TruthStep],
    noise: &SensorNoiseSpec,
    fields: &EarthFields<f64>,
    seed: u64,
) -> Result<ImuStreams, SimError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut bias = [gaussian_vec(&mut rng, noise.bias_init), gaussian_vec(&mut rng, noise.bias_init)];
    let mut out = ImuStreams {
        upper: Vec::with_capacity(truth.len()),
        lower: Vec::with_capacity(truth.len()),
        bias: Vec::with_capacity(truth.len()),
    };
    let mut prev_t = truth.first().map_or(0.0, |s| s.t);
    for step in truth {
        let dt = step.t - prev_t;
        prev_t = step.t;
        if dt > 0.0 {
            let phi = (-dt / noise.bias_tau).exp();
            let sd = noise.bias_init * (1.0 - phi * phi).sqrt();
            for b in bias.iter_mut() {
                *b = *b * phi + gaussian_vec(&mut rng, sd);
            }
        }
        for k in 0..2 {
            let q = step.q[k];
            let gyro = step.omega[k] + bias[k] + gaussian_vec(&mut rng, noise.gyro_sigma);
            let accel =
                q.rotate_inverse(step.imu_acceleration[k] - fields.gravity) + gaussian_vec(&mut rng, noise.accel_sigma);
            let mag = q.rotate_inverse(fields.mag_field) + gaussian_vec(&mut rng, noise.mag_sigma);
            let s = ImuSample {
                t: step.t,
                gyro,
                accel,
                mag,
            };
            if k == 0 {
                out.upper.push(s);
            } else {
                out.lower.push(s);
            }
        }
        out.bias.push(bias);
    }
    Ok(out)
}

/// Camera frame times `k / rate` within `[0, duration]`.
pub fn camera_times(duration: f64, rate: f64) -> Vec<f64> {
    let n = (duration * rate).floor() as usize + 1;
    (0..n).map(|k| k as f64 / rate).collect()
}

/// Ideal marker appearance: projected center and square side in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerImage {
    pub center: (f64, f64),
    pub side_px: f64,
    pub visible: bool,
}

/// Per-frame marker images of the three joints, jitter and dropout applied.
pub fn marker_images(
    truth: &[TruthStep],
    cam: &CameraModel<f64>,
    pose: &CameraPose,
    noise: &SensorNoiseSpec,
    seed: u64,
) -> Result<Vec<[MarkerImage; 3]>, SimError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let drop = Bernoulli::new(noise.marker_dropout_prob).map_err(|e| SimError::Noise(e.to_string()))?;
    let jitter = Normal::new(0.0, noise.pixel_jitter_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut out = Vec::with_capacity(truth.len());
    for step in truth {
        let mut frame = [MarkerImage {
            center: (0.0, 0.0),
            side_px: 0.0,
            visible: false,
        }; 3];
        for j in Joint::ALL {
            let pc = pose.ned_to_camera(step.joints[j.index()]);
            if !(pc.z > 0.5) {
                return Err(SimError::BehindCamera {
                    t: step.t,
                    joint: j.name(),
                    z: pc.z,
                });
            }
            let (u, v) = cam.project(pc);
            let mut side = cam.marker_side_px(pc.z);
            let (mut du, mut dv) = (0.0, 0.0);
            if noise.pixel_jitter_sigma > 0.0 {
                du = jitter.sample(&mut rng);
                dv = jitter.sample(&mut rng);
                side = (side + jitter.sample(&mut rng)).max(1.0);
            }
            let dropped = noise.marker_dropout_prob > 0.0 && drop.sample(&mut rng);
            let center = (u + du, v + dv);
            frame[j.index()] = MarkerImage {
                center,
                side_px: side,
                visible: !dropped && cam.contains(center),
            };
        }
        out.push(frame);
    }
    Ok(out)
}

/// Blob-mode observations: centroid and `side²` area per visible marker.
pub fn blob_observations(t: &[f64], images: &[[MarkerImage; 3]]) -> Vec<[MarkerObservation; 3]> {
    t.iter()
        .zip(images)
        .map(|(&t, frame)| {
            Joint::ALL.map(|j| {
                let m = frame[j.index()];
                if m.visible {
                    MarkerObservation {
                        t,
                        joint: j,
                        pixel: m.center,
                        area_px: m.side_px * m.side_px,
                        valid: true,
                    }
                } else {
                    MarkerObservation::missing(t, j)
                }
            })
        })
        .collect()
}

pub const BACKGROUND: Rgb8 = [128, 128, 128];

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Renders antialiased axis-aligned marker squares over a uniform gray
/// background. Pixel `(x, y)` covers `[x, x+1) × [y, y+1)`, so a pixel
/// center sits at `x + 0.5`; marker centers use the same convention as the
/// projection, where integer coordinates are pixel centers.
pub fn render_frame(cam: &CameraModel<f64>, markers: &[MarkerImage; 3]) -> RasterImage {
    let mut img = RasterImage::filled(cam.width, cam.height, BACKGROUND);
    for m in markers.iter().filter(|m| m.visible) {
        let h = 0.5 * m.side_px;
        // shift by +0.5 so pixel k spans [k − 0.5, k + 0.5) in image coords
        let (x0, x1) = (m.center.0 - h + 0.5, m.center.0 + h + 0.5);
        let (y0, y1) = (m.center.1 - h + 0.5, m.center.1 + h + 0.5);
        let xs = (x0.floor().max(0.0) as usize)..=(x1.ceil().min(cam.width as f64 - 1.0) as usize);
        let ys = (y0.floor().max(0.0) as usize)..=(y1.ceil().min(cam.height as f64 - 1.0) as usize);
        for y in ys {
            let cy = overlap(y as f64, y as f64 + 1.0, y0, y1);
            if cy == 0.0 {
                continue;
            }
            for x in xs.clone() {
                let c = cy * overlap(x as f64, x as f64 + 1.0, x0, x1);
                if c == 0.0 {
                    continue;
                }
                let old = img.get(x, y);
                let mut px = [0u8; 3];
                for ch in 0..3 {
                    let v = f64::from(old[ch]) * (1.0 - c) + f64::from(MARKER_GREEN[ch]) * c;
                    px[ch] = v.round().clamp(0.0, 255.0) as u8;
                }
                img.set(x, y, px);
            }
        }
    }
    img
}

/// Everything one scenario produces.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub profile: GaitProfile,
    pub leg: LegModel<f64>,
    pub imu_rate: f64,
    pub camera_rate: f64,
    pub camera: CameraModel<f64>,
    pub pose: CameraPose,
    pub noise: SensorNoiseSpec,
    pub fields: EarthFields<f64>,
    pub seed: u64,
}

impl Scenario {
    pub fn new(profile: GaitProfile, seed: u64) -> Self {
        Self {
            profile,
            leg: LegModel::default(),
            imu_rate: 100.0,
            camera_rate: 30.0,
            camera: CameraModel::default_vga(),
            pose: CameraPose::default(),
            noise: SensorNoiseSpec::default(),
            fields: EarthFields::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub truth: Vec<TruthStep>,
    pub imu: ImuStreams,
    pub camera_truth: Vec<TruthStep>,
    pub markers: Vec<[MarkerImage; 3]>,
    pub observations: Vec<[MarkerObservation; 3]>,
}

pub fn simulate(s: &Scenario) -> Result<SimOutput, SimError> {
    let truth = generate_truth(&s.profile, s.imu_rate, &s.leg)?;
    let imu = synthesize_imu(&truth, &s.noise, &s.fields, s.seed)?;
    let times = camera_times(s.profile.duration, s.camera_rate);
    let camera_truth: Vec<TruthStep> = times.iter().map(|&t| truth_at(&s.profile, &s.leg, t)).collect();
    let markers = marker_images(&camera_truth, &s.camera, &s.pose, &s.noise, s.seed)?;
    let observations = blob_observations(&times, &markers);
    Ok(SimOutput {
        truth,
        imu,
        camera_truth,
        markers,
        observations,
    })
}
