//! Hybrid extended Kalman filter over the two-segment leg state.
//!
//! State layout (20 scalars): `[ω_u, b_u, q_u, ω_l, b_l, q_l]`, where each
//! `q` maps its sensor frame into NED, `ω` is the true sensor-frame angular
//! rate and `b` the gyro bias. Prediction integrates the continuous model
//! and the covariance ODE `Ṗ = FP + PFᵀ + LQLᵀ` with RK4; three discrete
//! measurement updates are applied in sequence:
//!
//! 1. gyro rates and gradient-descent orientations (gated per segment when
//!    the accelerometer sees more than gravity),
//! 2. the knee-velocity constraint between the two segments,
//! 3. camera segment vectors, when a camera frame is due.

use thiserror::Error;

use crate::imu::{
    acceleration_gate, bias_rate, fixed_reference_objective, gradient_descent_orientation, quat_rate_from_gyro,
    EarthFields, GyroBiasModel, ImuSample,
};
use crate::linalg::Matrix;
use crate::quat::{Frame, FrameRotation, Quaternion, Vec3};
use crate::scalar::{lit, Real};

pub const STATE_DIM: usize = 20;
pub const SEGMENT_DIM: usize = 10;
const OMEGA: usize = 0;
const BIAS: usize = 3;
const QUAT: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("covariance lost positive semidefiniteness (min eigenvalue {0:e})")]
    Divergence(f64),
    #[error("non-finite filter state at t = {0}")]
    NonFinite(f64),
    #[error("stream discontinuity: gap of {gap} s at t = {t}")]
    StreamDiscontinuity { t: f64, gap: f64 },
    #[error("IMU streams are not aligned: {0}")]
    Misaligned(String),
    #[error("invalid time step {0}")]
    BadTimeStep(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty input stream")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Upper,
    Lower,
}

impl Segment {
    pub const BOTH: [Segment; 2] = [Segment::Upper, Segment::Lower];

    #[inline]
    pub fn offset(self) -> usize {
        match self {
            Segment::Upper => 0,
            Segment::Lower => SEGMENT_DIM,
        }
    }

    pub fn frame(self) -> Frame {
        match self {
            Segment::Upper => Frame::SensorUpper,
            Segment::Lower => Frame::SensorLower,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentState<T> {
    pub omega: Vec3<T>,
    pub bias: Vec3<T>,
    pub q: Quaternion<T>,
}

impl<T: Real> Default for SegmentState<T> {
    fn default() -> Self {
        Self {
            omega: Vec3::zeros(),
            bias: Vec3::zeros(),
            q: Quaternion::identity(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionState<T> {
    pub upper: SegmentState<T>,
    pub lower: SegmentState<T>,
}

impl<T: Real> Default for FusionState<T> {
    fn default() -> Self {
        Self {
            upper: SegmentState::default(),
            lower: SegmentState::default(),
        }
    }
}

impl<T: Real> FusionState<T> {
    pub fn segment(&self, s: Segment) -> &SegmentState<T> {
        match s {
            Segment::Upper => &self.upper,
            Segment::Lower => &self.lower,
        }
    }

    pub fn segment_mut(&mut self, s: Segment) -> &mut SegmentState<T> {
        match s {
            Segment::Upper => &mut self.upper,
            Segment::Lower => &mut self.lower,
        }
    }

    pub fn to_vec(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(STATE_DIM);
        for s in [&self.upper, &self.lower] {
            v.extend_from_slice(&s.omega.to_array());
            v.extend_from_slice(&s.bias.to_array());
            v.extend_from_slice(&s.q.to_array());
        }
        v
    }

    /// Panics unless `v.len() == 20`.
    pub fn from_slice(v: &[T]) -> Self {
        assert_eq!(v.len(), STATE_DIM, "state vector length");
        let seg = |o: usize| SegmentState {
            omega: Vec3::new(v[o], v[o + 1], v[o + 2]),
            bias: Vec3::new(v[o + 3], v[o + 4], v[o + 5]),
            q: Quaternion::new(v[o + 6], v[o + 7], v[o + 8], v[o + 9]),
        };
        Self {
            upper: seg(0),
            lower: seg(SEGMENT_DIM),
        }
    }

    /// Scales both quaternions to unit norm, keeping their sign.
    pub fn renormalize(&mut self) {
        self.upper.q = self.upper.q.unit();
        self.lower.q = self.lower.q.unit();
    }

    pub fn max_quat_norm_error(&self) -> T {
        (self.upper.q.norm() - T::one())
            .abs()
            .max((self.lower.q.norm() - T::one()).abs())
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// How the gyro bias enters the gyro measurement model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasConvention {
    /// measured = ω + b
    Additive,
    /// measured = ω − b
    Subtractive,
}

impl BiasConvention {
    fn sign<T: Real>(self) -> T {
        match self {
            BiasConvention::Additive => T::one(),
            BiasConvention::Subtractive => -T::one(),
        }
    }
}

/// Process and measurement noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig<T> {
    /// Spectral densities of the 20 process-noise inputs, aligned with the
    /// state layout. ω rows drive a random walk on ω; bias rows are the `W`
    /// input of the bias model (scaled by `T` in `L`); quaternion rows are
    /// unused.
    pub q_diag: Vec<T>,
    /// Gyro and orientation measurement variances, `[ω_u, q_u, ω_l, q_l]`.
    pub r1_diag: Vec<T>,
    /// Knee-velocity constraint variances, (m/s)².
    pub r2_diag: Vec<T>,
    /// Camera segment-vector variances, m².
    pub r3_diag: Vec<T>,
    /// Specific-force gate threshold, m/s².
    pub accel_threshold: T,
    /// Variance assigned to suppressed rows. Rows at or above it are dropped.
    pub gated_variance: T,
}

impl<T: Real> Default for NoiseConfig<T> {
    fn default() -> Self {
        let mut q = vec![T::zero(); STATE_DIM];
        for seg in Segment::BOTH {
            for i in 0..3 {
                q[seg.offset() + OMEGA + i] = lit(0.045);
                q[seg.offset() + BIAS + i] = lit(0.045);
            }
        }
        let r1 = [
            0.134, 0.167, 0.035, 0.005, 0.007, 0.002, 0.019, 0.185, 0.029, 0.057, 0.014, 0.004, 0.014, 0.004,
        ]
        .iter()
        .map(|&v| lit::<T>(v * 1e-3))
        .collect();
        Self {
            q_diag: q,
            r1_diag: r1,
            r2_diag: vec![lit(1e-4); 3],
            r3_diag: vec![lit(1e-8); 6],
            accel_threshold: lit(0.2),
            gated_variance: lit(1e6),
        }
    }
}

impl<T: Real> NoiseConfig<T> {
    pub fn validate(&self) -> Result<(), FilterError> {
        let check = |name: &str, v: &[T], n: usize| {
            if v.len() != n {
                return Err(FilterError::Config(format!("{name} needs {n} entries, got {}", v.len())));
            }
            if v.iter().any(|x| !(*x >= T::zero()) || !x.is_finite()) {
                return Err(FilterError::Config(format!("{name} entries must be finite and >= 0")));
            }
            Ok(())
        };
        check("q_diag", &self.q_diag, STATE_DIM)?;
        check("r1_diag", &self.r1_diag, 14)?;
        check("r2_diag", &self.r2_diag, 3)?;
        check("r3_diag", &self.r3_diag, 6)?;
        if !(self.gated_variance > T::zero()) {
            return Err(FilterError::Config("gated_variance must be positive".into()));
        }
        Ok(())
    }
}

/// Segment geometry.
///
/// Each sensor's x-axis runs along its segment from the distal joint toward
/// the proximal one, so `knee − hip = q_u ⊗ (−l_u, 0, 0) ⊗ q_u*`. The lever
/// arms are the signed x-coordinates of the knee in each sensor frame: an
/// upper-leg IMU sits above the knee (`r_u < 0`), a lower-leg IMU below it
/// (`r_l > 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegModel<T> {
    pub l_u: T,
    pub l_l: T,
    pub r_u: T,
    pub r_l: T,
}

impl<T: Real> Default for LegModel<T> {
    fn default() -> Self {
        Self::mid_segment(lit(0.42), lit(0.40))
    }
}

impl<T: Real> LegModel<T> {
    /// IMUs at the middle of each segment.
    pub fn mid_segment(l_u: T, l_l: T) -> Self {
        let half: T = lit(0.5);
        Self {
            l_u,
            l_l,
            r_u: -l_u * half,
            r_l: l_l * half,
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.l_u > T::zero() && self.l_l > T::zero()) {
            return Err(FilterError::Config("segment lengths must be positive".into()));
        }
        if self.r_u.abs() > self.l_u || self.r_l.abs() > self.l_l {
            return Err(FilterError::Config("lever arm longer than its segment".into()));
        }
        Ok(())
    }

    pub fn length(&self, s: Segment) -> T {
        match s {
            Segment::Upper => self.l_u,
            Segment::Lower => self.l_l,
        }
    }

    pub fn lever(&self, s: Segment) -> Vec3<T> {
        let r = match s {
            Segment::Upper => self.r_u,
            Segment::Lower => self.r_l,
        };
        Vec3::new(r, T::zero(), T::zero())
    }

    /// Proximal-to-distal joint vector of a segment in the frame `q` maps into.
    pub fn segment_vector(&self, s: Segment, q: Quaternion<T>) -> Vec3<T> {
        q.rotate(Vec3::new(-self.length(s), T::zero(), T::zero()))
    }
}

/// `ẋ = f(x, w)`. `noise` is the 20-vector `w` (zero when `None`).
pub fn process_derivative<T: Real>(
    x: &FusionState<T>,
    noise: Option<&[T]>,
    bias_model: &GyroBiasModel<T>,
) -> Vec<T> {
    let mut out = vec![T::zero(); STATE_DIM];
    for seg in Segment::BOTH {
        let o = seg.offset();
        let s = x.segment(seg);
        let w = |i: usize| noise.map_or(T::zero(), |n| n[o + i]);
        let w_bias = Vec3::new(w(BIAS), w(BIAS + 1), w(BIAS + 2));
        let bdot = bias_rate(s.bias, bias_model, w_bias);
        let qdot = quat_rate_from_gyro(s.q, s.omega);
        for i in 0..3 {
            out[o + OMEGA + i] = w(OMEGA + i);
            out[o + BIAS + i] = bdot[i];
        }
        out[o + QUAT..o + QUAT + 4].copy_from_slice(&qdot.to_array());
    }
    out
}

/// Analytic `F = ∂f/∂x` and `L = ∂f/∂w` at `x`.
pub fn process_jacobians<T: Real>(x: &FusionState<T>, bias_model: &GyroBiasModel<T>) -> (Matrix<T>, Matrix<T>) {
    let mut f = Matrix::zeros(STATE_DIM, STATE_DIM);
    let mut l = Matrix::zeros(STATE_DIM, STATE_DIM);
    let half: T = lit(0.5);
    let rates = bias_model.rates();
    for seg in Segment::BOTH {
        let o = seg.offset();
        let s = x.segment(seg);
        for i in 0..3 {
            l[(o + OMEGA + i, o + OMEGA + i)] = T::one();
            f[(o + BIAS + i, o + BIAS + i)] = -rates[i];
            l[(o + BIAS + i, o + BIAS + i)] = rates[i];
        }
        // q ⊗ (0, ω) = R(ω) q, and = L(q) (0, ω)
        let (wx, wy, wz) = (s.omega.x, s.omega.y, s.omega.z);
        let z = T::zero();
        let r_omega = [
            [z, -wx, -wy, -wz],
            [wx, z, wz, -wy],
            [wy, -wz, z, wx],
            [wz, wy, -wx, z],
        ];
        let q = s.q;
        let l_q = [
            [-q.x, -q.y, -q.z],
            [q.w, -q.z, q.y],
            [q.z, q.w, -q.x],
            [-q.y, q.x, q.w],
        ];
        for r in 0..4 {
            for c in 0..4 {
                f[(o + QUAT + r, o + QUAT + c)] = half * r_omega[r][c];
            }
            for c in 0..3 {
                f[(o + QUAT + r, o + OMEGA + c)] = half * l_q[r][c];
            }
        }
    }
    (f, l)
}

fn covariance_rate<T: Real>(f: &Matrix<T>, p: &Matrix<T>, lql: &Matrix<T>) -> Matrix<T> {
    let fp = f * p;
    let pft = fp.transpose();
    &(&fp + &pft) + lql
}

fn add_scaled<T: Real>(a: &[T], b: &[T], s: T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y * s).collect()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<T: Real>(p: &Matrix<T>) -> T {
    p.symmetric_eigenvalues().first().copied().unwrap_or(T::zero())
}

/// RK4 integration of state and covariance over `dt`, then quaternion
/// renormalization and covariance symmetrization.
///
/// Fails when `dt` is outside `(0, 0.05]` or the covariance loses PSD beyond
/// a −1e-6 eigenvalue.
pub fn predict<T: Real>(
    x: &FusionState<T>,
    p: &Matrix<T>,
    dt: T,
    noise: &NoiseConfig<T>,
    bias_model: &GyroBiasModel<T>,
) -> Result<(FusionState<T>, Matrix<T>), FilterError> {
    let (x, p) = predict_unchecked(x, p, dt, noise, bias_model)?;
    let min_ev = min_eigenvalue(&p);
    if min_ev < lit(-1e-6) {
        return Err(FilterError::Divergence(min_ev.to_f64().unwrap_or(f64::NAN)));
    }
    Ok((x, p))
}

/// [`predict`] without the eigenvalue check.
pub fn predict_unchecked<T: Real>(
    x: &FusionState<T>,
    p: &Matrix<T>,
    dt: T,
    noise: &NoiseConfig<T>,
    bias_model: &GyroBiasModel<T>,
) -> Result<(FusionState<T>, Matrix<T>), FilterError> {
    if !(dt > T::zero()) || dt > lit(0.05) {
        return Err(FilterError::BadTimeStep(dt.to_f64().unwrap_or(f64::NAN)));
    }
    let half: T = lit(0.5);
    let x0 = x.to_vec();

    let deriv = |xv: &[T], pm: &Matrix<T>| {
        let xs = FusionState::from_slice(xv);
        let (f, l) = process_jacobians(&xs, bias_model);
        let mut lql = Matrix::zeros(STATE_DIM, STATE_DIM);
        for i in 0..STATE_DIM {
            // L is diagonal
            lql[(i, i)] = l[(i, i)] * l[(i, i)] * noise.q_diag[i];
        }
        (process_derivative(&xs, None, bias_model), covariance_rate(&f, pm, &lql))
    };

    let (k1x, k1p) = deriv(&x0, p);
    let (k2x, k2p) = deriv(&add_scaled(&x0, &k1x, dt * half), &(p + &k1p.scale(dt * half)));
    let (k3x, k3p) = deriv(&add_scaled(&x0, &k2x, dt * half), &(p + &k2p.scale(dt * half)));
    let (k4x, k4p) = deriv(&add_scaled(&x0, &k3x, dt), &(p + &k3p.scale(dt)));

    let sixth = dt / lit(6.0);
    let two: T = lit(2.0);
    let xn: Vec<T> = (0..STATE_DIM)
        .map(|i| x0[i] + sixth * (k1x[i] + two * k2x[i] + two * k3x[i] + k4x[i]))
        .collect();
    let incr = &(&(&k1p + &k2p.scale(two)) + &k3p.scale(two)) + &k4p;
    let mut pn = p + &incr.scale(sixth);
    pn.symmetrize();

    let mut xs = FusionState::from_slice(&xn);
    xs.renormalize();
    if !xs.is_finite() || !pn.is_finite() {
        return Err(FilterError::NonFinite(f64::NAN));
    }
    Ok((xs, pn))
}

/// `h1(x) = [ω_u ± b_u, q_u, ω_l ± b_l, q_l]`.
pub fn measurement1_predict<T: Real>(x: &FusionState<T>, conv: BiasConvention) -> Vec<T> {
    let sign: T = conv.sign();
    let mut h = Vec::with_capacity(14);
    for s in [&x.upper, &x.lower] {
        h.extend_from_slice(&(s.omega + s.bias * sign).to_array());
        h.extend_from_slice(&s.q.to_array());
    }
    h
}

/// Analytic `H1 = ∂h1/∂x` (14×20).
pub fn measurement1_jacobian<T: Real>(conv: BiasConvention) -> Matrix<T> {
    let sign: T = conv.sign();
    let mut h = Matrix::zeros(14, STATE_DIM);
    for (k, seg) in Segment::BOTH.iter().enumerate() {
        let row = 7 * k;
        let o = seg.offset();
        for i in 0..3 {
            h[(row + i, o + OMEGA + i)] = T::one();
            h[(row + i, o + BIAS + i)] = sign;
        }
        for i in 0..4 {
            h[(row + 3 + i, o + QUAT + i)] = T::one();
        }
    }
    h
}

/// Measured gyro rates and gradient-descent orientations for both segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement1<T> {
    pub gyro: [Vec3<T>; 2],
    pub q_grad: [Quaternion<T>; 2],
    /// Per-segment gate: true suppresses that segment's orientation rows.
    pub gated: [bool; 2],
}

impl<T: Real> Measurement1<T> {
    /// `y1` with each measured quaternion sign-aligned to the state's.
    pub fn vector(&self, x: &FusionState<T>) -> Vec<T> {
        let mut y = Vec::with_capacity(14);
        for (k, seg) in Segment::BOTH.iter().enumerate() {
            let q_state = x.segment(*seg).q;
            let mut qg = self.q_grad[k];
            if qg.dot(q_state) < T::zero() {
                qg = -qg;
            }
            y.extend_from_slice(&self.gyro[k].to_array());
            y.extend_from_slice(&qg.to_array());
        }
        y
    }

    /// `R1` with gated orientation rows raised to `gated_variance`.
    pub fn covariance(&self, noise: &NoiseConfig<T>) -> Vec<T> {
        let mut r = noise.r1_diag.clone();
        for k in 0..2 {
            if self.gated[k] {
                for i in 3..7 {
                    r[7 * k + i] = noise.gated_variance;
                }
            }
        }
        r
    }
}

/// Velocity of the knee seen through one segment:
/// `V_imu + q ⊗ (ω × r) ⊗ q*`.
pub fn knee_velocity<T: Real>(seg: &SegmentState<T>, v_imu: Vec3<T>, lever: Vec3<T>) -> Vec3<T> {
    v_imu + seg.q.rotate(seg.omega.cross(lever))
}

/// Knee-velocity constraint `h2(x)`: lower-segment minus upper-segment knee
/// velocity. The measurement is zero.
pub fn measurement2_predict<T: Real>(x: &FusionState<T>, v_u: Vec3<T>, v_l: Vec3<T>, leg: &LegModel<T>) -> Vec3<T> {
    knee_velocity(&x.lower, v_l, leg.lever(Segment::Lower))
        - knee_velocity(&x.upper, v_u, leg.lever(Segment::Upper))
}

/// `V_t = V_{t−1} + (q ⊗ a_m ⊗ q* + g) Δt` for specific force `a_m`.
pub fn propagate_imu_velocity<T: Real>(v_prev: Vec3<T>, q: Quaternion<T>, a_m: Vec3<T>, gravity: Vec3<T>, dt: T) -> Vec3<T> {
    v_prev + (q.rotate(a_m) + gravity) * dt
}

/// Camera-frame segment vectors `[knee − hip, ankle − knee]` predicted from
/// the state, with `cam_from_ned` the NED-to-camera rotation.
pub fn measurement3_predict<T: Real>(x: &FusionState<T>, cam_from_ned: Quaternion<T>, leg: &LegModel<T>) -> Vec<T> {
    let mut h = Vec::with_capacity(6);
    for seg in Segment::BOTH {
        let q_cs = cam_from_ned.multiply(x.segment(seg).q);
        h.extend_from_slice(&leg.segment_vector(seg, q_cs).to_array());
    }
    h
}

/// Central finite-difference Jacobian of `h` at `x`.
pub fn fd_jacobian<T: Real, F>(x: &FusionState<T>, h: F) -> Matrix<T>
where
    F: Fn(&FusionState<T>) -> Vec<T>,
{
    let step = T::fd_step();
    let base = x.to_vec();
    let m = h(x).len();
    let mut jac = Matrix::zeros(m, STATE_DIM);
    let two: T = lit(2.0);
    for j in 0..STATE_DIM {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[j] = plus[j] + step;
        minus[j] = minus[j] - step;
        let hp = h(&FusionState::from_slice(&plus));
        let hm = h(&FusionState::from_slice(&minus));
        for i in 0..m {
            jac[(i, j)] = (hp[i] - hm[i]) / (two * step);
        }
    }
    jac
}

#[derive(Debug, Clone, PartialEq)]
pub enum UpdateOutcome<T> {
    Applied { trace_before: T, trace_after: T },
    /// Innovation covariance not invertible; state and covariance untouched.
    Skipped { condition: f64 },
}

/// Discrete EKF update with `M = I`:
/// `K = PHᵀ(HPHᵀ + R)⁻¹`, `x⁺ = x + K(y − h)`, `P⁺ = (I − KH)P`.
///
/// The state vector is updated in place, quaternions renormalized and `P`
/// symmetrized. Skips when the innovation covariance has a condition number
/// above 1e12.
pub fn update<T: Real>(
    x: &mut FusionState<T>,
    p: &mut Matrix<T>,
    innovation: &[T],
    h: &Matrix<T>,
    r_diag: &[T],
) -> UpdateOutcome<T> {
    let m = innovation.len();
    assert_eq!(h.rows(), m);
    assert_eq!(r_diag.len(), m);
    let ht = h.transpose();
    let pht = &*p * &ht;
    let mut s = h * &pht;
    for i in 0..m {
        s[(i, i)] = s[(i, i)] + r_diag[i];
    }
    s.symmetrize();
    let ev = s.symmetric_eigenvalues();
    let (lo, hi) = (ev[0], ev[m - 1]);
    let condition = if lo > T::zero() {
        (hi / lo).to_f64().unwrap_or(f64::INFINITY)
    } else {
        f64::INFINITY
    };
    if !(condition <= 1e12) {
        return UpdateOutcome::Skipped { condition };
    }
    // K = PHᵀ S⁻¹  ⇔  S Kᵀ = H P
    let Some(kt) = s.solve(&pht.transpose()) else {
        return UpdateOutcome::Skipped { condition };
    };
    let k = kt.transpose();
    let trace_before = p.trace();
    let xv = x.to_vec();
    let mut xn = xv.clone();
    for i in 0..STATE_DIM {
        let mut acc = T::zero();
        for j in 0..m {
            acc = acc + k[(i, j)] * innovation[j];
        }
        xn[i] = xn[i] + acc;
    }
    let kh = &k * h;
    let ikh = &Matrix::identity(STATE_DIM) - &kh;
    let mut pn = &ikh * &*p;
    pn.symmetrize();
    *p = pn;
    *x = FusionState::from_slice(&xn);
    x.renormalize();
    UpdateOutcome::Applied {
        trace_before,
        trace_after: p.trace(),
    }
}

/// Drops rows whose variance reaches `gated` (the infinite-variance limit)
/// and applies [`update`] to the rest. Returns `None` when nothing is left.
pub fn update_with_gating<T: Real>(
    x: &mut FusionState<T>,
    p: &mut Matrix<T>,
    innovation: &[T],
    h: &Matrix<T>,
    r_diag: &[T],
    gated: T,
) -> Option<UpdateOutcome<T>> {
    let keep: Vec<usize> = (0..innovation.len()).filter(|&i| r_diag[i] < gated).collect();
    if keep.is_empty() {
        return None;
    }
    if keep.len() == innovation.len() {
        return Some(update(x, p, innovation, h, r_diag));
    }
    let mut hk = Matrix::zeros(keep.len(), STATE_DIM);
    for (r, &i) in keep.iter().enumerate() {
        for c in 0..STATE_DIM {
            hk[(r, c)] = h[(i, c)];
        }
    }
    let inn: Vec<T> = keep.iter().map(|&i| innovation[i]).collect();
    let rk: Vec<T> = keep.iter().map(|&i| r_diag[i]).collect();
    Some(update(x, p, &inn, &hk, &rk))
}

/// Initial covariance: gyro and orientation rows from `R1`, bias rows `bias_var`.
pub fn initial_covariance<T: Real>(noise: &NoiseConfig<T>, bias_var: T) -> Matrix<T> {
    let mut diag = vec![T::zero(); STATE_DIM];
    for (k, seg) in Segment::BOTH.iter().enumerate() {
        let o = seg.offset();
        for i in 0..3 {
            diag[o + OMEGA + i] = noise.r1_diag[7 * k + i];
            diag[o + BIAS + i] = bias_var;
        }
        for i in 0..4 {
            diag[o + QUAT + i] = noise.r1_diag[7 * k + 3 + i];
        }
    }
    Matrix::from_diagonal(&diag)
}

/// Iterated gradient descent on the field-alignment objective from `q0`.
///
/// The step starts at 0.1 and halves whenever it fails to lower the
/// objective; stops when the step falls below 1e-7 or after `max_iter`
/// iterations. Returns the orientation and the iteration count.
pub fn solve_orientation<T: Real>(
    q0: Quaternion<T>,
    accel: Vec3<T>,
    mag: Vec3<T>,
    fields: &EarthFields<T>,
    max_iter: usize,
) -> (Quaternion<T>, usize) {
    let cost = |q: Quaternion<T>| {
        fixed_reference_objective(q, accel, mag, fields)
            .map(|(f, _)| f.iter().fold(T::zero(), |s, v| s + *v * *v))
            .unwrap_or(T::zero())
    };
    let mut q = q0.unit();
    let mut step: T = lit(0.1);
    let min_step: T = lit(1e-7);
    let mut c = cost(q);
    let mut iters = 0;
    while iters < max_iter && step > min_step {
        iters += 1;
        let Some((_, grad)) = fixed_reference_objective(q, accel, mag, fields) else {
            break;
        };
        let cand = crate::imu::gradient_step(q, grad, step);
        let cc = cost(cand);
        if cc < c {
            q = cand;
            c = cc;
        } else {
            step = step * lit(0.5);
        }
    }
    (q, iters)
}

/// Everything the filter needs besides the data streams.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig<T> {
    pub noise: NoiseConfig<T>,
    pub leg: LegModel<T>,
    pub bias_model: GyroBiasModel<T>,
    pub fields: EarthFields<T>,
    /// Gradient step augmentation, > 1.
    pub alpha: T,
    pub bias_convention: BiasConvention,
    /// Enables measurements 1, 2 and 3.
    pub use_measurement: [bool; 3],
    /// Suppresses the orientation rows of measurement 1 at every step, as if
    /// the acceleration gate never opened. Gyro rows stay in.
    pub force_gate_measurement1: bool,
    /// Camera to NED.
    pub camera_to_ned: FrameRotation<T>,
    /// Initial bias variance for the covariance seed.
    pub initial_bias_var: T,
    /// Re-sync period of the IMU velocity integrators when no camera frame
    /// drives it, seconds.
    pub velocity_resync_period: T,
    /// Longest tolerated gap between IMU samples, seconds.
    pub max_gap: T,
    /// Tracks eigenvalue health at every step.
    pub check_health: bool,
}

impl<T: Real> FilterConfig<T> {
    pub fn new(fields: EarthFields<T>, camera_to_ned: FrameRotation<T>) -> Self {
        Self {
            noise: NoiseConfig::default(),
            leg: LegModel::default(),
            bias_model: GyroBiasModel::default(),
            fields,
            alpha: lit(5.0),
            bias_convention: BiasConvention::Additive,
            use_measurement: [true; 3],
            force_gate_measurement1: false,
            camera_to_ned,
            initial_bias_var: lit(1e-4),
            velocity_resync_period: lit(1.0 / 30.0),
            max_gap: lit(0.5),
            check_health: true,
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        self.noise.validate()?;
        self.leg.validate()?;
        self.bias_model
            .validate()
            .map_err(|e| FilterError::Config(e.to_string()))?;
        self.fields
            .validate()
            .map_err(|e| FilterError::Config(e.to_string()))?;
        if !(self.alpha > T::one()) {
            return Err(FilterError::Config("alpha must exceed 1".into()));
        }
        if self.camera_to_ned.from != Frame::Camera || self.camera_to_ned.to != Frame::Ned {
            return Err(FilterError::Config("camera alignment must map camera to NED".into()));
        }
        Ok(())
    }
}

/// One camera frame: camera-frame 3D joint positions, `None` when missing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraJoints<T> {
    pub t: T,
    /// hip, knee, ankle
    pub joints: [Option<Vec3<T>>; 3],
}

/// Per-step record produced by [`FusionFilter`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<T> {
    pub t: T,
    pub state: FusionState<T>,
    /// Acceleration gate per segment.
    pub gated: [bool; 2],
    pub camera_update: bool,
}

/// Running health statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterHealth {
    pub worst_quat_norm_error: f64,
    pub worst_min_eigenvalue: f64,
    pub worst_asymmetry: f64,
    pub updates_applied: usize,
    pub updates_skipped: usize,
    /// Ungated updates after which trace(P) grew beyond round-off.
    pub trace_increases: usize,
    pub gated_steps: usize,
    pub steps: usize,
}

impl Default for FilterHealth {
    fn default() -> Self {
        Self {
            worst_quat_norm_error: 0.0,
            worst_min_eigenvalue: f64::INFINITY,
            worst_asymmetry: 0.0,
            updates_applied: 0,
            updates_skipped: 0,
            trace_increases: 0,
            gated_steps: 0,
            steps: 0,
        }
    }
}

/// The sequential filter.
#[derive(Debug, Clone)]
pub struct FusionFilter<T> {
    cfg: FilterConfig<T>,
    state: FusionState<T>,
    cov: Matrix<T>,
    v_imu: [Vec3<T>; 2],
    last_resync: T,
    last_camera_knee: Option<(T, Vec3<T>)>,
    health: FilterHealth,
}

impl<T: Real> FusionFilter<T> {
    /// Seeds the state from the first samples: measured gyro rates, zero bias
    /// and orientations from iterated gradient descent.
    pub fn initialize(cfg: FilterConfig<T>, first_u: &ImuSample<T>, first_l: &ImuSample<T>) -> Result<Self, FilterError> {
        cfg.validate()?;
        let seed = |s: &ImuSample<T>| SegmentState {
            omega: s.gyro,
            bias: Vec3::zeros(),
            q: solve_orientation(Quaternion::identity(), s.accel, s.mag, &cfg.fields, 2000).0,
        };
        let state = FusionState {
            upper: seed(first_u),
            lower: seed(first_l),
        };
        let cov = initial_covariance(&cfg.noise, cfg.initial_bias_var);
        let mut filter = Self::from_parts(cfg, state, cov);
        filter.last_resync = first_u.t;
        Ok(filter)
    }

    /// Velocity integrators start consistent with the knee constraint and a
    /// resting hip.
    pub fn from_parts(cfg: FilterConfig<T>, state: FusionState<T>, cov: Matrix<T>) -> Self {
        let mut filter = Self {
            state,
            cov,
            v_imu: [Vec3::zeros(); 2],
            last_resync: T::zero(),
            last_camera_knee: None,
            health: FilterHealth::default(),
            cfg,
        };
        filter.resync_velocities(None);
        filter
    }

    pub fn state(&self) -> &FusionState<T> {
        &self.state
    }

    pub fn covariance(&self) -> &Matrix<T> {
        &self.cov
    }

    pub fn health(&self) -> &FilterHealth {
        &self.health
    }

    pub fn config(&self) -> &FilterConfig<T> {
        &self.cfg
    }

    fn record_update(&mut self, outcome: Option<UpdateOutcome<T>>) {
        match outcome {
            None => {}
            Some(UpdateOutcome::Skipped { .. }) => self.health.updates_skipped += 1,
            Some(UpdateOutcome::Applied {
                trace_before,
                trace_after,
            }) => {
                self.health.updates_applied += 1;
                let tb = trace_before.to_f64().unwrap_or(0.0);
                let ta = trace_after.to_f64().unwrap_or(0.0);
                if ta > tb + 1e-12 * tb.abs().max(1.0) {
                    self.health.trace_increases += 1;
                }
            }
        }
    }

    fn observe_health(&mut self) {
        let qn = self.state.max_quat_norm_error().to_f64().unwrap_or(f64::NAN);
        self.health.worst_quat_norm_error = self.health.worst_quat_norm_error.max(qn);
        let asym = self.cov.max_asymmetry().to_f64().unwrap_or(f64::NAN);
        self.health.worst_asymmetry = self.health.worst_asymmetry.max(asym);
        if self.cfg.check_health {
            let ev = min_eigenvalue(&self.cov).to_f64().unwrap_or(f64::NAN);
            self.health.worst_min_eigenvalue = self.health.worst_min_eigenvalue.min(ev);
        }
    }

    /// Re-anchors both IMU velocity integrators on a common knee velocity.
    fn resync_velocities(&mut self, knee_velocity_ned: Option<Vec3<T>>) {
        let leg = self.cfg.leg;
        let through_upper = knee_velocity(&self.state.upper, self.v_imu[0], leg.lever(Segment::Upper));
        let v_knee = knee_velocity_ned.unwrap_or(through_upper);
        for (k, seg) in Segment::BOTH.iter().enumerate() {
            let s = self.state.segment(*seg);
            self.v_imu[k] = v_knee - s.q.rotate(s.omega.cross(leg.lever(*seg)));
        }
    }

    /// Measurement 3 from one camera frame. Segments with a missing endpoint
    /// are dropped. Returns whether an update was applied.
    pub fn camera_update(&mut self, cam: &CameraJoints<T>) -> bool {
        let mut y = [T::zero(); 6];
        let mut r = self.cfg.noise.r3_diag.clone();
        let mut any = false;
        for (k, (a, b)) in [(0usize, 1usize), (1, 2)].iter().enumerate() {
            match (cam.joints[*a], cam.joints[*b]) {
                (Some(pa), Some(pb)) => {
                    y[3 * k..3 * k + 3].copy_from_slice(&(pb - pa).to_array());
                    any = true;
                }
                _ => {
                    for i in 0..3 {
                        r[3 * k + i] = self.cfg.noise.gated_variance;
                    }
                }
            }
        }
        if !any {
            return false;
        }
        let cam_from_ned = self.cfg.camera_to_ned.q.conjugate();
        let leg = self.cfg.leg;
        let h3 = measurement3_predict(&self.state, cam_from_ned, &leg);
        let innov: Vec<T> = y.iter().zip(&h3).map(|(a, b)| *a - *b).collect();
        let hj = fd_jacobian(&self.state, |x| measurement3_predict(x, cam_from_ned, &leg));
        let out = update_with_gating(&mut self.state, &mut self.cov, &innov, &hj, &r, self.cfg.noise.gated_variance);
        let applied = matches!(out, Some(UpdateOutcome::Applied { .. }));
        self.record_update(out);
        applied
    }

    /// Advances one IMU period: predict, measurement 1, measurement 2, and
    /// measurement 3 when `camera` is given.
    pub fn step(
        &mut self,
        upper: &ImuSample<T>,
        lower: &ImuSample<T>,
        dt: T,
        camera: Option<&CameraJoints<T>>,
    ) -> Result<StepRecord<T>, FilterError> {
        let max_sub: T = lit(0.05);
        let n_sub = (dt / max_sub).ceil().to_usize().unwrap_or(1).max(1);
        let sub_dt = dt / lit(n_sub as f64);
        for _ in 0..n_sub {
            let (x, p) = predict_unchecked(&self.state, &self.cov, sub_dt, &self.cfg.noise, &self.cfg.bias_model)?;
            self.state = x;
            self.cov = p;
        }
        if self.cfg.check_health {
            let ev = min_eigenvalue(&self.cov);
            if ev < lit(-1e-6) {
                return Err(FilterError::Divergence(ev.to_f64().unwrap_or(f64::NAN)));
            }
        }

        let samples = [upper, lower];
        let g = self.cfg.fields.g();
        let mut gated = [false; 2];
        for k in 0..2 {
            gated[k] = acceleration_gate(samples[k], g, self.cfg.noise.accel_threshold);
        }
        if gated.iter().any(|&b| b) {
            self.health.gated_steps += 1;
        }

        // Velocity integrators use the predicted orientation.
        for (k, seg) in Segment::BOTH.iter().enumerate() {
            let q = self.state.segment(*seg).q;
            self.v_imu[k] = propagate_imu_velocity(self.v_imu[k], q, samples[k].accel, self.cfg.fields.gravity, dt);
        }

        if self.cfg.use_measurement[0] {
            let mut q_grad = [Quaternion::identity(); 2];
            for (k, seg) in Segment::BOTH.iter().enumerate() {
                let q_prev = self.state.segment(*seg).q;
                let rate = quat_rate_from_gyro(q_prev, samples[k].gyro).norm();
                q_grad[k] = gradient_descent_orientation(q_prev, samples[k], &self.cfg.fields, rate, dt, self.cfg.alpha);
            }
            let forced = self.cfg.force_gate_measurement1;
            let m1 = Measurement1 {
                gyro: [upper.gyro, lower.gyro],
                q_grad,
                gated: [gated[0] || forced, gated[1] || forced],
            };
            let y = m1.vector(&self.state);
            let h = measurement1_predict(&self.state, self.cfg.bias_convention);
            let innov: Vec<T> = y.iter().zip(&h).map(|(a, b)| *a - *b).collect();
            let r = m1.covariance(&self.cfg.noise);
            let hj = measurement1_jacobian(self.cfg.bias_convention);
            let out = update_with_gating(&mut self.state, &mut self.cov, &innov, &hj, &r, self.cfg.noise.gated_variance);
            self.record_update(out);
        }

        // Camera frames re-anchor the velocity integrators before the
        // constraint is evaluated.
        let t = upper.t;
        let mut camera_knee_velocity = None;
        if let Some(cam) = camera {
            if let Some(knee_c) = cam.joints[1] {
                let knee_n = self.cfg.camera_to_ned.apply(knee_c);
                if let Some((t_prev, prev)) = self.last_camera_knee {
                    let dtc = cam.t - t_prev;
                    if dtc > T::zero() && dtc < lit(0.2) {
                        camera_knee_velocity = Some((knee_n - prev) / dtc);
                    }
                }
                self.last_camera_knee = Some((cam.t, knee_n));
            } else {
                self.last_camera_knee = None;
            }
            self.resync_velocities(camera_knee_velocity);
            self.last_resync = t;
        } else if t - self.last_resync >= self.cfg.velocity_resync_period - lit(1e-9) {
            self.resync_velocities(None);
            self.last_resync = t;
        }

        if self.cfg.use_measurement[1] {
            let (vu, vl, leg) = (self.v_imu[0], self.v_imu[1], self.cfg.leg);
            let h2 = measurement2_predict(&self.state, vu, vl, &leg);
            let innov = [-h2.x, -h2.y, -h2.z];
            let hj = fd_jacobian(&self.state, |x| measurement2_predict(x, vu, vl, &leg).to_array().to_vec());
            let out = update_with_gating(
                &mut self.state,
                &mut self.cov,
                &innov,
                &hj,
                &self.cfg.noise.r2_diag.clone(),
                self.cfg.noise.gated_variance,
            );
            self.record_update(out);
        }

        let camera_update = match camera {
            Some(cam) if self.cfg.use_measurement[2] => self.camera_update(cam),
            _ => false,
        };

        if !self.state.is_finite() || !self.cov.is_finite() {
            return Err(FilterError::NonFinite(t.to_f64().unwrap_or(f64::NAN)));
        }
        self.health.steps += 1;
        self.observe_health();
        Ok(StepRecord {
            t,
            state: self.state,
            gated,
            camera_update,
        })
    }
}

/// Runs the filter over two aligned IMU streams and an optional camera
/// stream. Camera frames are applied at the nearest IMU step.
pub fn ekf_run<T: Real>(
    imu_u: &[ImuSample<T>],
    imu_l: &[ImuSample<T>],
    camera: &[CameraJoints<T>],
    cfg: &FilterConfig<T>,
) -> Result<(Vec<StepRecord<T>>, FilterHealth), FilterError> {
    if imu_u.is_empty() {
        return Err(FilterError::Empty);
    }
    if imu_u.len() != imu_l.len() {
        return Err(FilterError::Misaligned(format!(
            "{} upper vs {} lower samples",
            imu_u.len(),
            imu_l.len()
        )));
    }
    for (a, b) in imu_u.iter().zip(imu_l) {
        if (a.t - b.t).abs() > lit(1e-6) {
            return Err(FilterError::Misaligned(format!("timestamps {} vs {}", a.t, b.t)));
        }
    }
    for w in imu_u.windows(2) {
        let gap = w[1].t - w[0].t;
        if !(gap > T::zero()) {
            return Err(FilterError::Misaligned(format!("non-increasing time at {}", w[1].t)));
        }
        if gap > cfg.max_gap {
            return Err(FilterError::StreamDiscontinuity {
                t: w[0].t.to_f64().unwrap_or(f64::NAN),
                gap: gap.to_f64().unwrap_or(f64::NAN),
            });
        }
    }

    // camera frame → nearest IMU step
    let mut due: Vec<Option<usize>> = vec![None; imu_u.len()];
    let mut j = 0;
    for (ci, c) in camera.iter().enumerate() {
        while j + 1 < imu_u.len() && (imu_u[j + 1].t - c.t).abs() <= (imu_u[j].t - c.t).abs() {
            j += 1;
        }
        due[j] = Some(ci);
    }

    let mut filter = FusionFilter::initialize(cfg.clone(), &imu_u[0], &imu_l[0])?;
    // a frame at the first sample refines the initial orientations
    let camera_update = match due[0] {
        Some(ci) if cfg.use_measurement[2] => filter.camera_update(&camera[ci]),
        _ => false,
    };
    let mut out = Vec::with_capacity(imu_u.len());
    out.push(StepRecord {
        t: imu_u[0].t,
        state: *filter.state(),
        gated: [false; 2],
        camera_update,
    });
    for k in 1..imu_u.len() {
        let dt = imu_u[k].t - imu_u[k - 1].t;
        let cam = due[k].map(|ci| &camera[ci]);
        out.push(filter.step(&imu_u[k], &imu_l[k], dt, cam)?);
    }
    let health = *filter.health();
    Ok((out, health))
}

/// Hip, knee and ankle in NED from a hip position and segment orientations.
pub fn chain_joints<T: Real>(hip: Vec3<T>, state: &FusionState<T>, leg: &LegModel<T>) -> [Vec3<T>; 3] {
    let knee = hip + leg.segment_vector(Segment::Upper, state.upper.q);
    let ankle = knee + leg.segment_vector(Segment::Lower, state.lower.q);
    [hip, knee, ankle]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bias() -> GyroBiasModel<f64> {
        GyroBiasModel::default()
    }

    #[test]
    fn rest_state_is_equilibrium() {
        let x = FusionState::<f64>::default();
        assert!(process_derivative(&x, None, &bias()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_row_arithmetic() {
        let mut x = FusionState::<f64>::default();
        x.upper.bias = Vec3::new(0.01, 0.0, 0.0);
        let d = process_derivative(&x, None, &bias());
        assert_abs_diff_eq!(d[BIAS], -1e-4, epsilon = 1e-18);
    }

    #[test]
    fn zero_noise_static_predict_is_identity() {
        let mut noise = NoiseConfig::<f64>::default();
        noise.q_diag = vec![0.0; STATE_DIM];
        let x = FusionState::default();
        let p = initial_covariance(&noise, 1e-4);
        let (xn, pn) = predict(&x, &p, 0.01, &noise, &bias()).unwrap();
        assert_eq!(xn, x);
        // ω uncertainty leaks into the quaternion rows; ω rows stay put
        for i in 0..3 {
            assert_abs_diff_eq!(pn[(i, i)], p[(i, i)], epsilon = 1e-15);
            assert_abs_diff_eq!(pn[(10 + i, 10 + i)], p[(10 + i, 10 + i)], epsilon = 1e-15);
        }
        assert!(pn[(6, 6)] >= p[(6, 6)]);
        assert!(min_eigenvalue(&pn) > 0.0);
    }

    #[test]
    fn predict_rejects_bad_dt() {
        let noise = NoiseConfig::<f64>::default();
        let p = initial_covariance(&noise, 1e-4);
        assert!(matches!(
            predict(&FusionState::default(), &p, 0.06, &noise, &bias()),
            Err(FilterError::BadTimeStep(_))
        ));
        assert!(predict(&FusionState::default(), &p, 0.0, &noise, &bias()).is_err());
    }

    #[test]
    fn scalar_style_gain() {
        // one measured component of one state: gain p / (p + r)
        let mut x = FusionState::<f64>::default();
        let mut p = Matrix::identity(STATE_DIM).scale(1e-9);
        p[(0, 0)] = 0.3;
        let mut h = Matrix::zeros(1, STATE_DIM);
        h[(0, 0)] = 1.0;
        let out = update(&mut x, &mut p, &[1.0], &h, &[0.2]);
        assert!(matches!(out, UpdateOutcome::Applied { .. }));
        assert_abs_diff_eq!(x.upper.omega.x, 0.3 / 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[(0, 0)], 0.3 - 0.3 * 0.3 / 0.5, epsilon = 1e-12);
    }

    #[test]
    fn fully_gated_update_is_noop() {
        let mut x = FusionState::<f64>::default();
        x.upper.omega = Vec3::new(0.3, 0.0, 0.0);
        let mut p = initial_covariance(&NoiseConfig::default(), 1e-4);
        let before = (x, p.clone());
        let h = measurement1_jacobian::<f64>(BiasConvention::Additive);
        let r = vec![1e6; 14];
        assert!(update_with_gating(&mut x, &mut p, &[0.1; 14], &h, &r, 1e6).is_none());
        assert_eq!((x, p), before);
    }

    #[test]
    fn ill_conditioned_update_is_skipped() {
        let mut x = FusionState::<f64>::default();
        let mut p = Matrix::zeros(STATE_DIM, STATE_DIM);
        let h = measurement1_jacobian::<f64>(BiasConvention::Additive);
        let out = update(&mut x, &mut p, &[0.0; 14], &h, &[0.0; 14]);
        assert!(matches!(out, UpdateOutcome::Skipped { .. }));
    }

    #[test]
    fn measured_quaternion_sign_follows_state() {
        let x = FusionState::<f64>::default();
        let m = Measurement1 {
            gyro: [Vec3::zeros(); 2],
            q_grad: [-Quaternion::identity(), Quaternion::identity()],
            gated: [false; 2],
        };
        let y = m.vector(&x);
        assert_eq!(y[3], 1.0);
    }

    #[test]
    fn gate_raises_orientation_rows_only() {
        let noise = NoiseConfig::<f64>::default();
        let m = Measurement1 {
            gyro: [Vec3::zeros(); 2],
            q_grad: [Quaternion::identity(); 2],
            gated: [true, false],
        };
        let r = m.covariance(&noise);
        assert_eq!(&r[0..3], &noise.r1_diag[0..3]);
        assert!(r[3..7].iter().all(|&v| v == 1e6));
        assert_eq!(&r[7..14], &noise.r1_diag[7..14]);
    }

    #[test]
    fn stationary_velocity_and_free_fall() {
        let g = Vec3::new(0.0, 0.0, 9.81);
        let q = Quaternion::from_axis_angle(Vec3::new(1.0, 1.0, 0.0), 0.7);
        let a_rest = q.rotate_inverse(-g);
        let v = propagate_imu_velocity(Vec3::new(0.1, 0.2, 0.3), q, a_rest, g, 0.01);
        assert_abs_diff_eq!((v - Vec3::new(0.1, 0.2, 0.3)).norm(), 0.0, epsilon = 1e-12);
        let mut v = Vec3::zeros();
        for _ in 0..100 {
            v = propagate_imu_velocity(v, q, Vec3::zeros(), g, 0.01);
        }
        assert_abs_diff_eq!(v.z, 9.81, epsilon = 1e-9);
    }

    #[test]
    fn rigid_rest_constraint_is_zero() {
        let x = FusionState::<f64>::default();
        let r = measurement2_predict(&x, Vec3::zeros(), Vec3::zeros(), &LegModel::default());
        assert_eq!(r, Vec3::zeros());
    }

    #[test]
    fn camera_prediction_has_segment_length() {
        let leg = LegModel::<f64>::default();
        let mut x = FusionState::default();
        x.upper.q = Quaternion::from_axis_angle(Vec3::new(0.3, 0.2, 0.9), 2.0);
        x.lower.q = Quaternion::from_axis_angle(Vec3::new(-0.3, 0.5, 0.1), 0.4);
        let cam = Quaternion::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), 1.0);
        let h = measurement3_predict(&x, cam, &leg);
        assert_abs_diff_eq!(Vec3::new(h[0], h[1], h[2]).norm(), leg.l_u, epsilon = 1e-12);
        assert_abs_diff_eq!(Vec3::new(h[3], h[4], h[5]).norm(), leg.l_l, epsilon = 1e-12);
    }

    #[test]
    fn leg_validation() {
        assert!(LegModel::<f64>::default().validate().is_ok());
        let bad = LegModel { l_u: 0.4, l_l: 0.4, r_u: -0.5, r_l: 0.2 };
        assert!(bad.validate().is_err());
    }
}
