//! Standalone IMU orientation machinery: gyro quaternion kinematics, the
//! first-order gyro bias model and the gradient-descent correction from
//! accelerometer and magnetometer directions.

use thiserror::Error;

use crate::quat::{Quaternion, Vec3};
use crate::scalar::{lit, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImuError {
    #[error("bias time constants must be positive")]
    NonPositiveTau,
    #[error("bias driving-noise covariance must be symmetric positive semidefinite")]
    InvalidCovariance,
    #[error("earth magnetic field must be unit length, got norm {0}")]
    MagNotUnit(f64),
    #[error("gravity and magnetic field references are parallel")]
    ParallelReferences,
}

/// One IMU reading, all vectors in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample<T> {
    /// Seconds.
    pub t: T,
    /// rad/s.
    pub gyro: Vec3<T>,
    /// Specific force, m/s².
    pub accel: Vec3<T>,
    /// Normalized magnetic field.
    pub mag: Vec3<T>,
}

impl<T: Real> ImuSample<T> {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.gyro.is_finite() && self.accel.is_finite() && self.mag.is_finite()
    }
}

/// First-order Gauss-Markov gyro bias: `ḃ = −T b + T w`, `T = diag(1/τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GyroBiasModel<T> {
    /// Time constants τ1..τ3, seconds.
    pub tau: [T; 3],
    /// Covariance of the driving white noise `w`.
    pub w_cov: [[T; 3]; 3],
}

impl<T: Real> Default for GyroBiasModel<T> {
    fn default() -> Self {
        let z = T::zero();
        Self {
            tau: [lit(100.0); 3],
            w_cov: [[z; 3]; 3],
        }
    }
}

impl<T: Real> GyroBiasModel<T> {
    pub fn with_tau(tau: T) -> Self {
        Self {
            tau: [tau; 3],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ImuError> {
        if self.tau.iter().any(|&t| !(t > T::zero())) {
            return Err(ImuError::NonPositiveTau);
        }
        let c = &self.w_cov;
        let sym = (0..3).all(|i| (0..3).all(|j| (c[i][j] - c[j][i]).abs() <= lit(1e-12)));
        // Sylvester on leading minors is enough for a 3×3 PSD check with a small slack.
        let m1 = c[0][0];
        let m2 = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        let m3 = c[0][0] * (c[1][1] * c[2][2] - c[1][2] * c[2][1])
            - c[0][1] * (c[1][0] * c[2][2] - c[1][2] * c[2][0])
            + c[0][2] * (c[1][0] * c[2][1] - c[1][1] * c[2][0]);
        let slack: T = lit(-1e-12);
        let diag_ok = (0..3).all(|i| c[i][i] >= slack);
        if !sym || !diag_ok || m1 < slack || m2 < slack || m3 < slack {
            return Err(ImuError::InvalidCovariance);
        }
        Ok(())
    }

    /// Diagonal of `T`.
    pub fn rates(&self) -> Vec3<T> {
        Vec3::new(
            T::one() / self.tau[0],
            T::one() / self.tau[1],
            T::one() / self.tau[2],
        )
    }
}

/// Gravity and magnetic references in NED.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarthFields<T> {
    /// m/s², `(0, 0, g)` for down-positive NED.
    pub gravity: Vec3<T>,
    /// Unit vector.
    pub mag_field: Vec3<T>,
}

impl<T: Real> EarthFields<T> {
    /// Field pointing north and dipping `dip` radians below the horizon.
    pub fn with_dip(g: T, dip: T) -> Self {
        Self {
            gravity: Vec3::new(T::zero(), T::zero(), g),
            mag_field: Vec3::new(dip.cos(), T::zero(), dip.sin()),
        }
    }

    pub fn validate(&self) -> Result<(), ImuError> {
        let n = self.mag_field.norm();
        if (n - T::one()).abs() > lit(1e-9) {
            return Err(ImuError::MagNotUnit(n.to_f64().unwrap_or(f64::NAN)));
        }
        let g = self.gravity.normalized().ok_or(ImuError::ParallelReferences)?;
        if g.cross(self.mag_field).norm() < lit(1e-6) {
            return Err(ImuError::ParallelReferences);
        }
        Ok(())
    }

    pub fn g(&self) -> T {
        self.gravity.norm()
    }

    /// Direction an accelerometer at rest reports, expressed in NED (up).
    pub fn up(&self) -> Vec3<T> {
        (-self.gravity).normalized().unwrap_or(Vec3::new(T::zero(), T::zero(), -T::one()))
    }
}

impl Default for EarthFields<f64> {
    fn default() -> Self {
        Self::with_dip(9.81, 60f64.to_radians())
    }
}

/// `½ q ⊗ (0, ω)`.
pub fn quat_rate_from_gyro<T: Real>(q: Quaternion<T>, omega: Vec3<T>) -> Quaternion<T> {
    q.multiply(Quaternion::pure(omega)).scale(lit(0.5))
}

/// `−T b + T w`.
pub fn bias_rate<T: Real>(b: Vec3<T>, model: &GyroBiasModel<T>, w: Vec3<T>) -> Vec3<T> {
    let r = model.rates();
    Vec3::new(
        r.x * (w.x - b.x),
        r.y * (w.y - b.y),
        r.z * (w.z - b.z),
    )
}

/// One RK4 step of `q̇ = ½ q ⊗ ω` with `ω` held constant, without renormalizing.
pub fn integrate_gyro_rk4<T: Real>(q: Quaternion<T>, omega: Vec3<T>, dt: T) -> Quaternion<T> {
    let half: T = lit(0.5);
    let k1 = quat_rate_from_gyro(q, omega);
    let k2 = quat_rate_from_gyro(q + k1.scale(dt * half), omega);
    let k3 = quat_rate_from_gyro(q + k2.scale(dt * half), omega);
    let k4 = quat_rate_from_gyro(q + k3.scale(dt), omega);
    let sum = k1 + k2.scale(lit(2.0)) + k3.scale(lit(2.0)) + k4;
    q + sum.scale(dt / lit(6.0))
}

/// `q* ⊗ (0, d) ⊗ q` and its 3×4 Jacobian with respect to `(w, x, y, z)`.
///
/// The expression is treated as a polynomial in the four components, so the
/// Jacobian is valid for non-unit `q` as well.
pub fn earth_to_sensor_jacobian<T: Real>(q: Quaternion<T>, d: Vec3<T>) -> (Vec3<T>, [[T; 4]; 3]) {
    let two: T = lit(2.0);
    let w = q.w;
    let u = q.vector();
    let ud = u.dot(d);
    let value = d * (w * w - u.norm_squared()) + u * (two * ud) - u.cross(d) * (two * w);

    let dw = d * (two * w) - u.cross(d) * two;
    // J_u = −2 d uᵀ + 2 u dᵀ + 2 (u·d) I + 2 w [d]×
    let ua = u.to_array();
    let da = d.to_array();
    let skew = [
        [T::zero(), -d.z, d.y],
        [d.z, T::zero(), -d.x],
        [-d.y, d.x, T::zero()],
    ];
    let mut jac = [[T::zero(); 4]; 3];
    for r in 0..3 {
        jac[r][0] = dw[r];
        for c in 0..3 {
            let eye = if r == c { T::one() } else { T::zero() };
            jac[r][c + 1] = -two * da[r] * ua[c] + two * ua[r] * da[c] + two * ud * eye + two * w * skew[r][c];
        }
    }
    (value, jac)
}

/// Earth-frame magnetic reference reduced to its vertical component along
/// gravity and its horizontal magnitude along the declared field's horizontal
/// direction. Removes sensitivity to declination and dip mismatch.
pub fn reduced_mag_reference<T: Real>(
    q: Quaternion<T>,
    mag_sensor: Vec3<T>,
    fields: &EarthFields<T>,
) -> Vec3<T> {
    let down = fields.gravity.normalized().unwrap_or(Vec3::new(T::zero(), T::zero(), T::one()));
    let h = q.rotate(mag_sensor);
    let vertical = h.dot(down);
    let horizontal = (h - down * vertical).norm();
    let declared = fields.mag_field;
    let dir = (declared - down * declared.dot(down))
        .normalized()
        .unwrap_or(Vec3::new(T::one(), T::zero(), T::zero()));
    dir * horizontal + down * vertical
}

/// Stacked objective `f(q)` and gradient `Jᵀ f` for the field-alignment problem.
///
/// The gravity block compares the predicted "up" direction in the sensor
/// frame with the normalized accelerometer reading; the magnetic block, when
/// `mag` is given, does the same for the reduced magnetic reference.
pub fn objective_gradient<T: Real>(
    q: Quaternion<T>,
    accel: Vec3<T>,
    mag: Option<Vec3<T>>,
    fields: &EarthFields<T>,
) -> Option<(Vec<T>, Quaternion<T>)> {
    let a_hat = accel.normalized()?;
    let mag = match mag {
        Some(m) => {
            let m_hat = m.normalized()?;
            Some((reduced_mag_reference(q, m_hat, fields), m_hat))
        }
        None => None,
    };
    Some(stacked_objective(q, fields.up(), a_hat, mag))
}

/// Objective and gradient for a fixed magnetic reference, the declared
/// field itself. Unlike [`objective_gradient`] the gradient is exact for the
/// cost, so a line search over it converges.
pub fn fixed_reference_objective<T: Real>(
    q: Quaternion<T>,
    accel: Vec3<T>,
    mag: Vec3<T>,
    fields: &EarthFields<T>,
) -> Option<(Vec<T>, Quaternion<T>)> {
    let a_hat = accel.normalized()?;
    let m_hat = mag.normalized()?;
    let m_ref = fields.mag_field.normalized()?;
    Some(stacked_objective(q, fields.up(), a_hat, Some((m_ref, m_hat))))
}

fn stacked_objective<T: Real>(
    q: Quaternion<T>,
    up: Vec3<T>,
    a_hat: Vec3<T>,
    mag: Option<(Vec3<T>, Vec3<T>)>,
) -> (Vec<T>, Quaternion<T>) {
    let mut residual = Vec::with_capacity(6);
    let mut grad = [T::zero(); 4];

    let mut accumulate = |reference: Vec3<T>, measured: Vec3<T>| {
        let (pred, jac) = earth_to_sensor_jacobian(q, reference);
        let f = pred - measured;
        for r in 0..3 {
            residual.push(f[r]);
            for c in 0..4 {
                grad[c] = grad[c] + jac[r][c] * f[r];
            }
        }
    };
    accumulate(up, a_hat);
    if let Some((b, m_hat)) = mag {
        accumulate(b, m_hat);
    }
    (residual, Quaternion::from_array(grad))
}

/// Moves `q_prev` by `mu` against the normalized gradient and renormalizes.
///
/// Returns `q_prev` when the gradient vanishes. The sign of `q_prev` is kept.
pub fn gradient_step<T: Real>(q_prev: Quaternion<T>, grad: Quaternion<T>, mu: T) -> Quaternion<T> {
    let gn = grad.norm();
    if !(gn >= lit(1e-12)) {
        return q_prev;
    }
    (q_prev - grad.scale(mu / gn)).unit()
}

/// One gradient-descent correction with step `μ = α · ‖q̇_ω‖ · Δt`.
///
/// `gyro_rate_norm` is the norm of the gyro-driven quaternion rate. Zero
/// accelerometer or magnetometer readings leave `q_prev` unchanged.
pub fn gradient_descent_orientation<T: Real>(
    q_prev: Quaternion<T>,
    sample: &ImuSample<T>,
    fields: &EarthFields<T>,
    gyro_rate_norm: T,
    dt: T,
    alpha: T,
) -> Quaternion<T> {
    let mu = alpha * gyro_rate_norm * dt;
    match objective_gradient(q_prev, sample.accel, Some(sample.mag), fields) {
        Some((_, grad)) => gradient_step(q_prev, grad, mu),
        None => q_prev,
    }
}

/// True when the specific-force gate closes: `‖a‖ − g > threshold`.
///
/// The comparison is signed, so free fall (‖a‖ ≈ 0) never closes the gate.
pub fn acceleration_gate<T: Real>(sample: &ImuSample<T>, g: T, threshold: T) -> bool {
    sample.accel.norm() - g > threshold
}
