//! Quaternion and 3-vector algebra plus frame bookkeeping.
//!
//! Conventions used across the crate:
//!
//! * Hamilton product, scalar first: `(w, x, y, z)`, right-handed.
//! * An orientation quaternion `q` of a sensor maps sensor-frame vectors into
//!   the earth (NED) frame: `v_ned = q ⊗ (0, v_s) ⊗ q*`.
//! * [`Quaternion::normalize`] returns the representative with `w >= 0`.
//! * Angles are radians.

use core::fmt;
use core::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

use thiserror::Error;

use crate::scalar::{lit, Real};

/// Errors raised by quaternion and frame operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuatError {
    #[error("quaternion norm {0} is degenerate (filter divergence?)")]
    DegenerateNorm(f64),
    #[error("quaternion is not unit length (norm {0})")]
    NotUnit(f64),
    #[error("cannot compose {outer_from:?}->{outer_to:?} after {inner_from:?}->{inner_to:?}")]
    FrameMismatch {
        outer_from: Frame,
        outer_to: Frame,
        inner_from: Frame,
        inner_to: Frame,
    },
}

/// Three-component vector. Units are whatever the caller says they are.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zeros() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction, or `None` for a zero vector.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self / n)
        } else {
            None
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Lossy conversion between scalar types.
    pub fn cast<U: Real>(self) -> Vec3<U> {
        let c = |v: T| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan());
        Vec3::new(c(self.x), c(self.y), c(self.z))
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Div<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn div(self, s: T) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Default for Quaternion<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Quaternion<T> {
    #[inline]
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    #[inline]
    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    /// Pure quaternion `(0, v)`.
    #[inline]
    pub fn pure(v: Vec3<T>) -> Self {
        Self::new(T::zero(), v.x, v.y, v.z)
    }

    /// Rotation of `angle` radians about `axis`. The axis is normalized here.
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let Some(u) = axis.normalized() else {
            return Self::identity();
        };
        let half = angle / lit(2.0);
        let (s, c) = half.sin_cos();
        Self::new(c, u.x * s, u.y * s, u.z * s)
    }

    /// Rotation by the rotation vector `v` (axis times angle).
    pub fn from_rotation_vector(v: Vec3<T>) -> Self {
        let angle = v.norm();
        if angle <= T::epsilon() {
            return Self::new(T::one(), v.x / lit(2.0), v.y / lit(2.0), v.z / lit(2.0)).unit();
        }
        Self::from_axis_angle(v, angle)
    }

    #[inline]
    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    #[inline]
    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    #[inline]
    pub fn vector(self) -> Vec3<T> {
        Vec3::new(self.x, self.y, self.z)
    }

    #[inline]
    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn scale(self, s: T) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    /// Hamilton product `self ⊗ rhs`.
    #[inline]
    pub fn multiply(self, b: Self) -> Self {
        let a = self;
        Self::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Unit quaternion with `w >= 0`.
    pub fn normalize(self) -> Result<Self, QuatError> {
        let n = self.norm();
        if !(n > lit(1e-12)) || !n.is_finite() {
            return Err(QuatError::DegenerateNorm(n.to_f64().unwrap_or(f64::NAN)));
        }
        let q = self.scale(T::one() / n);
        Ok(if q.w < T::zero() { -q } else { q })
    }

    /// Scales to unit length without touching the sign.
    ///
    /// Used for filter states, where flipping the sign would invalidate the
    /// covariance cross terms. Degenerate input yields identity.
    pub fn unit(self) -> Self {
        let n = self.norm();
        if n > lit(1e-12) && n.is_finite() {
            self.scale(T::one() / n)
        } else {
            Self::identity()
        }
    }

    pub fn is_unit(self, tol: T) -> bool {
        (self.norm() - T::one()).abs() <= tol
    }

    /// `q ⊗ (0, v) ⊗ q*`, rejecting a quaternion that is not unit within 1e-6.
    pub fn rotate_vector(self, v: Vec3<T>) -> Result<Vec3<T>, QuatError> {
        if !self.is_unit(lit(1e-6)) {
            return Err(QuatError::NotUnit(self.norm().to_f64().unwrap_or(f64::NAN)));
        }
        Ok(self.rotate(v))
    }

    /// `q ⊗ (0, v) ⊗ q*` without the unit-norm check.
    #[inline]
    pub fn rotate(self, v: Vec3<T>) -> Vec3<T> {
        self.multiply(Self::pure(v)).multiply(self.conjugate()).vector()
    }

    /// `q* ⊗ (0, v) ⊗ q`, i.e. the inverse rotation for a unit `q`.
    #[inline]
    pub fn rotate_inverse(self, v: Vec3<T>) -> Vec3<T> {
        self.conjugate().rotate(v)
    }

    /// Row-major rotation matrix of a unit quaternion.
    pub fn to_rotation_matrix(self) -> [[T; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let one = T::one();
        let two: T = lit(2.0);
        [
            [
                one - two * (y * y + z * z),
                two * (x * y - w * z),
                two * (x * z + w * y),
            ],
            [
                two * (x * y + w * z),
                one - two * (x * x + z * z),
                two * (y * z - w * x),
            ],
            [
                two * (x * z - w * y),
                two * (y * z + w * x),
                one - two * (x * x + y * y),
            ],
        ]
    }

    /// Angle in radians of the rotation taking `self` to `other`.
    pub fn angle_to(self, other: Self) -> T {
        let d = self.dot(other).abs().min(T::one());
        lit::<T>(2.0) * d.acos()
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Real>(self) -> Quaternion<U> {
        let c = |v: T| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan());
        Quaternion::new(c(self.w), c(self.x), c(self.y), c(self.z))
    }
}

impl<T: Real> Mul for Quaternion<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self.multiply(rhs)
    }
}

impl<T: Real> Add for Quaternion<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Quaternion<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.w - o.w, self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Quaternion<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Hamilton product of two quaternions. Accepts non-unit inputs.
#[inline]
pub fn quat_multiply<T: Real>(a: Quaternion<T>, b: Quaternion<T>) -> Quaternion<T> {
    a.multiply(b)
}

/// Coordinate frames that appear in the tracking pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Frame {
    /// North-east-down earth frame.
    Ned,
    SensorUpper,
    SensorLower,
    Camera,
    /// Frame of the ground-truth reference system.
    Reference,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Frame::Ned => "ned",
            Frame::SensorUpper => "sensor-upper",
            Frame::SensorLower => "sensor-lower",
            Frame::Camera => "camera",
            Frame::Reference => "reference",
        };
        f.write_str(s)
    }
}

/// Rotation taking vectors expressed in `from` into `to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRotation<T> {
    pub from: Frame,
    pub to: Frame,
    pub q: Quaternion<T>,
}

impl<T: Real> FrameRotation<T> {
    pub fn new(from: Frame, to: Frame, q: Quaternion<T>) -> Self {
        Self { from, to, q }
    }

    pub fn identity(from: Frame, to: Frame) -> Self {
        Self::new(from, to, Quaternion::identity())
    }

    pub fn inverse(self) -> Self {
        Self::new(self.to, self.from, self.q.conjugate())
    }

    /// Expresses a `from`-frame vector in the `to` frame.
    pub fn apply(&self, v: Vec3<T>) -> Vec3<T> {
        self.q.rotate(v)
    }
}

/// Chains `inner: a -> b` and `outer: b -> c` into `a -> c`.
pub fn compose_frames<T: Real>(
    outer: FrameRotation<T>,
    inner: FrameRotation<T>,
) -> Result<FrameRotation<T>, QuatError> {
    if outer.from != inner.to {
        return Err(QuatError::FrameMismatch {
            outer_from: outer.from,
            outer_to: outer.to,
            inner_from: inner.from,
            inner_to: inner.to,
        });
    }
    let q = quat_multiply(outer.q, inner.q).normalize()?;
    Ok(FrameRotation::new(inner.from, outer.to, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    type Q = Quaternion<f64>;

    #[test]
    fn basis_products() {
        let i = Q::new(0.0, 1.0, 0.0, 0.0);
        let j = Q::new(0.0, 0.0, 1.0, 0.0);
        let k = Q::new(0.0, 0.0, 0.0, 1.0);
        assert_eq!(i * j, k);
        assert_eq!(j * i, -k);
        assert_eq!(i * i, Q::new(-1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn identity_is_neutral() {
        let q = Q::new(0.3, -0.1, 0.7, 0.2);
        assert_eq!(Q::identity() * q, q);
        assert_eq!(q * Q::identity(), q);
    }

    #[test]
    fn quarter_turn_about_z() {
        let q = Q::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2);
        let v = q.rotate_vector(Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(v.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.y, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.z, 0.0, epsilon = 1e-12);
        let v = Q::identity().rotate_vector(Vec3::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(v, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn rotate_rejects_non_unit() {
        let q = Q::new(1.0, 0.0, 0.0, 0.01);
        assert!(matches!(
            q.rotate_vector(Vec3::new(1.0, 0.0, 0.0)),
            Err(QuatError::NotUnit(_))
        ));
    }

    #[test]
    fn normalize_cases() {
        assert_eq!(Q::new(2.0, 0.0, 0.0, 0.0).normalize().unwrap(), Q::identity());
        assert_eq!(
            Q::new(-2.0, 0.0, 0.0, 0.0).normalize().unwrap(),
            Q::identity()
        );
        let q = Q::from_axis_angle(Vec3::new(1.0, 2.0, -1.0), 0.8);
        let n = q.normalize().unwrap();
        assert_abs_diff_eq!(n.w, q.w, epsilon = 1e-15);
        assert_abs_diff_eq!(n.x, q.x, epsilon = 1e-15);
        assert!(matches!(
            Q::new(1e-13, 0.0, 0.0, 0.0).normalize(),
            Err(QuatError::DegenerateNorm(_))
        ));
    }

    #[test]
    fn compose_identity_outer() {
        let ns = FrameRotation::new(
            Frame::SensorUpper,
            Frame::Ned,
            Q::from_axis_angle(Vec3::new(0.2, 1.0, 0.0), 1.1)
                .normalize()
                .unwrap(),
        );
        let vn = FrameRotation::identity(Frame::Ned, Frame::Reference);
        let vs = compose_frames(vn, ns).unwrap();
        assert_eq!(vs.from, Frame::SensorUpper);
        assert_eq!(vs.to, Frame::Reference);
        assert_abs_diff_eq!(vs.q.angle_to(ns.q), 0.0, epsilon = 1e-12);

        let back = compose_frames(ns.inverse(), ns).unwrap();
        assert_abs_diff_eq!(back.q.angle_to(Q::identity()), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn compose_rejects_broken_chain() {
        let a = FrameRotation::<f64>::identity(Frame::Camera, Frame::Ned);
        let b = FrameRotation::<f64>::identity(Frame::SensorUpper, Frame::Reference);
        assert!(matches!(
            compose_frames(a, b),
            Err(QuatError::FrameMismatch { .. })
        ));
    }

    #[test]
    fn works_in_f32() {
        let q = Quaternion::<f32>::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 1.0);
        let v = q.rotate_vector(Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert!((v.norm() - 2.0).abs() < 1e-6);
    }
}
