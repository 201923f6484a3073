//! Small fixed-size vector, quaternion and affine types.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

#[inline]
pub fn vec3<T>(x: T, y: T, z: T) -> Vec3<T> {
    Vec3 { x, y, z }
}

impl<T: Real> Vec3<T> {
    pub fn zero() -> Self {
        vec3(T::zero(), T::zero(), T::zero())
    }

    pub fn splat(v: T) -> Self {
        vec3(v, v, v)
    }

    pub fn from_array(a: [T; 3]) -> Self {
        vec3(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_f64(a: [f64; 3]) -> Self {
        vec3(T::lit(a[0]), T::lit(a[1]), T::lit(a[2]))
    }

    pub fn to_f64(self) -> [f64; 3] {
        [self.x.to_f64_lossy(), self.y.to_f64_lossy(), self.z.to_f64_lossy()]
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::from_f64(self.to_f64())
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        vec3(
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

    /// Unit vector, or `None` when the norm is below `eps`.
    pub fn try_normalize(self, eps: T) -> Option<Self> {
        let n = self.norm();
        if n < eps || !n.is_finite() {
            None
        } else {
            Some(self / n)
        }
    }

    pub fn normalize(self) -> Self {
        self / self.norm()
    }

    pub fn min(self, o: Self) -> Self {
        vec3(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Self) -> Self {
        vec3(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn abs(self) -> Self {
        vec3(self.x.abs(), self.y.abs(), self.z.abs())
    }

    pub fn max_abs(self) -> T {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn mul_elem(self, o: Self) -> Self {
        vec3(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn distance(self, o: Self) -> T {
        (self - o).norm()
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

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        vec3(self.x + o.x, self.y + o.y, self.z + o.z)
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
        vec3(self.x - o.x, self.y - o.y, self.z - o.z)
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
        vec3(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        vec3(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Div<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn div(self, s: T) -> Self {
        vec3(self.x / s, self.y / s, self.z / s)
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Mat3 {
            m: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    pub fn zero() -> Self {
        Mat3 {
            m: [[T::zero(); 3]; 3],
        }
    }

    pub fn from_rows(r: [[T; 3]; 3]) -> Self {
        Mat3 { m: r }
    }

    pub fn from_cols(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Mat3 {
            m: [[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]],
        }
    }

    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3::from_array(self.m[i])
    }

    pub fn col(&self, j: usize) -> Vec3<T> {
        vec3(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn transpose(&self) -> Self {
        Mat3::from_cols(self.row(0), self.row(1), self.row(2))
    }

    pub fn det(&self) -> T {
        self.row(0).dot(self.row(1).cross(self.row(2)))
    }

    /// Inverse, or `None` if `|det| < eps`.
    pub fn try_inverse(&self, eps: T) -> Option<Self> {
        let det = self.det();
        if det.abs() < eps || !det.is_finite() {
            return None;
        }
        let (r0, r1, r2) = (self.row(0), self.row(1), self.row(2));
        // Columns of the inverse are the cross products of rows, scaled.
        let c0 = r1.cross(r2) / det;
        let c1 = r2.cross(r0) / det;
        let c2 = r0.cross(r1) / det;
        Some(Mat3::from_cols(c0, c1, c2))
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for r in out.m.iter_mut() {
            for v in r.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] += o.m[i][j];
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Mat3<U> {
        let mut out = Mat3::<U>::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = U::lit(self.m[i][j].to_f64_lossy());
            }
        }
        out
    }

    /// Largest absolute entry of `self·selfᵀ − I`.
    pub fn orthonormality_error(&self) -> T {
        let p = *self * self.transpose();
        let id = Mat3::identity();
        let mut e = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                e = e.max((p.m[i][j] - id.m[i][j]).abs());
            }
        }
        e
    }
}

impl<T: Real> Mul<Vec3<T>> for Mat3<T> {
    type Output = Vec3<T>;
    #[inline]
    fn mul(self, v: Vec3<T>) -> Vec3<T> {
        vec3(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }
}

impl<T: Real> Mul for Mat3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut out = Mat3::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = self.row(i).dot(o.col(j));
            }
        }
        out
    }
}

/// Quaternion stored as `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Quat<T> {
    pub fn identity() -> Self {
        Quat {
            w: T::one(),
            x: T::zero(),
            y: T::zero(),
            z: T::zero(),
        }
    }

    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Quat { w, x, y, z }
    }

    /// Rotation by `angle` radians about `axis` (need not be unit).
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let a = axis.normalize();
        let half = angle / T::lit(2.0);
        let s = half.sin();
        Quat::new(half.cos(), a.x * s, a.y * s, a.z * s)
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn cast<U: Real>(self) -> Quat<U> {
        Quat::new(
            U::lit(self.w.to_f64_lossy()),
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }

    pub fn norm(self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalize(self) -> Self {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn to_mat3(self) -> Mat3<T> {
        let Quat { w, x, y, z } = self;
        let two = T::lit(2.0);
        let one = T::one();
        Mat3::from_rows([
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
        ])
    }

    pub fn rotate(self, v: Vec3<T>) -> Vec3<T> {
        self.to_mat3() * v
    }

    /// Rotation angle in `[0, π]` between two unit quaternions.
    pub fn angle_to(self, o: Self) -> T {
        let d = (self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z).abs();
        T::lit(2.0) * d.min(T::one()).acos()
    }
}

impl<T: Real> Mul for Quat<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

/// Affine map `x ↦ linear·x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine<T> {
    pub linear: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Affine<T> {
    pub fn identity() -> Self {
        Affine {
            linear: Mat3::identity(),
            translation: Vec3::zero(),
        }
    }

    pub fn zero() -> Self {
        Affine {
            linear: Mat3::zero(),
            translation: Vec3::zero(),
        }
    }

    pub fn translation(t: Vec3<T>) -> Self {
        Affine {
            linear: Mat3::identity(),
            translation: t,
        }
    }

    pub fn rotation(q: Quat<T>) -> Self {
        Affine {
            linear: q.to_mat3(),
            translation: Vec3::zero(),
        }
    }

    #[inline]
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        self.linear * p + self.translation
    }

    /// `self ∘ o`: apply `o` first.
    pub fn compose(&self, o: &Self) -> Self {
        Affine {
            linear: self.linear * o.linear,
            translation: self.linear * o.translation + self.translation,
        }
    }

    pub fn try_inverse(&self, eps: T) -> Option<Self> {
        let inv = self.linear.try_inverse(eps)?;
        Some(Affine {
            linear: inv,
            translation: -(inv * self.translation),
        })
    }

    /// Accumulate `w·o` into `self` (blend of transforms).
    pub fn add_scaled(&mut self, o: &Self, w: T) {
        self.linear = self.linear.add(&o.linear.scale(w));
        self.translation += o.translation * w;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quaternion_matches_axis_angle_rotation() {
        let q = Quat::from_axis_angle(vec3(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2);
        let r = q.rotate(vec3(1.0, 0.0, 0.0));
        assert!((r - vec3(0.0, 1.0, 0.0)).norm() < 1e-15);
        let m = q.to_mat3();
        assert!(m.orthonormality_error() < 1e-15);
        assert!((m.det() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quaternion_product_composes_rotations() {
        let a = Quat::from_axis_angle(vec3(1.0f64, 2.0, 0.5), 0.7);
        let b = Quat::from_axis_angle(vec3(-0.3, 1.0, 2.0), 1.3);
        let v = vec3(0.3, -0.2, 0.9);
        let lhs = (a * b).rotate(v);
        let rhs = a.rotate(b.rotate(v));
        assert!((lhs - rhs).norm() < 1e-14);
        assert!((a.angle_to(a * Quat::from_axis_angle(vec3(0.0, 1.0, 0.0), 0.4)) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn affine_inverse_round_trip() {
        let a = Affine {
            linear: Quat::from_axis_angle(vec3(1.0, 1.0, 0.0), 0.4).to_mat3().scale(1.5),
            translation: vec3(0.1, -2.0, 3.0),
        };
        let inv = a.try_inverse(1e-12).unwrap();
        let p = vec3(0.5, 0.25, -1.0);
        assert!((inv.apply(a.apply(p)) - p).norm() < 1e-14);
        assert!(Affine::<f64>::zero().try_inverse(1e-12).is_none());
    }
}
