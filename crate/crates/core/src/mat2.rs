//! Dense 2x2 complex matrices and the SU(1,1) subgroup.
//!
//! Everything in the cocycle, KAM and Gordon kernels is built from these. The
//! operator norm is computed from the closed-form singular values, never
//! through a general SVD.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Largest distance from the identity accepted by [`Mat2::log`].
pub const LOG_RADIUS: f64 = 0.5;

/// Row-major 2x2 complex matrix `[[m[0], m[1]], [m[2], m[3]]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub m: [C64; 4],
}

impl Default for Mat2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mat2 {
    pub const fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        Self { m: [a, b, c, d] }
    }

    pub const fn identity() -> Self {
        Self::new(ONE, ZERO, ZERO, ONE)
    }

    pub const fn zero() -> Self {
        Self::new(ZERO, ZERO, ZERO, ZERO)
    }

    pub fn diag(a: C64, d: C64) -> Self {
        Self::new(a, ZERO, ZERO, d)
    }

    pub fn from_real(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self::new(a.into(), b.into(), c.into(), d.into())
    }

    #[inline]
    pub fn det(&self) -> C64 {
        self.m[0] * self.m[3] - self.m[1] * self.m[2]
    }

    #[inline]
    pub fn trace(&self) -> C64 {
        self.m[0] + self.m[3]
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::new(self.m[0] * s, self.m[1] * s, self.m[2] * s, self.m[3] * s)
    }

    pub fn scale_re(&self, s: f64) -> Self {
        Self::new(self.m[0] * s, self.m[1] * s, self.m[2] * s, self.m[3] * s)
    }

    pub fn adjoint(&self) -> Self {
        Self::new(self.m[0].conj(), self.m[2].conj(), self.m[1].conj(), self.m[3].conj())
    }

    /// Inverse via the adjugate; `None` when the determinant vanishes exactly.
    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == ZERO {
            return None;
        }
        let inv = d.inv();
        Some(Self::new(self.m[3] * inv, -self.m[1] * inv, -self.m[2] * inv, self.m[0] * inv))
    }

    /// Adjugate: equals the inverse for determinant-one matrices and never divides.
    pub fn adjugate(&self) -> Self {
        Self::new(self.m[3], -self.m[1], -self.m[2], self.m[0])
    }

    #[inline]
    pub fn apply(&self, v: [C64; 2]) -> [C64; 2] {
        [self.m[0] * v[0] + self.m[1] * v[1], self.m[2] * v[0] + self.m[3] * v[1]]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.m.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }

    /// Both singular values, largest first.
    pub fn singular_values(&self) -> (f64, f64) {
        let c = self.max_abs();
        if c > 1e100 || (c < 1e-100 && c > 0.0) {
            let (s1, s2) = self.scale_re(1.0 / c).singular_values();
            return (s1 * c, s2 * c);
        }
        // s1 + s2 = sqrt(F^2 + 2|det|) and s1 - s2 = sqrt(F^2 - 2|det|); near s1 = s2 the
        // difference is taken from the matrix rotated to positive determinant, which avoids
        // the cancellation in F^2 - 2|det|.
        let f2 = self.frobenius_sq();
        let det = self.det();
        let d = det.norm();
        let sum = (f2 + 2.0 * d).sqrt();
        let diff = if 4.0 * d > f2 {
            let u = C64::from_polar(1.0, -det.arg() / 2.0);
            let [a, b, c, dd] = self.m.map(|e| e * u);
            ((a - dd.conj()).norm_sqr() + (b + c.conj()).norm_sqr()).sqrt()
        } else {
            (f2 - 2.0 * d).sqrt()
        };
        let s1 = (sum + diff) / 2.0;
        let s2 = if s1 > 0.0 { d / s1 } else { 0.0 };
        (s1, s2)
    }

    /// Operator 2-norm.
    #[inline]
    pub fn norm(&self) -> f64 {
        self.singular_values().0
    }

    /// Unit input vector that the matrix stretches the most.
    pub fn top_right_singular_vector(&self) -> [C64; 2] {
        let g = self.adjoint() * *self;
        let p = g.m[0].re;
        let q = g.m[1];
        let r = g.m[3].re;
        let half_gap = (((p - r) / 2.0).powi(2) + q.norm_sqr()).sqrt();
        let top = (p + r) / 2.0 + half_gap;
        let v1 = [q, C64::from(top - p)];
        let v2 = [C64::from(top - r), q.conj()];
        let n1 = (v1[0].norm_sqr() + v1[1].norm_sqr()).sqrt();
        let n2 = (v2[0].norm_sqr() + v2[1].norm_sqr()).sqrt();
        if n1.max(n2) < 1e-300 {
            return [ONE, ZERO];
        }
        if n1 >= n2 {
            [v1[0] / n1, v1[1] / n1]
        } else {
            [v2[0] / n2, v2[1] / n2]
        }
    }

    /// Matrix exponential through the traceless decomposition `X = (tr/2) I + X0`,
    /// using `X0^2 = -det(X0) I`.
    pub fn exp(&self) -> Self {
        let half_tr = self.trace() / 2.0;
        let x0 = *self - Self::identity().scale(half_tr);
        let delta = -x0.det();
        let s = delta.sqrt();
        let (cosh, sinhc) = if s.norm() < 1e-4 {
            let s2 = delta;
            (ONE + s2 / 2.0 + s2 * s2 / 24.0, ONE + s2 / 6.0 + s2 * s2 / 120.0)
        } else {
            (s.cosh(), s.sinh() / s)
        };
        let scale = half_tr.exp();
        (Self::identity().scale(cosh) + x0.scale(sinhc)).scale(scale)
    }

    /// Principal square root, valid near the identity.
    fn sqrt_near_identity(&self) -> Self {
        let s = self.det().sqrt();
        let t = (self.trace() + s * 2.0).sqrt();
        (*self + Self::identity().scale(s)).scale(t.inv())
    }

    /// Principal logarithm by inverse scaling and squaring.
    ///
    /// Refuses matrices farther than [`LOG_RADIUS`] from the identity in operator norm.
    pub fn log(&self) -> Result<Self> {
        let dist = (*self - Self::identity()).norm();
        if !(dist < LOG_RADIUS) {
            return Err(Error::Domain(format!(
                "matrix logarithm needs distance < {LOG_RADIUS} from identity, got {dist:.3e}"
            )));
        }
        let mut m = *self;
        let mut squarings = 0u32;
        while (m - Self::identity()).norm() > 0.05 && squarings < 30 {
            m = m.sqrt_near_identity();
            squarings += 1;
        }
        let e = m - Self::identity();
        // log(I + E) = E - E^2/2 + E^3/3 - ...; with |E| <= 0.05 the terms fall below
        // round-off within about a dozen orders.
        let mut term = e;
        let mut acc = e;
        for k in 2..=40 {
            term = term * e;
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            acc = acc + term.scale_re(sign / k as f64);
            if term.max_abs() < 1e-18 {
                break;
            }
        }
        Ok(acc.scale_re(f64::powi(2.0, squarings as i32)))
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    #[inline]
    fn mul(self, o: Mat2) -> Mat2 {
        let a = &self.m;
        let b = &o.m;
        Mat2::new(
            a[0] * b[0] + a[1] * b[2],
            a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2],
            a[2] * b[1] + a[3] * b[3],
        )
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.m[0] + o.m[0], self.m[1] + o.m[1], self.m[2] + o.m[2], self.m[3] + o.m[3])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(self.m[0] - o.m[0], self.m[1] - o.m[1], self.m[2] - o.m[2], self.m[3] - o.m[3])
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self.scale_re(-1.0)
    }
}

/// `[[a, b], [conj(b), conj(a)]]`; determinant `|a|^2 - |b|^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Su11Matrix {
    pub a: C64,
    pub b: C64,
}

impl Default for Su11Matrix {
    fn default() -> Self {
        Self::identity()
    }
}

impl Su11Matrix {
    pub const fn identity() -> Self {
        Self { a: ONE, b: ZERO }
    }

    pub fn to_mat2(&self) -> Mat2 {
        Mat2::new(self.a, self.b, self.b.conj(), self.a.conj())
    }

    /// Reads `a`, `b` off the first row; `None` if the second row breaks the pattern by more than `tol`.
    pub fn from_mat2(m: &Mat2, tol: f64) -> Option<Self> {
        let s = Self { a: m.m[0], b: m.m[1] };
        let dev = (m.m[2] - s.b.conj()).norm().max((m.m[3] - s.a.conj()).norm());
        (dev <= tol * (1.0 + m.max_abs())).then_some(s)
    }

    pub fn det(&self) -> f64 {
        self.a.norm_sqr() - self.b.norm_sqr()
    }

    pub fn inverse(&self) -> Self {
        Self { a: self.a.conj(), b: -self.b }
    }

    pub fn mul(&self, o: &Self) -> Self {
        Self { a: self.a * o.a + self.b * o.b.conj(), b: self.a * o.b + self.b * o.a.conj() }
    }

    /// Divides by `sqrt(det)` when the determinant has drifted past `1e-10`.
    pub fn renormalized(&self) -> Self {
        let d = self.det();
        if (d - 1.0).abs() > 1e-10 && d > 0.0 {
            let s = d.sqrt();
            Self { a: self.a / s, b: self.b / s }
        } else {
            *self
        }
    }

    /// Residual of `A* J A = J` with `J = diag(1, -1)`.
    pub fn form_residual(&self) -> f64 {
        let m = self.to_mat2();
        let j = Mat2::from_real(1.0, 0.0, 0.0, -1.0);
        (m.adjoint() * j * m - j).max_abs()
    }
}

/// Membership test for su(1,1): `X* J + J X = 0`.
pub fn su11_algebra_residual(x: &Mat2) -> f64 {
    let j = Mat2::from_real(1.0, 0.0, 0.0, -1.0);
    (x.adjoint() * j + j * *x).max_abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Mat2, b: &Mat2, tol: f64) -> bool {
        (*a - *b).max_abs() <= tol
    }

    #[test]
    fn norm_of_diagonal_is_largest_modulus() {
        let m = Mat2::diag(C64::new(0.0, 3.0), C64::new(-0.5, 0.0));
        assert!((m.norm() - 3.0).abs() < 1e-14);
        assert!((m.singular_values().1 - 0.5).abs() < 1e-14);
    }

    #[test]
    fn top_singular_vector_is_stretched_most() {
        let m = Mat2::new(C64::new(1.0, 2.0), C64::new(0.3, -1.0), C64::new(4.0, 0.0), C64::new(0.1, 0.1));
        let v = m.top_right_singular_vector();
        let w = m.apply(v);
        let stretch = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
        assert!((stretch - m.norm()).abs() < 1e-12 * m.norm());
    }

    #[test]
    fn exp_of_rotation_generator() {
        let t = 0.7;
        let x = Mat2::from_real(0.0, -t, t, 0.0);
        let r = Mat2::from_real(t.cos(), -t.sin(), t.sin(), t.cos());
        assert!(close(&x.exp(), &r, 1e-15));
    }

    #[test]
    fn exp_of_nilpotent_is_affine() {
        let x = Mat2::new(ZERO, C64::new(2.0, 1.0), ZERO, ZERO);
        assert!(close(&x.exp(), &(Mat2::identity() + x), 1e-15));
    }

    #[test]
    fn log_inverts_exp_near_identity() {
        let x = Mat2::new(C64::new(0.0, 0.2), C64::new(0.1, -0.05), C64::new(0.1, 0.05), C64::new(0.0, -0.2));
        let back = x.exp().log().unwrap();
        assert!(close(&back, &x, 1e-14));
    }

    #[test]
    fn log_refuses_far_matrices() {
        let m = Mat2::diag(C64::new(2.0, 0.0), C64::new(0.5, 0.0));
        assert!(m.log().is_err());
    }

    #[test]
    fn su11_product_matches_dense_product() {
        let p = Su11Matrix { a: C64::new(1.2, 0.3), b: C64::new(0.4, -0.5) };
        let q = Su11Matrix { a: C64::new(-0.7, 1.1), b: C64::new(0.2, 0.9) };
        assert!(close(&p.mul(&q).to_mat2(), &(p.to_mat2() * q.to_mat2()), 1e-14));
        assert!(close(&p.mul(&p.inverse()).to_mat2(), &Mat2::identity().scale_re(p.det()), 1e-14));
    }
}
