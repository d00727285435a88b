//! Scalar abstraction shared by `f64` and second-order hyper-dual numbers.
//!
//! Every task map, chart embedding and kinematic chain in this crate is written
//! once, generically over [`Real`]. Evaluating it on [`HyperDual`] inputs seeded
//! with a unit direction and the current velocity yields the value, one column of
//! the Jacobian, and the matching column of the Jacobian time derivative in a
//! single pass, with no truncation error.

use alloc::vec::Vec;
use core::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use nalgebra::{DMatrix, DVector};

/// Minimal real-number interface used by the generic geometry code.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(v: f64) -> Self;
    /// Real (primal) part.
    fn re(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn atan(self) -> Self;
    fn acos(self) -> Self;
    fn atan2(self, x: Self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
    fn powi(self, n: i32) -> Self {
        let mut acc = Self::one();
        let base = if n < 0 { Self::one() / self } else { self };
        for _ in 0..n.unsigned_abs() {
            acc *= base;
        }
        acc
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn sin(self) -> Self {
        libm::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        libm::cos(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        libm::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        libm::log(self)
    }
    #[inline]
    fn atan(self) -> Self {
        libm::atan(self)
    }
    #[inline]
    fn acos(self) -> Self {
        libm::acos(self)
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        libm::atan2(self, x)
    }
}

/// Hyper-dual number `re + e1·ε₁ + e2·ε₂ + e12·ε₁ε₂` with `ε₁² = ε₂² = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct HyperDual {
    pub re: f64,
    pub e1: f64,
    pub e2: f64,
    pub e12: f64,
}

impl HyperDual {
    pub const fn new(re: f64, e1: f64, e2: f64, e12: f64) -> Self {
        Self { re, e1, e2, e12 }
    }

    /// Applies a scalar function given its value and first two derivatives at `re`.
    #[inline]
    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        Self {
            re: f,
            e1: df * self.e1,
            e2: df * self.e2,
            e12: df * self.e12 + d2f * self.e1 * self.e2,
        }
    }
}

impl Add for HyperDual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.e1 + o.e1, self.e2 + o.e2, self.e12 + o.e12)
    }
}

impl Sub for HyperDual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.e1 - o.e1, self.e2 - o.e2, self.e12 - o.e12)
    }
}

impl Mul for HyperDual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.re * o.re,
            self.re * o.e1 + self.e1 * o.re,
            self.re * o.e2 + self.e2 * o.re,
            self.re * o.e12 + self.e1 * o.e2 + self.e2 * o.e1 + self.e12 * o.re,
        )
    }
}

impl Div for HyperDual {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.re;
        self * o.chain(inv, -inv * inv, 2.0 * inv * inv * inv)
    }
}

impl Neg for HyperDual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.re, -self.e1, -self.e2, -self.e12)
    }
}

impl AddAssign for HyperDual {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl SubAssign for HyperDual {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl MulAssign for HyperDual {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl Real for HyperDual {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::new(v, 0.0, 0.0, 0.0)
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    fn sin(self) -> Self {
        let (s, c) = (libm::sin(self.re), libm::cos(self.re));
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = (libm::sin(self.re), libm::cos(self.re));
        self.chain(c, -s, -c)
    }
    fn sqrt(self) -> Self {
        let r = libm::sqrt(self.re);
        self.chain(r, 0.5 / r, -0.25 / (r * self.re))
    }
    fn exp(self) -> Self {
        let e = libm::exp(self.re);
        self.chain(e, e, e)
    }
    fn ln(self) -> Self {
        let inv = 1.0 / self.re;
        self.chain(libm::log(self.re), inv, -inv * inv)
    }
    fn atan(self) -> Self {
        let a = self.re;
        let den = 1.0 + a * a;
        self.chain(libm::atan(a), 1.0 / den, -2.0 * a / (den * den))
    }
    fn acos(self) -> Self {
        let a = self.re;
        let s = 1.0 - a * a;
        let rs = libm::sqrt(s);
        self.chain(libm::acos(a), -1.0 / rs, -a / (s * rs))
    }
    fn atan2(self, x: Self) -> Self {
        // Rotate into the frame of the primal point so the remaining angle is a
        // smooth atan around zero.
        let (y0, x0) = (self.re, x.re);
        let base = libm::atan2(y0, x0);
        let cross = Self::cst(x0) * self - Self::cst(y0) * x;
        let dot = Self::cst(x0) * x + Self::cst(y0) * self;
        let mut out = (cross / dot).atan();
        out.re = base;
        out
    }
}

/// Value, Jacobian and Jacobian time-derivative of a smooth map at `(q, q̇)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub value: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub jacobian_dot: DMatrix<f64>,
}

impl Jet {
    /// `J̇ q̇`, the velocity-product term of the map's acceleration.
    pub fn jdot_qd(&self, qd: &DVector<f64>) -> DVector<f64> {
        &self.jacobian_dot * qd
    }
}

/// Evaluates `f` with hyper-dual seeds to obtain its [`Jet`] at `(q, qd)`.
///
/// Column `j` is seeded with `ε₁` along `e_j` and `ε₂` along `qd`, so the `ε₁ε₂`
/// part of the output is `Σ_k ∂²f/∂q_j∂q_k q̇_k = J̇[:, j]`.
pub fn jet<E, F>(q: &[f64], qd: &[f64], f: F) -> Result<Jet, E>
where
    F: Fn(&[HyperDual]) -> Result<Vec<HyperDual>, E>,
{
    debug_assert_eq!(q.len(), qd.len());
    let m = q.len();
    let mut seeded: Vec<HyperDual> = q
        .iter()
        .zip(qd)
        .map(|(&x, &v)| HyperDual::new(x, 0.0, v, 0.0))
        .collect();
    let mut value = DVector::zeros(0);
    let mut jacobian = DMatrix::zeros(0, m);
    let mut jacobian_dot = DMatrix::zeros(0, m);
    if m == 0 {
        let out = f(&seeded)?;
        let value = DVector::from_iterator(out.len(), out.iter().map(|h| h.re));
        return Ok(Jet {
            jacobian: DMatrix::zeros(out.len(), 0),
            jacobian_dot: DMatrix::zeros(out.len(), 0),
            value,
        });
    }
    for j in 0..m {
        seeded[j].e1 = 1.0;
        let out = f(&seeded)?;
        seeded[j].e1 = 0.0;
        if j == 0 {
            let s = out.len();
            value = DVector::from_iterator(s, out.iter().map(|h| h.re));
            jacobian = DMatrix::zeros(s, m);
            jacobian_dot = DMatrix::zeros(s, m);
        }
        for (i, h) in out.iter().enumerate() {
            jacobian[(i, j)] = h.e1;
            jacobian_dot[(i, j)] = h.e12;
        }
    }
    Ok(Jet {
        value,
        jacobian,
        jacobian_dot,
    })
}
