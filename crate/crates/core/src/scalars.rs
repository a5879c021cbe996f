//! Root-of-unity arithmetic with `q = exp(iπ/r)` and real exponents.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::Mat;

pub type Scalar = Complex64;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_SEED: u64 = 0xC0FFEE;

/// Global knobs shared by every computation: the root of unity order `r`,
/// the modified trace normalization `d0` and the comparison tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    pub r: u32,
    pub rprime: u32,
    pub d0: f64,
    pub tol: f64,
}

impl Params {
    pub fn new(r: u32) -> Result<Self> {
        Self::with(r, 1.0, DEFAULT_TOL)
    }

    pub fn with(r: u32, d0: f64, tol: f64) -> Result<Self> {
        if r < 2 {
            return Err(Error::InvalidParams(format!("r must be >= 2, got {r}")));
        }
        if !(tol > 0.0) || !tol.is_finite() {
            return Err(Error::InvalidParams(format!("tol must be positive, got {tol}")));
        }
        if !d0.is_finite() {
            return Err(Error::InvalidParams("d0 must be finite".into()));
        }
        let rprime = if r % 2 == 1 { r } else { r / 2 };
        Ok(Self { r, rprime, d0, tol })
    }

    pub fn rf(&self) -> f64 {
        self.r as f64
    }

    /// `q^x = e^{iπx/r}`.
    pub fn qpow(&self, x: f64) -> Scalar {
        Complex64::from_polar(1.0, PI * x / self.rf())
    }

    /// `{x} = q^x - q^{-x} = 2i sin(πx/r)`.
    pub fn qnum(&self, x: f64) -> Scalar {
        Complex64::new(0.0, 2.0 * (PI * x / self.rf()).sin())
    }

    /// `[x] = {x}/{1}`, real for real `x`.
    pub fn qbracket(&self, x: f64) -> Scalar {
        self.qnum(x) / self.qnum(1.0)
    }

    /// `{n}! = {n}{n-1}...{1}`.
    pub fn qfact(&self, n: u32) -> Scalar {
        (1..=n).fold(Complex64::new(1.0, 0.0), |acc, k| acc * self.qnum(k as f64))
    }

    /// `[n]! = [n][n-1]...[1]`.
    pub fn qbracket_fact(&self, n: u32) -> Scalar {
        (1..=n).fold(Complex64::new(1.0, 0.0), |acc, k| acc * self.qbracket(k as f64))
    }

    pub fn approx_eq(&self, a: Scalar, b: Scalar) -> bool {
        approx_eq_tol(a, b, self.tol)
    }

    pub fn approx_eq_matrix(&self, a: &Mat, b: &Mat) -> bool {
        a.shape() == b.shape()
            && a.iter().zip(b.iter()).all(|(x, y)| approx_eq_tol(*x, *y, self.tol))
    }

    /// Modified dimension `d(V_α) = d0 {α}/{rα}`, with the continuous extension
    /// `d0 (-1)^{k(r+1)}/r` at `α = kr`.
    pub fn modified_dim(&self, alpha: f64) -> Result<f64> {
        modified_dim_with(self.r, self.d0, alpha)
    }

    /// Integer-ness test at the tolerance used for weights.
    pub fn is_integer(&self, x: f64) -> bool {
        (x - x.round()).abs() < WEIGHT_TOL
    }

    pub fn is_multiple_of_r(&self, x: f64) -> bool {
        let y = x / self.rf();
        (y - y.round()).abs() < WEIGHT_TOL / self.rf()
    }
}

/// Tolerance used to decide that two real weights coincide.
pub const WEIGHT_TOL: f64 = 1e-7;

pub fn approx_eq_tol(a: Scalar, b: Scalar, tol: f64) -> bool {
    (a - b).norm() <= tol * 1f64.max(a.norm()).max(b.norm())
}

pub(crate) fn modified_dim_with(r: u32, d0: f64, alpha: f64) -> Result<f64> {
    let rf = r as f64;
    let k = alpha / rf;
    if (k - k.round()).abs() < WEIGHT_TOL / rf {
        let k = k.round() as i64;
        let sign = if (k * (r as i64 + 1)).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        return Ok(d0 * sign / rf);
    }
    if (alpha - alpha.round()).abs() < WEIGHT_TOL {
        return Err(Error::Inadmissible(format!(
            "modified dimension undefined at integral alpha = {alpha} not in rZ"
        )));
    }
    Ok(d0 * (PI * alpha / rf).sin() / (PI * alpha).sin())
}

/// Relative residual `|a - b| / max(1, |b|)` used by verification reports.
pub fn residual(a: Scalar, b: Scalar) -> f64 {
    (a - b).norm() / 1f64.max(b.norm())
}
