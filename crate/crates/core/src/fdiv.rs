//! f-divergence generators with their closed-form convex-analysis companions.
//!
//! Each generator provides `f`, the inverse derivative `(f')^{-1}`, and the
//! positive-restricted conjugate `f₊*(y) = max_{x ≥ 0} x y − f(x)` together with its
//! derivative. The dual objectives only ever touch `f₊*` and `(f₊*)'`.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FDivergence {
    /// `x log x − x + 1` below 1, `(x − 1)²/2` above.
    #[serde(rename = "soft_chi2")]
    SoftChi2,
    /// `x log x − x + 1`.
    #[serde(rename = "kl")]
    Kl,
}

impl FDivergence {
    pub const ALL: [FDivergence; 2] = [FDivergence::SoftChi2, FDivergence::Kl];

    pub fn key(self) -> &'static str {
        match self {
            FDivergence::SoftChi2 => "soft_chi2",
            FDivergence::Kl => "kl",
        }
    }

    /// Generator value. `f(0)` is the limit value 1 for both generators.
    pub fn f(self, x: f64) -> Result<f64> {
        if x < 0.0 || x.is_nan() {
            return Err(Error::InvalidArgument(format!("f evaluated at {x}")));
        }
        Ok(self.f_unchecked(x))
    }

    fn f_unchecked(self, x: f64) -> f64 {
        let kl = |x: f64| if x == 0.0 { 1.0 } else { x * x.ln() - x + 1.0 };
        match self {
            FDivergence::SoftChi2 if x >= 1.0 => 0.5 * (x - 1.0) * (x - 1.0),
            _ => kl(x),
        }
    }

    /// `(f')^{-1}(y)`.
    pub fn f_prime_inverse(self, y: f64) -> f64 {
        match self {
            FDivergence::SoftChi2 if y >= 0.0 => y + 1.0,
            _ => y.exp(),
        }
    }

    /// `f₊*(y)`.
    pub fn conjugate_plus(self, y: f64) -> f64 {
        match self {
            FDivergence::SoftChi2 if y >= 0.0 => 0.5 * y * y + y,
            _ => y.exp_m1(),
        }
    }

    /// `(f₊*)'(y) = max(0, (f')^{-1}(y))`.
    pub fn conjugate_plus_prime(self, y: f64) -> f64 {
        self.f_prime_inverse(y).max(0.0)
    }

    /// `(f₊*)''(y)`; used by second-order diagnostics.
    pub fn conjugate_plus_second(self, y: f64) -> f64 {
        match self {
            FDivergence::SoftChi2 if y >= 0.0 => 1.0,
            _ => y.exp(),
        }
    }
}

impl fmt::Display for FDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for FDivergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FDivergence::ALL
            .into_iter()
            .find(|fd| fd.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown f-divergence '{s}' (expected soft_chi2 or kl)")))
    }
}

pub fn make_soft_chi2() -> FDivergence {
    FDivergence::SoftChi2
}

pub fn make_kl() -> FDivergence {
    FDivergence::Kl
}

/// `D_f(d || d_ref) = sum d_ref f(d / d_ref)`.
pub fn f_divergence(d: &Array2<f64>, d_ref: &Array2<f64>, fd: FDivergence) -> Result<f64> {
    if d.dim() != d_ref.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", d.dim(), d_ref.dim())));
    }
    let mut total = 0.0;
    for ((idx, &p), &q) in d.indexed_iter().zip(d_ref.iter()) {
        if q > 0.0 {
            total += q * fd.f(p / q)?;
        } else if p > 0.0 {
            return Err(Error::Support(idx.0, idx.1));
        }
    }
    Ok(total)
}
