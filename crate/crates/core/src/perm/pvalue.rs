//! Permutation distribution functions and p-values.

use serde::Serialize;

use crate::error::{Error, Result};

/// Relative tolerance under which two statistic values are treated as tied.
/// Algebraically equal replicates can differ in the last bits after reordering sums.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// `1 - L(|W|) + L(-|W|)`, for signed statistics.
    TwoSided,
    /// `P(W^π >= W)`, for nonnegative quadratic forms.
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ExactEnumeration,
    MonteCarlo,
}

/// `L(t) = M⁻¹ Σ 1{W^π <= t}`.
pub fn permutation_cdf(replicates: &[f64], t: f64) -> Result<f64> {
    if replicates.is_empty() {
        return Err(Error::EmptyReplicates);
    }
    let below = replicates.iter().filter(|&&w| w <= t).count();
    Ok(below as f64 / replicates.len() as f64)
}

/// Number of replicates at least as extreme as `observed`.
pub fn extreme_count(observed: f64, replicates: &[f64], tail: Tail) -> usize {
    let tol = TIE_TOLERANCE * observed.abs().max(1.0);
    match tail {
        Tail::TwoSided => {
            let t = observed.abs();
            replicates.iter().filter(|&&w| w > t + tol || w <= -t + tol).count()
        }
        Tail::Upper => replicates.iter().filter(|&&w| w >= observed - tol).count(),
    }
}

/// Exact enumeration divides the extreme count by `n!`; Monte Carlo counts the
/// observed statistic as one extra replicate, `(1 + count) / (M + 1)`.
pub fn p_value(observed: f64, replicates: &[f64], tail: Tail, mode: Mode) -> Result<f64> {
    if replicates.is_empty() {
        return Err(Error::EmptyReplicates);
    }
    let count = extreme_count(observed, replicates, tail) as f64;
    let m = replicates.len() as f64;
    Ok(match mode {
        Mode::ExactEnumeration => count / m,
        Mode::MonteCarlo => (1.0 + count) / (m + 1.0),
    })
}
