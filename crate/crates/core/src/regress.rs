//! Dyadic least squares, the first-order-projection variance `V̂`, its
//! cluster-robust counterpart, and Wald statistics.
//!
//! All regressions run on the `n(n-1)` off-diagonal dyads with an intercept. Working
//! with centered outcome and regressors, the normal equations reduce to the
//! `(p+q) × (p+q)` system `Σ̂ w = Σ̂_a`, which is solved through a symmetric
//! eigendecomposition so near-collinear covariate networks are detected.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::dyad::DyadMatrix;
use crate::error::{Error, Result};
use crate::numeric::{csum, CompensatedSum};
use crate::ustat::{check_degenerate, Eta1Correction};

/// Largest accepted condition number of `Σ̂` (and of `FᵀV̂F`).
pub const MAX_CONDITION: f64 = 1e12;

/// Fits whose residual sum of squares is below this fraction of the outcome's are
/// treated as exact, with `Ĥ₁,φ = 0`.
pub const PERFECT_FIT_TOLERANCE: f64 = 1e-12;

pub(crate) fn is_perfect_fit(ssr: f64, sst: f64) -> bool {
    ssr <= PERFECT_FIT_TOLERANCE * sst
}

/// Outcome `A`, focal regressors `B_1..B_p`, nuisance regressors `C_1..C_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadDesign {
    outcome: DyadMatrix,
    focal: Vec<DyadMatrix>,
    nuisance: Vec<DyadMatrix>,
}

impl DyadDesign {
    pub fn new(outcome: DyadMatrix, focal: Vec<DyadMatrix>, nuisance: Vec<DyadMatrix>) -> Result<Self> {
        if focal.is_empty() {
            return Err(Error::NoFocalRegressor);
        }
        let n = outcome.n();
        for m in focal.iter().chain(nuisance.iter()) {
            if m.n() != n {
                return Err(Error::DimensionMismatch { expected: n, got: m.n() });
            }
        }
        Ok(Self { outcome, focal, nuisance })
    }

    pub fn n(&self) -> usize {
        self.outcome.n()
    }

    pub fn p(&self) -> usize {
        self.focal.len()
    }

    pub fn q(&self) -> usize {
        self.nuisance.len()
    }

    pub fn outcome(&self) -> &DyadMatrix {
        &self.outcome
    }

    pub fn focal(&self) -> &[DyadMatrix] {
        &self.focal
    }

    pub fn nuisance(&self) -> &[DyadMatrix] {
        &self.nuisance
    }

    /// Focal regressors followed by nuisance regressors.
    pub fn regressors(&self) -> impl Iterator<Item = &DyadMatrix> {
        self.focal.iter().chain(self.nuisance.iter())
    }

    pub fn with_outcome(&self, outcome: DyadMatrix) -> Result<Self> {
        Self::new(outcome, self.focal.clone(), self.nuisance.clone())
    }

    pub fn with_focal(&self, focal: Vec<DyadMatrix>) -> Result<Self> {
        Self::new(self.outcome.clone(), focal, self.nuisance.clone())
    }
}

/// Which coefficients a Wald statistic tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    /// Every slope, `F = I_{p+q}`.
    Full,
    /// The focal slopes, `F = (I_p, 0)ᵀ`.
    Partial,
}

/// Result of [`fit_dyadic_ols`].
#[derive(Debug, Clone, PartialEq)]
pub struct DyadFit {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub intercept: f64,
    /// `(ϑ̂ᵀ, ϱ̂ᵀ)ᵀ`.
    pub coef: DVector<f64>,
    /// `ê_ij`, zero on the diagonal.
    pub residuals: DyadMatrix,
    pub sigma_hat: DMatrix<f64>,
    pub h1_phi_hat: DMatrix<f64>,
    pub v_hat: DMatrix<f64>,
    /// `F = (I_p, 0)ᵀ`.
    pub selection: DMatrix<f64>,
    pub correction: Eta1Correction,
}

impl DyadFit {
    /// Focal coefficients `ϑ̂ = Fᵀŵ`.
    pub fn theta(&self) -> DVector<f64> {
        self.coef.rows(0, self.p).into_owned()
    }

    /// `sqrt(V̂_kk / n)` for every slope.
    pub fn std_errors(&self) -> Vec<f64> {
        let n = self.n as f64;
        (0..self.coef.len()).map(|k| (self.v_hat[(k, k)] / n).sqrt()).collect()
    }
}

/// Inverse of a symmetric positive-definite matrix, rejecting condition numbers above
/// [`MAX_CONDITION`]. Returns the inverse and the condition number.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(max > 0.0) || !(condition <= MAX_CONDITION) {
        return None;
    }
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l);
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    Some((symmetrize(inv), condition))
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

pub(crate) fn solve_design(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_inverse(sigma)
        .map(|(inv, _)| inv)
        .ok_or_else(|| Error::SingularDesign { condition: condition_number(sigma) })
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Centered off-diagonal values, row-major with zero diagonal.
pub(crate) fn centered_values(m: &DyadMatrix) -> Vec<f64> {
    let n = m.n();
    let mean = m.off_diagonal_mean();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[i * n + j] = m.get(i, j) - mean;
            }
        }
    }
    out
}

/// `(Σ̂, Σ̂_a)` with the `1/{n(n-1)}` normalizer, from centered arrays.
fn covariance_blocks(n: usize, y: &[f64], xs: &[Vec<f64>]) -> (DMatrix<f64>, DVector<f64>) {
    let k = xs.len();
    let nn = (n * (n - 1)) as f64;
    let mut sxx = vec![CompensatedSum::new(); k * k];
    let mut sxy = vec![CompensatedSum::new(); k];
    for i in 0..n {
        for j in (i + 1)..n {
            let idx = i * n + j;
            for a in 0..k {
                let xa = xs[a][idx];
                sxy[a].add(xa * y[idx]);
                for b in a..k {
                    sxx[a * k + b].add(xa * xs[b][idx]);
                }
            }
        }
    }
    let sigma = DMatrix::from_fn(k, k, |a, b| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        2.0 * sxx[lo * k + hi].value() / nn
    });
    let sigma_a = DVector::from_fn(k, |a, _| 2.0 * sxy[a].value() / nn);
    (sigma, sigma_a)
}

/// Least-squares fit of `A` on an intercept plus every regressor in `d`.
pub fn fit_dyadic_ols(d: &DyadDesign, correction: Eta1Correction) -> Result<DyadFit> {
    let n = d.n();
    let (p, q) = (d.p(), d.q());
    let k = p + q;
    let factor = correction.factor(n)?;
    let nf = n as f64;

    let y = centered_values(d.outcome());
    let xs: Vec<Vec<f64>> = d.regressors().map(centered_values).collect();
    let (sigma_hat, sigma_a) = covariance_blocks(n, &y, &xs);
    let sigma_inv = solve_design(&sigma_hat)?;
    let coef = &sigma_inv * &sigma_a;

    let means: Vec<f64> = d.regressors().map(DyadMatrix::off_diagonal_mean).collect();
    let intercept = d.outcome().off_diagonal_mean() - means.iter().zip(coef.iter()).map(|(m, c)| m * c).sum::<f64>();

    let resid = |idx: usize| y[idx] - (0..k).map(|a| xs[a][idx] * coef[a]).sum::<f64>();
    let residuals = DyadMatrix::from_upper_fn(n, |i, j| resid(i * n + j));
    let ssr = csum(residuals.upper().map(|(_, _, e)| e * e));
    let sst = csum(d.outcome().upper().map(|(i, j, _)| y[i * n + j] * y[i * n + j]));
    let exact = is_perfect_fit(ssr, sst);

    let mut h = DMatrix::<f64>::zeros(k, k);
    let mut phi = vec![0.0; k];
    for i in 0..n {
        phi.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            if j == i {
                continue;
            }
            let idx = i * n + j;
            let e = residuals.get(i, j);
            for a in 0..k {
                phi[a] += e * xs[a][idx];
            }
        }
        for a in 0..k {
            for b in 0..k {
                h[(a, b)] += (phi[a] / (nf - 1.0)) * (phi[b] / (nf - 1.0));
            }
        }
    }
    let h1_phi_hat = if exact { DMatrix::zeros(k, k) } else { symmetrize(h * factor) };
    let v_hat = symmetrize(&sigma_inv * &h1_phi_hat * &sigma_inv * 4.0);
    let selection = DMatrix::from_fn(k, p, |r, c| if r == c { 1.0 } else { 0.0 });

    Ok(DyadFit {
        n,
        p,
        q,
        intercept,
        coef,
        residuals,
        sigma_hat,
        h1_phi_hat,
        v_hat,
        selection,
        correction,
    })
}

/// `W = n · (Fᵀŵ)ᵀ (FᵀV̂F)⁻¹ (Fᵀŵ)`.
pub fn wald_statistic(f: &DyadFit, subset: Subset) -> Result<f64> {
    let m = match subset {
        Subset::Full => f.coef.len(),
        Subset::Partial => f.p,
    };
    wald_from_parts(f.n, &f.coef, &f.v_hat, m)
}

/// Wald statistic on the leading `m` coefficients.
pub(crate) fn wald_from_parts(n: usize, coef: &DVector<f64>, v_hat: &DMatrix<f64>, m: usize) -> Result<f64> {
    let theta = coef.rows(0, m).into_owned();
    let block = v_hat.view((0, 0), (m, m)).into_owned();
    let (inv, _) = spd_inverse(&block).ok_or(Error::SingularVariance)?;
    let w = (n as f64) * theta.dot(&(&inv * &theta));
    Ok(w.max(0.0))
}

/// Liang–Zeger sandwich over the `n` column clusters, with the diagonals of the
/// outcome and every regressor filled with their off-diagonal means.
///
/// Returns the `(p+q+1) × (p+q+1)` matrix ordered (intercept, slopes). Under the Sen
/// convention its slope block equals `(n-2)(n-4) / {4n²(n-1)} · V̂` exactly.
pub fn cluster_robust_variance(d: &DyadDesign, f: &DyadFit) -> Result<DMatrix<f64>> {
    let n = d.n();
    let k = d.p() + d.q() + 1;
    let fill = |m: &DyadMatrix, i: usize, j: usize, mean: f64| if i == j { mean } else { m.get(i, j) };
    let amean = d.outcome().off_diagonal_mean();
    let regs: Vec<(&DyadMatrix, f64)> = d.regressors().map(|m| (m, m.off_diagonal_mean())).collect();
    let mut beta = vec![f.intercept];
    beta.extend(f.coef.iter());

    let mut bread = DMatrix::<f64>::zeros(k, k);
    let mut meat = DMatrix::<f64>::zeros(k, k);
    let mut x = vec![0.0; k];
    let mut score = DVector::<f64>::zeros(k);
    for g in 0..n {
        score.fill(0.0);
        for i in 0..n {
            x[0] = 1.0;
            for (c, (m, mean)) in regs.iter().enumerate() {
                x[c + 1] = fill(m, i, g, *mean);
            }
            let y = fill(d.outcome(), i, g, amean);
            let e = y - x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>();
            for a in 0..k {
                score[a] += x[a] * e;
                for b in 0..k {
                    bread[(a, b)] += x[a] * x[b];
                }
            }
        }
        meat += &score * score.transpose();
    }
    let bread_inv = solve_design(&bread)?;
    Ok(symmetrize(&bread_inv * meat * &bread_inv))
}

/// OLS residuals of each target on an intercept plus `controls`, as dyad matrices
/// with zero diagonal.
pub fn residualize(targets: &[DyadMatrix], controls: &[DyadMatrix]) -> Result<Vec<DyadMatrix>> {
    let Some(first) = targets.first().or(controls.first()) else {
        return Ok(Vec::new());
    };
    let n = first.n();
    for m in targets.iter().chain(controls) {
        if m.n() != n {
            return Err(Error::DimensionMismatch { expected: n, got: m.n() });
        }
    }
    let xs: Vec<Vec<f64>> = controls.iter().map(centered_values).collect();
    targets
        .iter()
        .map(|t| {
            let y = centered_values(t);
            if xs.is_empty() {
                return Ok(DyadMatrix::from_upper_fn(n, |i, j| y[i * n + j]));
            }
            let (sigma, sigma_a) = covariance_blocks(n, &y, &xs);
            let coef = solve_design(&sigma)? * sigma_a;
            Ok(DyadMatrix::from_upper_fn(n, |i, j| {
                let idx = i * n + j;
                y[idx] - xs.iter().zip(coef.iter()).map(|(x, c)| x[idx] * c).sum::<f64>()
            }))
        })
        .collect()
}

/// Rejects constant outcome or regressor networks before fitting.
pub fn check_design_nondegenerate(d: &DyadDesign) -> Result<()> {
    let named = std::iter::once(("outcome".to_string(), d.outcome()))
        .chain(d.focal().iter().enumerate().map(|(k, m)| (format!("focal[{k}]"), m)))
        .chain(d.nuisance().iter().enumerate().map(|(k, m)| (format!("nuisance[{k}]"), m)));
    for (name, m) in named {
        let c = centered_values(m);
        let nn = (m.n() * (m.n() - 1)) as f64;
        let var = c.iter().map(|v| v * v).sum::<f64>() / nn;
        check_degenerate(var, m, &name)?;
    }
    Ok(())
}
