//! Point estimates and U-statistic variance components for the QAP correlation.

use serde::{Deserialize, Serialize};

use crate::dyad::DyadMatrix;
use crate::error::{Error, Result};
use crate::numeric::{csum, CompensatedSum};

/// Relative threshold below which an `η̂₂` estimate is treated as zero.
pub const DEGENERACY_THRESHOLD: f64 = 1e-14;

/// Finite-sample factor applied to the average of squared row projections.
///
/// `Plain` uses `1/n`. `Sen` uses `(n-1)/{(n-2)(n-4)}`, which makes the estimator
/// unbiased up to an `η₂/(n-4)` term and is required for the exact cluster-robust
/// identity in [`crate::regress::cluster_robust_variance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eta1Correction {
    Sen,
    Plain,
}

impl Eta1Correction {
    /// `Sen` for `n >= 8`, `Plain` below.
    pub fn default_for(n: usize) -> Self {
        if n >= 8 {
            Eta1Correction::Sen
        } else {
            Eta1Correction::Plain
        }
    }

    /// Multiplier applied to `Σ_i φ̂_i²` where `φ̂_i` is the inner row mean.
    pub fn factor(self, n: usize) -> Result<f64> {
        let nf = n as f64;
        match self {
            Eta1Correction::Plain => Ok(1.0 / nf),
            Eta1Correction::Sen if n > 4 => Ok((nf - 1.0) / ((nf - 2.0) * (nf - 4.0))),
            Eta1Correction::Sen => Err(Error::CorrectionUnavailable { n }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Eta1Correction::Sen => "sen",
            Eta1Correction::Plain => "plain",
        }
    }
}

impl std::str::FromStr for Eta1Correction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sen" => Ok(Eta1Correction::Sen),
            "plain" => Ok(Eta1Correction::Plain),
            other => Err(format!("unknown eta1 correction `{other}` (expected sen|plain)")),
        }
    }
}

/// Estimates for the QAP test of `A` against `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UStatEstimates {
    pub n: usize,
    pub phi0_hat: f64,
    pub eta2_alpha_hat: f64,
    pub eta2_beta_hat: f64,
    pub eta1_phi_hat: f64,
    pub rho_hat: f64,
    pub v_hat: f64,
    pub correction: Eta1Correction,
}

/// QAP estimates with the default first-order correction for `n`.
pub fn qap_estimates(a: &DyadMatrix, b: &DyadMatrix) -> Result<UStatEstimates> {
    qap_estimates_with(a, b, Eta1Correction::default_for(a.n()))
}

pub fn qap_estimates_with(
    a: &DyadMatrix,
    b: &DyadMatrix,
    correction: Eta1Correction,
) -> Result<UStatEstimates> {
    let n = a.n();
    if b.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.n() });
    }
    let nf = n as f64;
    let denom = nf * (nf - 1.0) - 1.0;
    let (abar, bbar) = (a.off_diagonal_mean(), b.off_diagonal_mean());

    // Row-wise accumulation; each row is compensated and rows are combined compensated.
    let mut cross_rows = vec![0.0; n];
    let mut aa = CompensatedSum::new();
    let mut bb = CompensatedSum::new();
    for (i, cross) in cross_rows.iter_mut().enumerate() {
        let (ra, rb) = (a.row(i), b.row(i));
        let mut c = CompensatedSum::new();
        for j in 0..n {
            if j == i {
                continue;
            }
            let (da, db) = (ra[j] - abar, rb[j] - bbar);
            c.add(da * db);
            aa.add(da * da);
            bb.add(db * db);
        }
        *cross = c.value();
    }
    let phi0_hat = csum(cross_rows.iter().copied()) / denom;
    let eta2_alpha_hat = aa.value() / denom;
    let eta2_beta_hat = bb.value() / denom;
    check_degenerate(eta2_alpha_hat, a, "a")?;
    check_degenerate(eta2_beta_hat, b, "b")?;

    let factor = correction.factor(n)?;
    let eta1_phi_hat = factor * csum(cross_rows.iter().map(|r| (r / (nf - 1.0)).powi(2)));
    let rho_hat = phi0_hat / (eta2_alpha_hat.sqrt() * eta2_beta_hat.sqrt());
    let v_hat = 4.0 * eta1_phi_hat / (eta2_alpha_hat * eta2_beta_hat);
    Ok(UStatEstimates {
        n,
        phi0_hat,
        eta2_alpha_hat,
        eta2_beta_hat,
        eta1_phi_hat,
        rho_hat,
        v_hat,
        correction,
    })
}

pub(crate) fn check_degenerate(eta2: f64, m: &DyadMatrix, which: &str) -> Result<()> {
    let scale = m.max_abs();
    if eta2 <= DEGENERACY_THRESHOLD * scale * scale {
        return Err(Error::DegenerateMatrix { which: which.to_string() });
    }
    Ok(())
}

/// `√n · ρ̂ / v̂^{1/2}`.
pub fn studentized_statistic(e: &UStatEstimates) -> Result<f64> {
    if !(e.v_hat > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((e.n as f64).sqrt() * e.rho_hat / e.v_hat.sqrt())
}

/// `√n · ρ̂`.
pub fn unstudentized_statistic(e: &UStatEstimates) -> f64 {
    (e.n as f64).sqrt() * e.rho_hat
}
