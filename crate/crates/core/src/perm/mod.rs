//! Permutation replicates, exact enumeration and Monte Carlo p-values.
//!
//! Replicate `r` of a Monte Carlo run uses the permutation drawn from stream `r` of
//! the `Perm` family, so the replicate vector is identical for any thread count.
//! When `n! <= max(n_reps, 50 000)` every permutation is enumerated instead.

mod enumerate;
mod kernel;
mod pvalue;
mod rng;

use rayon::prelude::*;
use serde::Serialize;

use crate::dyad::{DyadMatrix, Permutation};
use crate::error::{Error, Result};
use crate::regress::{check_design_nondegenerate, residualize, DyadDesign};
use crate::ustat::{check_degenerate, qap_estimates_with, Eta1Correction};

pub use enumerate::{all_permutations, factorial};
pub(crate) use kernel::{MrqapKernel, QapKernel};
pub use pvalue::{extreme_count, p_value, permutation_cdf, Mode, Tail, TIE_TOLERANCE};
pub use rng::{
    fisher_yates, random_permutation, replicate_permutation, stream_rng, uniform01, uniform_below, StreamLabel,
    RNG_ALGORITHM,
};

/// Enumeration is used whenever `n!` does not exceed this or the requested budget.
pub const EXACT_ENUMERATION_LIMIT: u64 = 50_000;

/// Monte Carlo budgets below this produce a warning in the report.
pub const MIN_MONTE_CARLO_REPS: usize = 100;

/// Which matrices are relabeled in MRQAP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Permute the outcome `A`.
    PermuteOutcome,
    /// Permute the focal regressors `B_k` together.
    PermuteFocal,
    /// Permute residuals of each `B_k` on `1` and the nuisance regressors.
    PermuteResidualFocal,
    /// Permute residuals of `A` on `1` and the nuisance regressors (Freedman–Lane).
    PermuteResidualOutcome,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::PermuteOutcome,
        Strategy::PermuteFocal,
        Strategy::PermuteResidualFocal,
        Strategy::PermuteResidualOutcome,
    ];

    /// Short CLI name: `a`, `b`, `eps-b`, `eps`.
    pub fn short_name(self) -> &'static str {
        match self {
            Strategy::PermuteOutcome => "a",
            Strategy::PermuteFocal => "b",
            Strategy::PermuteResidualFocal => "eps-b",
            Strategy::PermuteResidualOutcome => "eps",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "a" | "permute_outcome" => Ok(Strategy::PermuteOutcome),
            "b" | "permute_focal" => Ok(Strategy::PermuteFocal),
            "eps-b" | "permute_residual_focal" => Ok(Strategy::PermuteResidualFocal),
            "eps" | "permute_residual_outcome" => Ok(Strategy::PermuteResidualOutcome),
            other => Err(format!("unknown strategy `{other}` (expected a|b|eps-b|eps)")),
        }
    }
}

/// Test statistics. `Unstudentized`/`Studentized` are QAP statistics `√n ρ̂` and
/// `√n ρ̂ / v̂^{1/2}`; `CoefNorm`/`Wald` are MRQAP statistics `√n ϑ̂₁` (or `√n‖ϑ̂‖`
/// when `p > 1`) and `n ϑ̂ᵀ(FᵀV̂F)⁻¹ϑ̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Unstudentized,
    Studentized,
    CoefNorm,
    Wald,
}

impl Statistic {
    pub fn tail(self, p: usize) -> Tail {
        match self {
            Statistic::Wald => Tail::Upper,
            Statistic::CoefNorm if p > 1 => Tail::Upper,
            _ => Tail::TwoSided,
        }
    }

    pub fn is_qap(self) -> bool {
        matches!(self, Statistic::Unstudentized | Statistic::Studentized)
    }
}

/// Outcome of a permutation test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationReport {
    pub statistic: Statistic,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    pub observed: f64,
    /// Replicate values in replicate order (enumeration order in exact mode).
    pub replicates: Vec<f64>,
    pub p_value: f64,
    pub tail: Tail,
    pub mode: Mode,
    pub n_reps: usize,
    pub seed: u64,
    pub rng_algorithm: String,
    pub warnings: Vec<String>,
}

/// Budget, seed and variance convention shared by every run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationOptions {
    pub n_reps: usize,
    pub seed: u64,
    pub correction: Eta1Correction,
}

impl PermutationOptions {
    pub fn new(n: usize, n_reps: usize, seed: u64) -> Self {
        Self { n_reps, seed, correction: Eta1Correction::default_for(n) }
    }
}

/// The permutations a run will evaluate, in replicate order.
#[derive(Debug, Clone)]
pub struct ReplicatePlan {
    pub mode: Mode,
    perms: Vec<Permutation>,
}

impl ReplicatePlan {
    pub fn new(n: usize, n_reps: usize, seed: u64) -> Self {
        let exact = factorial(n).is_some_and(|f| f <= (n_reps as u64).max(EXACT_ENUMERATION_LIMIT));
        if exact {
            Self { mode: Mode::ExactEnumeration, perms: all_permutations(n) }
        } else {
            let perms = (0..n_reps as u64).into_par_iter().map(|r| replicate_permutation(seed, r, n)).collect();
            Self { mode: Mode::MonteCarlo, perms }
        }
    }

    pub fn permutations(&self) -> &[Permutation] {
        &self.perms
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }
}

fn budget_warnings(mode: Mode, n_reps: usize) -> Vec<String> {
    if mode == Mode::MonteCarlo && n_reps < MIN_MONTE_CARLO_REPS {
        vec![Error::BudgetTooSmall { n_reps }.to_string()]
    } else {
        Vec::new()
    }
}

fn build_report(
    statistic: Statistic,
    strategy: Option<Strategy>,
    p: usize,
    observed: f64,
    replicates: Vec<f64>,
    plan: &ReplicatePlan,
    opts: &PermutationOptions,
) -> Result<PermutationReport> {
    let tail = statistic.tail(p);
    let p_value = p_value(observed, &replicates, tail, plan.mode)?;
    Ok(PermutationReport {
        statistic,
        strategy,
        observed,
        n_reps: replicates.len(),
        replicates,
        p_value,
        tail,
        mode: plan.mode,
        seed: opts.seed,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        warnings: budget_warnings(plan.mode, opts.n_reps),
    })
}

/// QAP: relabel `A` jointly on rows and columns and recompute the statistic against `B`.
pub fn run_qap(
    a: &DyadMatrix,
    b: &DyadMatrix,
    statistic: Statistic,
    opts: &PermutationOptions,
) -> Result<PermutationReport> {
    Ok(run_qap_multi(a, b, &[statistic], opts)?.remove(0))
}

/// [`run_qap`] for several statistics sharing the same replicates.
pub fn run_qap_multi(
    a: &DyadMatrix,
    b: &DyadMatrix,
    statistics: &[Statistic],
    opts: &PermutationOptions,
) -> Result<Vec<PermutationReport>> {
    if let Some(s) = statistics.iter().find(|s| !s.is_qap()) {
        return Err(Error::Config(format!("{s:?} is not a QAP statistic")));
    }
    // validates dimensions, degeneracy and the correction
    qap_estimates_with(a, b, opts.correction)?;
    let kernel = QapKernel::new(a, b, opts.correction)?;
    let n = kernel.n();
    let plan = ReplicatePlan::new(n, opts.n_reps, opts.seed);
    let observed = kernel.eval(Permutation::identity(n).as_slice(), &mut vec![0.0; n])?;
    let values = plan
        .permutations()
        .par_iter()
        .map_init(|| vec![0.0; n], |rows, pi| kernel.eval(pi.as_slice(), rows))
        .collect::<Result<Vec<_>>>()?;
    statistics
        .iter()
        .map(|&s| {
            let pick = |v: &kernel::QapValues| match s {
                Statistic::Studentized => v.studentized,
                _ => v.unstudentized,
            };
            build_report(s, None, 1, pick(&observed), values.iter().map(pick).collect(), &plan, opts)
        })
        .collect()
}

/// Kernel whose moving group implements `strategy`.
pub(crate) fn strategy_kernel(d: &DyadDesign, strategy: Strategy, correction: Eta1Correction) -> Result<MrqapKernel> {
    let (p, q) = (d.p(), d.q());
    let k = p + q;
    let nuisance: Vec<&DyadMatrix> = d.nuisance().iter().collect();
    match strategy {
        Strategy::PermuteOutcome => {
            let regs: Vec<&DyadMatrix> = d.regressors().collect();
            let moving = std::iter::once(true).chain(std::iter::repeat_n(false, k)).collect();
            MrqapKernel::new(d.outcome(), &regs, p, moving, correction)
        }
        Strategy::PermuteFocal => {
            let regs: Vec<&DyadMatrix> = d.regressors().collect();
            let moving = focal_moving(p, q);
            MrqapKernel::new(d.outcome(), &regs, p, moving, correction)
        }
        Strategy::PermuteResidualFocal => {
            let resid = residualize(d.focal(), d.nuisance())?;
            let regs: Vec<&DyadMatrix> = resid.iter().chain(nuisance.iter().copied()).collect();
            MrqapKernel::new(d.outcome(), &regs, p, focal_moving(p, q), correction)
        }
        Strategy::PermuteResidualOutcome => {
            let resid = residualize(std::slice::from_ref(d.outcome()), d.nuisance())?;
            let regs: Vec<&DyadMatrix> = d.regressors().collect();
            let moving = std::iter::once(true).chain(std::iter::repeat_n(false, k)).collect();
            MrqapKernel::new(&resid[0], &regs, p, moving, correction)
        }
    }
}

fn focal_moving(p: usize, q: usize) -> Vec<bool> {
    std::iter::once(false)
        .chain(std::iter::repeat_n(true, p))
        .chain(std::iter::repeat_n(false, q))
        .collect()
}

/// MRQAP under one of the four permutation strategies.
pub fn run_mrqap(
    d: &DyadDesign,
    strategy: Strategy,
    statistic: Statistic,
    opts: &PermutationOptions,
) -> Result<PermutationReport> {
    Ok(run_mrqap_multi(d, strategy, &[statistic], opts)?.remove(0))
}

/// [`run_mrqap`] for several statistics sharing the same replicates.
pub fn run_mrqap_multi(
    d: &DyadDesign,
    strategy: Strategy,
    statistics: &[Statistic],
    opts: &PermutationOptions,
) -> Result<Vec<PermutationReport>> {
    if let Some(s) = statistics.iter().find(|s| s.is_qap()) {
        return Err(Error::Config(format!("{s:?} is not an MRQAP statistic")));
    }
    check_design_nondegenerate(d)?;
    let n = d.n();
    let observed = strategy_kernel(d, Strategy::PermuteFocal, opts.correction)?
        .eval(Permutation::identity(n).as_slice(), &mut scratch_for(d, opts)?)?;
    let kernel = strategy_kernel(d, strategy, opts.correction)?;
    if strategy == Strategy::PermuteResidualOutcome {
        let resid = residualize(std::slice::from_ref(d.outcome()), d.nuisance())?;
        let nn = (n * (n - 1)) as f64;
        let var = 2.0 * resid[0].upper().map(|(_, _, v)| v * v).sum::<f64>() / nn;
        check_degenerate(var, d.outcome(), "outcome residual")?;
    }
    let plan = ReplicatePlan::new(n, opts.n_reps, opts.seed);
    let values = plan
        .permutations()
        .par_iter()
        .map_init(|| kernel.scratch(), |s, pi| kernel.eval(pi.as_slice(), s))
        .collect::<Result<Vec<_>>>()?;
    statistics
        .iter()
        .map(|&s| {
            let pick = |v: &kernel::MrqapValues| if s == Statistic::Wald { v.wald } else { v.coef };
            build_report(s, Some(strategy), d.p(), pick(&observed), values.iter().map(pick).collect(), &plan, opts)
        })
        .collect()
}

/// Observed QAP statistics `(unstudentized, studentized)` computed exactly as the
/// identity replicate of [`run_qap`].
pub(crate) fn qap_observed(a: &DyadMatrix, b: &DyadMatrix, correction: Eta1Correction) -> Result<(f64, f64)> {
    qap_estimates_with(a, b, correction)?;
    let kernel = QapKernel::new(a, b, correction)?;
    let n = kernel.n();
    let v = kernel.eval(Permutation::identity(n).as_slice(), &mut vec![0.0; n])?;
    Ok((v.unstudentized, v.studentized))
}

/// Observed MRQAP statistics `(coef, wald)` as reported by [`run_mrqap`].
pub(crate) fn mrqap_observed(d: &DyadDesign, correction: Eta1Correction) -> Result<(f64, f64)> {
    check_design_nondegenerate(d)?;
    let kernel = strategy_kernel(d, Strategy::PermuteFocal, correction)?;
    let v = kernel.eval(Permutation::identity(d.n()).as_slice(), &mut kernel.scratch())?;
    Ok((v.coef, v.wald))
}

fn scratch_for(d: &DyadDesign, opts: &PermutationOptions) -> Result<kernel::MrqapScratch> {
    Ok(strategy_kernel(d, Strategy::PermuteFocal, opts.correction)?.scratch())
}

#[cfg(test)]
mod tests;
