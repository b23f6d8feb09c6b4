//! Synthetic dyadic data, asymptotic reference laws and simulation experiments.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::dyad::DyadMatrix;
use crate::error::{Error, Result};
use crate::perm::{
    run_mrqap_multi, run_qap_multi, stream_rng, uniform01, PermutationOptions, Statistic, Strategy, StreamLabel,
};
use crate::perm::{mrqap_observed, qap_observed};
use crate::regress::DyadDesign;
use crate::ustat::Eta1Correction;

/// How a kernel combines two unit features.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `(r + r') / √2`.
    PairwiseAverage,
    /// A named kernel; only `product` (`r r'`) is known.
    Custom(String),
}

/// Joint law of the unit features `(R, S)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureModel {
    /// `U ~ Unif[0, 2π]`, `(R, S) = (√2 sin U, √2 cos U)`.
    CircleUV,
    /// `U ~ Unif[-2π, 2π]`, `R = sinh(3U) / sqrt(sinh(12π)/(24π) - 1/2)`, `S = √2 cos U`.
    SinhCos,
    /// `(T, S)` standard bivariate normal with correlation `corr_st`, `R = T·Z`.
    BivariateNormalProduct { corr_st: f64 },
    /// `(R, S)` standard bivariate normal with correlation `rho_rs`.
    IidBivariateNormal { rho_rs: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub feature_model: FeatureModel,
    pub params: BTreeMap<String, f64>,
}

impl KernelSpec {
    pub fn pairwise(feature_model: FeatureModel) -> Self {
        Self { kind: KernelKind::PairwiseAverage, feature_model, params: BTreeMap::new() }
    }

    pub fn setting1() -> Self {
        Self::pairwise(FeatureModel::CircleUV)
    }

    pub fn setting2() -> Self {
        Self::pairwise(FeatureModel::SinhCos)
    }

    /// Independent standard normal features.
    pub fn strong_null() -> Self {
        Self::pairwise(FeatureModel::IidBivariateNormal { rho_rs: 0.0 })
    }

    fn kernel(&self) -> Result<fn(f64, f64) -> f64> {
        match &self.kind {
            KernelKind::PairwiseAverage => Ok(|r, s| (r + s) / SQRT_2),
            KernelKind::Custom(name) if name == "product" => Ok(|r, s| r * s),
            KernelKind::Custom(name) => Err(Error::UnknownSpec(name.clone())),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Normalizer making the Setting 2 `R` feature unit-variance.
fn sinh_scale() -> f64 {
    ((12.0 * PI).sinh() / (24.0 * PI) - 0.5).sqrt()
}

/// One unit's `(R, S)` draw.
pub fn draw_features(model: FeatureModel, rng: &mut ChaCha8Rng) -> (f64, f64) {
    match model {
        FeatureModel::CircleUV => {
            let u = 2.0 * PI * uniform01(rng);
            (SQRT_2 * u.sin(), SQRT_2 * u.cos())
        }
        FeatureModel::SinhCos => {
            let u = 4.0 * PI * uniform01(rng) - 2.0 * PI;
            ((3.0 * u).sinh() / sinh_scale(), SQRT_2 * u.cos())
        }
        FeatureModel::BivariateNormalProduct { corr_st } => {
            let (t, s) = correlated_normals(corr_st, rng);
            (t * normal(rng), s)
        }
        FeatureModel::IidBivariateNormal { rho_rs } => correlated_normals(rho_rs, rng),
    }
}

fn correlated_normals(rho: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let x = normal(rng);
    let y = normal(rng);
    (x, rho * x + (1.0 - rho * rho).max(0.0).sqrt() * y)
}

fn pair_from_rng(spec: &KernelSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<(DyadMatrix, DyadMatrix)> {
    if n < 3 {
        return Err(Error::TooSmall { n });
    }
    let kernel = spec.kernel()?;
    let (r, s): (Vec<f64>, Vec<f64>) = (0..n).map(|_| draw_features(spec.feature_model, rng)).unzip();
    Ok((
        DyadMatrix::from_upper_fn(n, |i, j| kernel(r[i], r[j])),
        DyadMatrix::from_upper_fn(n, |i, j| kernel(s[i], s[j])),
    ))
}

/// `a_ij = α(R_i, R_j)`, `b_ij = β(S_i, S_j)` from `n` i.i.d. feature draws.
pub fn generate_dyadic_pair(spec: &KernelSpec, n: usize, seed: u64) -> Result<(DyadMatrix, DyadMatrix)> {
    pair_from_rng(spec, n, &mut stream_rng(seed, StreamLabel::Data, 0))
}

/// Parameters of the linear dyadic model `a_ij = ϑ₀ + ϑ₁ b_ij + ϱ c_ij + e_ij` with
/// `e_ij = eps_scale · ε(R_i, R_j) + zeta_sd · ζ_ij`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MrqapParams {
    pub theta0: f64,
    pub theta1: f64,
    pub varrho: f64,
    pub corr_st: f64,
    pub eps_scale: f64,
    pub zeta_sd: f64,
}

impl Default for MrqapParams {
    fn default() -> Self {
        Self { theta0: 0.0, theta1: 0.0, varrho: 1.0, corr_st: 0.5, eps_scale: 1.0, zeta_sd: 1.0 }
    }
}

impl MrqapParams {
    /// `(R, T) ⊥ S` with a zero focal coefficient.
    pub fn strong_null() -> Self {
        Self { corr_st: 0.0, ..Self::default() }
    }
}

fn design_from_rng(n: usize, prm: &MrqapParams, rng: &mut ChaCha8Rng) -> Result<DyadDesign> {
    if n < 3 {
        return Err(Error::TooSmall { n });
    }
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut r = vec![0.0; n];
    for i in 0..n {
        let (ti, si) = correlated_normals(prm.corr_st, rng);
        t[i] = ti;
        s[i] = si;
        r[i] = ti * normal(rng);
    }
    let avg = |x: &[f64], i: usize, j: usize| (x[i] + x[j]) / SQRT_2;
    let b = DyadMatrix::from_upper_fn(n, |i, j| avg(&s, i, j));
    let c = DyadMatrix::from_upper_fn(n, |i, j| avg(&t, i, j));
    let a = DyadMatrix::from_upper_fn(n, |i, j| {
        let e = prm.eps_scale * avg(&r, i, j) + prm.zeta_sd * normal(rng);
        prm.theta0 + prm.theta1 * b.get(i, j) + prm.varrho * c.get(i, j) + e
    });
    DyadDesign::new(a, vec![b], vec![c])
}

/// Outcome `A`, focal `B = β(S)`, nuisance `C = γ(T)` from the linear dyadic model.
pub fn generate_mrqap_design(n: usize, params: &MrqapParams, seed: u64) -> Result<DyadDesign> {
    design_from_rng(n, params, &mut stream_rng(seed, StreamLabel::Data, 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    WeakNull,
    StrongNull,
}

/// Limiting law of a test statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum Law {
    Normal { mean: f64, var: f64 },
    ChiSquare { df: f64 },
}

impl Law {
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Law::Normal { mean, var } => Normal::new(mean, var.sqrt()).expect("positive variance").cdf(x),
            Law::ChiSquare { df } => ChiSquared::new(df).expect("positive df").cdf(x),
        }
    }

    /// Two-sided critical value for normal laws, upper quantile for chi-square.
    pub fn critical_value(&self, alpha: f64) -> f64 {
        match *self {
            Law::Normal { var, .. } => {
                Normal::new(0.0, var.sqrt()).expect("positive variance").inverse_cdf(1.0 - alpha / 2.0)
            }
            Law::ChiSquare { df } => ChiSquared::new(df).expect("positive df").inverse_cdf(1.0 - alpha),
        }
    }

    /// Whether `x` falls in the rejection region at level `alpha`; normal laws are
    /// centered at their mean.
    pub fn rejects(&self, x: f64, alpha: f64) -> bool {
        match *self {
            Law::Normal { mean, .. } => (x - mean).abs() > self.critical_value(alpha),
            Law::ChiSquare { .. } => x > self.critical_value(alpha),
        }
    }
}

/// `E[(RS)²]` for Setting 2, in closed form.
pub fn setting2_variance() -> f64 {
    let c = (12.0 * PI).sinh() / (24.0 * PI) - 0.5;
    (19.0 / 30.0 * (12.0 * PI).sinh() - 4.0 * PI) / (8.0 * PI * c)
}

/// Asymptotic law of `√n ρ̂` (or of the MRQAP statistics for the product-feature
/// model) under the given null.
pub fn asymptotic_reference(spec: &KernelSpec, statistic: Statistic, hypothesis: Hypothesis) -> Result<Law> {
    if spec.kind != KernelKind::PairwiseAverage {
        return Err(Error::NoClosedForm);
    }
    match statistic {
        Statistic::Studentized => return Ok(Law::Normal { mean: 0.0, var: 1.0 }),
        Statistic::Wald => return Ok(Law::ChiSquare { df: 1.0 }),
        _ => {}
    }
    if hypothesis == Hypothesis::StrongNull {
        // 4 η₁,α η₁,β / (η₂,α η₂,β) with η₁ = 1/2, η₂ = 1
        return Ok(Law::Normal { mean: 0.0, var: 1.0 });
    }
    let var = match (spec.feature_model, statistic) {
        (FeatureModel::CircleUV, Statistic::Unstudentized) => 0.5,
        (FeatureModel::SinhCos, Statistic::Unstudentized) => setting2_variance(),
        (FeatureModel::IidBivariateNormal { rho_rs }, Statistic::Unstudentized) if rho_rs == 0.0 => 1.0,
        // R = T·Z: E[(RS)²] = E[T²S²] = 1 + 2c²
        (FeatureModel::BivariateNormalProduct { corr_st }, Statistic::Unstudentized) => 1.0 + 2.0 * corr_st * corr_st,
        // √n ϑ̂₁ in the linear model: E[T²(S - cT)²] / (1 - c²)² = 1 / (1 - c²)
        (FeatureModel::BivariateNormalProduct { corr_st }, Statistic::CoefNorm) => 1.0 / (1.0 - corr_st * corr_st),
        _ => return Err(Error::NoClosedForm),
    };
    Ok(Law::Normal { mean: 0.0, var })
}

/// Exact two-sided Kolmogorov–Smirnov distance between the empirical law of
/// `samples` and a continuous reference.
pub fn ks_distance(samples: &[f64], law: &Law) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyReplicates);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    Ok(sorted.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = law.cdf(x);
        d.max((i as f64 + 1.0) / m - f).max(f - i as f64 / m)
    }))
}

/// Data-generating model of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimSpec {
    Setting1,
    Setting2,
    /// Independent standard normal `R`, `S` with pairwise-average kernels.
    StrongNull,
    /// The linear dyadic model under the weak null.
    Mrqap,
    /// The linear dyadic model with `(R, T) ⊥ S`.
    MrqapStrongNull,
}

impl SimSpec {
    pub fn kernel_spec(&self) -> KernelSpec {
        match self {
            SimSpec::Setting1 => KernelSpec::setting1(),
            SimSpec::Setting2 => KernelSpec::setting2(),
            SimSpec::StrongNull => KernelSpec::strong_null(),
            SimSpec::Mrqap => KernelSpec::pairwise(FeatureModel::BivariateNormalProduct { corr_st: 0.5 }),
            SimSpec::MrqapStrongNull => KernelSpec::pairwise(FeatureModel::BivariateNormalProduct { corr_st: 0.0 }),
        }
    }

    pub fn hypothesis(&self) -> Hypothesis {
        match self {
            SimSpec::StrongNull | SimSpec::MrqapStrongNull => Hypothesis::StrongNull,
            _ => Hypothesis::WeakNull,
        }
    }

    pub fn is_mrqap(&self) -> bool {
        matches!(self, SimSpec::Mrqap | SimSpec::MrqapStrongNull)
    }

    fn mrqap_params(&self) -> MrqapParams {
        match self {
            SimSpec::MrqapStrongNull => MrqapParams::strong_null(),
            _ => MrqapParams::default(),
        }
    }
}

/// One simulated dataset.
#[derive(Debug, Clone)]
pub enum Dataset {
    Pair(DyadMatrix, DyadMatrix),
    Design(DyadDesign),
}

/// Dataset `index` of an experiment seeded with `seed`.
pub fn simulate_dataset(spec: &SimSpec, n: usize, seed: u64, index: u64) -> Result<Dataset> {
    let mut rng = stream_rng(seed, StreamLabel::Data, index);
    if spec.is_mrqap() {
        Ok(Dataset::Design(design_from_rng(n, &spec.mrqap_params(), &mut rng)?))
    } else {
        let (a, b) = pair_from_rng(&spec.kernel_spec(), n, &mut rng)?;
        Ok(Dataset::Pair(a, b))
    }
}

/// Seed of the permutation stream family used for dataset `index`.
pub fn dataset_perm_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    /// Statistic across independent datasets.
    SamplingLaw,
    /// Permutation replicates of dataset 0.
    PermutationLaw,
    /// Permutation p-values across independent datasets.
    RejectionRate,
}

fn default_alphas() -> Vec<f64> {
    vec![0.01, 0.05, 0.10]
}

fn default_strategy() -> Strategy {
    Strategy::PermuteFocal
}

/// Declarative description of a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: SimSpec,
    pub n: usize,
    pub datasets: usize,
    pub statistic: Statistic,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    pub inner_reps: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    pub seed: u64,
    pub mode: ExperimentMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RejectionRate {
    pub alpha: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub n: usize,
    pub mode: ExperimentMode,
    pub statistic: Statistic,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    /// Number of statistic samples.
    pub reps: usize,
    /// In dataset order (replicate order for permutation-law runs).
    pub statistic_samples: Vec<f64>,
    /// Permutation p-values in dataset order; empty unless `mode` is `rejection_rate`.
    pub p_values: Vec<f64>,
    pub reference: Law,
    pub ks_distance: f64,
    pub rejection_rate_at: Vec<RejectionRate>,
}

fn check_config(cfg: &ExperimentConfig, statistics: &[Statistic]) -> Result<()> {
    if cfg.n < 3 {
        return Err(Error::TooSmall { n: cfg.n });
    }
    if cfg.mode != ExperimentMode::PermutationLaw && cfg.datasets == 0 {
        return Err(Error::Config("`datasets` must be positive".into()));
    }
    if cfg.mode != ExperimentMode::SamplingLaw && cfg.inner_reps == 0 {
        return Err(Error::Config("`inner_reps` must be positive".into()));
    }
    if let Some(a) = cfg.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::Config(format!("alpha {a} is outside (0, 1)")));
    }
    for s in statistics {
        if s.is_qap() == cfg.spec.is_mrqap() {
            return Err(Error::Config(format!("statistic {s:?} does not fit spec {:?}", cfg.spec)));
        }
    }
    Ok(())
}

fn observed_statistics(data: &Dataset, statistics: &[Statistic], correction: Eta1Correction) -> Result<Vec<f64>> {
    let (plain, studentized) = match data {
        Dataset::Pair(a, b) => qap_observed(a, b, correction)?,
        Dataset::Design(d) => mrqap_observed(d, correction)?,
    };
    Ok(statistics
        .iter()
        .map(|s| match s {
            Statistic::Studentized | Statistic::Wald => studentized,
            _ => plain,
        })
        .collect())
}

fn permutation_reports(
    data: &Dataset,
    strategy: Strategy,
    statistics: &[Statistic],
    opts: &PermutationOptions,
) -> Result<Vec<crate::perm::PermutationReport>> {
    match data {
        Dataset::Pair(a, b) => run_qap_multi(a, b, statistics, opts),
        Dataset::Design(d) => run_mrqap_multi(d, strategy, statistics, opts),
    }
}

/// Runs `cfg` for its own statistic.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    Ok(run_experiment_multi(cfg, &[cfg.statistic])?.remove(0))
}

/// Runs `cfg` once for several statistics computed from the same datasets and
/// permutation replicates. `cfg.statistic` is ignored.
pub fn run_experiment_multi(cfg: &ExperimentConfig, statistics: &[Statistic]) -> Result<Vec<ExperimentSummary>> {
    check_config(cfg, statistics)?;
    let correction = Eta1Correction::default_for(cfg.n);
    let kernel_spec = cfg.spec.kernel_spec();
    let hypothesis = cfg.spec.hypothesis();
    let strategy = cfg.spec.is_mrqap().then_some(cfg.strategy);
    let k = statistics.len();

    // samples[s] and p_values[s] per statistic
    let (samples, p_values): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match cfg.mode {
        ExperimentMode::SamplingLaw => {
            let rows = (0..cfg.datasets as u64)
                .into_par_iter()
                .map(|d| observed_statistics(&simulate_dataset(&cfg.spec, cfg.n, cfg.seed, d)?, statistics, correction))
                .collect::<Result<Vec<_>>>()?;
            ((0..k).map(|s| rows.iter().map(|r| r[s]).collect()).collect(), vec![Vec::new(); k])
        }
        ExperimentMode::PermutationLaw => {
            let data = simulate_dataset(&cfg.spec, cfg.n, cfg.seed, 0)?;
            let opts = PermutationOptions { n_reps: cfg.inner_reps, seed: dataset_perm_seed(cfg.seed, 0), correction };
            let reports = permutation_reports(&data, cfg.strategy, statistics, &opts)?;
            (reports.into_iter().map(|r| r.replicates).collect(), vec![Vec::new(); k])
        }
        ExperimentMode::RejectionRate => {
            let rows = (0..cfg.datasets as u64)
                .into_par_iter()
                .map(|d| {
                    let data = simulate_dataset(&cfg.spec, cfg.n, cfg.seed, d)?;
                    let opts =
                        PermutationOptions { n_reps: cfg.inner_reps, seed: dataset_perm_seed(cfg.seed, d), correction };
                    let reports = permutation_reports(&data, cfg.strategy, statistics, &opts)?;
                    Ok(reports.into_iter().map(|r| (r.observed, r.p_value)).collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()?;
            (
                (0..k).map(|s| rows.iter().map(|r| r[s].0).collect()).collect(),
                (0..k).map(|s| rows.iter().map(|r| r[s].1).collect()).collect(),
            )
        }
    };

    statistics
        .iter()
        .zip(samples.into_iter().zip(p_values))
        .map(|(&statistic, (samples, p_values))| {
            let reference = asymptotic_reference(&kernel_spec, statistic, hypothesis)?;
            let ks = ks_distance(&samples, &reference)?;
            let rejection_rate_at = cfg
                .alphas
                .iter()
                .map(|&alpha| {
                    let hits = if p_values.is_empty() {
                        samples.iter().filter(|&&x| reference.rejects(x, alpha)).count()
                    } else {
                        p_values.iter().filter(|&&p| p <= alpha).count()
                    };
                    let total = if p_values.is_empty() { samples.len() } else { p_values.len() };
                    RejectionRate { alpha, rate: hits as f64 / total as f64 }
                })
                .collect();
            Ok(ExperimentSummary {
                n: cfg.n,
                mode: cfg.mode,
                statistic,
                strategy,
                reps: samples.len(),
                statistic_samples: samples,
                p_values,
                reference,
                ks_distance: ks,
                rejection_rate_at,
            })
        })
        .collect()
}

/// Rejection rate of a two-sided or upper-tail permutation test given per-dataset
/// p-values.
pub fn rejection_rate(p_values: &[f64], alpha: f64) -> f64 {
    p_values.iter().filter(|&&p| p <= alpha).count() as f64 / p_values.len().max(1) as f64
}
