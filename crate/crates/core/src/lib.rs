//! Permutation inference for dyadic network data.
//!
//! The crate covers QAP tests of association between two networks and MRQAP tests
//! of partial regression coefficients, with studentized statistics whose permutation
//! law matches the sampling law under weak nulls. See the `dyadperm` binary for the
//! command-line front end.

pub mod dyad;
pub mod error;
pub mod io;
pub mod numeric;
pub mod perm;
pub mod regress;
pub mod sim;
pub mod ustat;

pub use dyad::{apply_double_permutation, dyad_stats, off_diagonal_mean, DyadMatrix, DyadStats, MomentBlock, Permutation};
pub use error::{Error, Result};
pub use perm::{
    permutation_cdf, random_permutation, run_mrqap, run_mrqap_multi, run_qap, run_qap_multi, Mode,
    PermutationOptions, PermutationReport, Statistic, Strategy, Tail,
};
pub use regress::{
    cluster_robust_variance, fit_dyadic_ols, residualize, wald_statistic, DyadDesign, DyadFit, Subset,
};
pub use ustat::{qap_estimates, qap_estimates_with, studentized_statistic, unstudentized_statistic, Eta1Correction, UStatEstimates};
