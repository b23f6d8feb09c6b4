use super::*;
use crate::regress::{fit_dyadic_ols, wald_statistic, Subset};
use crate::ustat::{qap_estimates_with, studentized_statistic, unstudentized_statistic};

fn noise(n: usize, seed: u64) -> DyadMatrix {
    let mut rng = stream_rng(seed, StreamLabel::Data, 99);
    DyadMatrix::from_upper_fn(n, |_, _| uniform01(&mut rng) * 2.0 - 1.0 + 0.3 * uniform01(&mut rng).powi(3))
}

fn design(n: usize, p: usize, q: usize, seed: u64) -> DyadDesign {
    let focal: Vec<DyadMatrix> = (0..p).map(|k| noise(n, seed * 31 + k as u64)).collect();
    let nuisance: Vec<DyadMatrix> = (0..q).map(|k| noise(n, seed * 31 + 10 + k as u64)).collect();
    let e = noise(n, seed * 31 + 20);
    let c0 = nuisance.first().cloned().unwrap_or_else(|| noise(n, seed + 5));
    let a = DyadMatrix::from_upper_fn(n, |i, j| 0.4 * c0.get(i, j) + 0.2 * focal[0].get(i, j) + e.get(i, j));
    DyadDesign::new(a, focal, nuisance).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn qap_exact_mode_matches_refit_oracle() {
    for seed in 0..4 {
        let (a, b) = (noise(5, seed), noise(5, seed + 100));
        let opts = PermutationOptions::new(5, 1000, seed);
        let reports = run_qap_multi(&a, &b, &[Statistic::Unstudentized, Statistic::Studentized], &opts).unwrap();
        assert_eq!(reports[0].mode, Mode::ExactEnumeration);
        assert_eq!(reports[0].n_reps, 120);
        for (pi, (u, s)) in all_permutations(5).iter().zip(reports[0].replicates.iter().zip(&reports[1].replicates)) {
            let e = qap_estimates_with(&a.permuted(pi).unwrap(), &b, opts.correction).unwrap();
            assert!(close(*u, unstudentized_statistic(&e), 1e-12));
            assert!(close(*s, studentized_statistic(&e).unwrap(), 1e-12));
        }
        assert_eq!(reports[0].replicates[0], reports[0].observed);
        assert_eq!(reports[1].replicates[0], reports[1].observed);
        assert!(reports.iter().all(|r| r.p_value > 0.0 && r.p_value <= 1.0));
    }
}

fn naive_replicate(d: &DyadDesign, strategy: Strategy, pi: &Permutation, c: Eta1Correction) -> (f64, f64) {
    let permuted = match strategy {
        Strategy::PermuteOutcome => d.with_outcome(d.outcome().permuted(pi).unwrap()).unwrap(),
        Strategy::PermuteFocal => d.with_focal(d.focal().iter().map(|b| b.permuted(pi).unwrap()).collect()).unwrap(),
        Strategy::PermuteResidualFocal => {
            let r = residualize(d.focal(), d.nuisance()).unwrap();
            d.with_focal(r.iter().map(|b| b.permuted(pi).unwrap()).collect()).unwrap()
        }
        Strategy::PermuteResidualOutcome => {
            let r = residualize(std::slice::from_ref(d.outcome()), d.nuisance()).unwrap();
            d.with_outcome(r[0].permuted(pi).unwrap()).unwrap()
        }
    };
    let fit = fit_dyadic_ols(&permuted, c).unwrap();
    let theta = fit.theta();
    let nf = (d.n() as f64).sqrt();
    let coef = if theta.len() == 1 { nf * theta[0] } else { nf * theta.norm() };
    (coef, wald_statistic(&fit, Subset::Partial).unwrap())
}

#[test]
fn mrqap_replicates_match_refit_oracle() {
    for &(n, p, q, reps) in &[(5, 1, 1, 0), (5, 2, 1, 0), (6, 1, 2, 0), (9, 1, 1, 40), (10, 2, 1, 30)] {
        let d = design(n, p, q, n as u64 + p as u64);
        for strategy in Strategy::ALL {
            let opts = PermutationOptions::new(n, reps, 17);
            let r = run_mrqap_multi(&d, strategy, &[Statistic::CoefNorm, Statistic::Wald], &opts).unwrap();
            let plan = ReplicatePlan::new(n, reps, 17);
            assert_eq!(r[0].replicates.len(), plan.len());
            for (k, pi) in plan.permutations().iter().enumerate() {
                let (coef, wald) = naive_replicate(&d, strategy, pi, opts.correction);
                assert!(close(r[0].replicates[k], coef, 1e-9), "{strategy:?} coef {} vs {coef}", r[0].replicates[k]);
                assert!(close(r[1].replicates[k], wald, 1e-9), "{strategy:?} wald {} vs {wald}", r[1].replicates[k]);
            }
        }
    }
}

#[test]
fn observed_is_shared_by_all_strategies() {
    let d = design(12, 2, 2, 3);
    let opts = PermutationOptions::new(12, 50, 1);
    let fit = fit_dyadic_ols(&d, opts.correction).unwrap();
    let wald = wald_statistic(&fit, Subset::Partial).unwrap();
    let observed: Vec<f64> =
        Strategy::ALL.iter().map(|&s| run_mrqap(&d, s, Statistic::Wald, &opts).unwrap().observed).collect();
    assert!(observed.iter().all(|&w| w == observed[0]));
    assert!(close(observed[0], wald, 1e-10));
    let r = run_mrqap(&d, Strategy::PermuteFocal, Statistic::Wald, &opts).unwrap();
    assert_eq!(r.tail, Tail::Upper);
    assert_eq!(r.warnings.len(), 1);
}

#[test]
fn identity_replicate_equals_observed() {
    let d = design(6, 1, 1, 8);
    for strategy in [Strategy::PermuteOutcome, Strategy::PermuteFocal] {
        let r = run_mrqap(&d, strategy, Statistic::Wald, &PermutationOptions::new(6, 10, 0)).unwrap();
        assert_eq!(r.mode, Mode::ExactEnumeration);
        assert_eq!(r.n_reps, 720);
        assert!(close(r.replicates[0], r.observed, 1e-12));
    }
}

#[test]
fn exact_p_values_live_on_the_grid() {
    let (a, b) = (noise(4, 1), noise(4, 2));
    let r = run_qap(&a, &b, Statistic::Studentized, &PermutationOptions::new(4, 1, 3)).unwrap();
    assert_eq!(r.n_reps, 24);
    let scaled = r.p_value * 24.0;
    assert!((scaled - scaled.round()).abs() < 1e-9);
}

#[test]
fn same_seed_same_report() {
    let (a, b) = (noise(15, 3), noise(15, 4));
    let opts = PermutationOptions::new(15, 300, 42);
    let r1 = run_qap(&a, &b, Statistic::Studentized, &opts).unwrap();
    let r2 = run_qap(&a, &b, Statistic::Studentized, &opts).unwrap();
    assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
    let r3 = run_qap(&a, &b, Statistic::Studentized, &PermutationOptions { seed: 43, ..opts }).unwrap();
    assert_ne!(r1.replicates, r3.replicates);
    assert_eq!(r1.mode, Mode::MonteCarlo);
    assert!(r1.p_value >= 1.0 / 301.0);
}

#[test]
fn replicates_do_not_depend_on_thread_count() {
    let d = design(14, 1, 2, 6);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            run_mrqap(&d, Strategy::PermuteResidualOutcome, Statistic::Wald, &PermutationOptions::new(14, 257, 9))
                .unwrap()
        })
    };
    let (one, four) = (run(1), run(4));
    assert_eq!(one, four);
}

/// At `p = 1, q = 0` the Wald statistic of the permuted outcome and the squared
/// studentized correlation differ only by the ratio of the two `Ĥ` estimates.
#[test]
fn wald_and_studentized_correlation_agree_at_one_regressor() {
    let n = 12;
    let a = noise(n, 70);
    let b = noise(n, 71);
    let d = DyadDesign::new(a.clone(), vec![b.clone()], vec![]).unwrap();
    let opts = PermutationOptions::new(n, 200, 5);
    let qap = run_qap(&a, &b, Statistic::Studentized, &opts).unwrap();
    let mr = run_mrqap(&d, Strategy::PermuteOutcome, Statistic::Wald, &opts).unwrap();
    let nn = (n * (n - 1)) as f64;
    let plan = ReplicatePlan::new(n, opts.n_reps, opts.seed);
    for (k, pi) in plan.permutations().iter().enumerate() {
        let ap = a.permuted(pi).unwrap();
        let e = qap_estimates_with(&ap, &b, opts.correction).unwrap();
        let fit = fit_dyadic_ols(&d.with_outcome(ap).unwrap(), opts.correction).unwrap();
        let t = qap.replicates[k];
        let expected = t * t * ((nn - 1.0) / nn).powi(2) * e.eta1_phi_hat / fit.h1_phi_hat[(0, 0)];
        assert!(close(mr.replicates[k], expected, 1e-9), "{} vs {expected}", mr.replicates[k]);
    }

    // permuting B instead visits the inverse permutations, so exact multisets agree
    let small = DyadDesign::new(noise(6, 1), vec![noise(6, 2)], vec![]).unwrap();
    let o = PermutationOptions::new(6, 1, 0);
    let mut x = run_mrqap(&small, Strategy::PermuteOutcome, Statistic::Wald, &o).unwrap().replicates;
    let mut y = run_mrqap(&small, Strategy::PermuteFocal, Statistic::Wald, &o).unwrap().replicates;
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    assert!(x.iter().zip(&y).all(|(u, v)| close(*u, *v, 1e-9)));
}

#[test]
fn second_order_factors_are_permutation_invariant() {
    let (a, b) = (noise(9, 11), noise(9, 12));
    let base = qap_estimates_with(&a, &b, Eta1Correction::Sen).unwrap();
    let opts = PermutationOptions { n_reps: 60, seed: 2, correction: Eta1Correction::Sen };
    let reports = run_qap_multi(&a, &b, &[Statistic::Unstudentized, Statistic::Studentized], &opts).unwrap();
    for (k, pi) in ReplicatePlan::new(9, 60, 2).permutations().iter().enumerate().take(60) {
        let e = qap_estimates_with(&a.permuted(pi).unwrap(), &b, Eta1Correction::Sen).unwrap();
        assert!(close(e.eta2_alpha_hat, base.eta2_alpha_hat, 1e-12));
        assert!(close(e.eta2_beta_hat, base.eta2_beta_hat, 1e-12));
        // the studentized replicate rescales the plain one by v̂^π only
        let ratio = reports[0].replicates[k] / reports[1].replicates[k];
        assert!(close(ratio, e.v_hat.sqrt(), 1e-10));
    }
}

#[test]
fn monte_carlo_variance_shrinks_with_budget() {
    let (a, b) = (noise(10, 21), noise(10, 22));
    let variance = |reps: usize| {
        let ps: Vec<f64> = (0..1000)
            .map(|s| run_qap(&a, &b, Statistic::Studentized, &PermutationOptions::new(10, reps, s)).unwrap().p_value)
            .collect();
        let mean = ps.iter().sum::<f64>() / ps.len() as f64;
        ps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (ps.len() - 1) as f64
    };
    let ratio = variance(200) / variance(800);
    let expected = 801.0 / 201.0;
    assert!((ratio / expected - 1.0).abs() < 0.2, "variance ratio {ratio}");
}

#[test]
fn exact_test_is_valid_under_independence() {
    use crate::sim::{generate_dyadic_pair, KernelSpec};
    let reps = 400;
    let ps: Vec<f64> = (0..reps)
        .map(|s| {
            let (a, b) = generate_dyadic_pair(&KernelSpec::strong_null(), 5, s).unwrap();
            run_qap(&a, &b, Statistic::Studentized, &PermutationOptions::new(5, 1, s)).unwrap().p_value
        })
        .collect();
    for alpha in [0.05, 0.1, 0.25, 0.5] {
        let rate = ps.iter().filter(|&&p| p <= alpha).count() as f64 / reps as f64;
        // three binomial standard errors above the nominal level
        assert!(rate <= alpha + 3.0 * (alpha * (1.0 - alpha) / reps as f64).sqrt(), "alpha {alpha}: {rate}");
    }
}

#[test]
fn rejects_mismatched_statistics() {
    let (a, b) = (noise(6, 1), noise(6, 2));
    let o = PermutationOptions::new(6, 10, 0);
    assert!(matches!(run_qap(&a, &b, Statistic::Wald, &o), Err(Error::Config(_))));
    let d = design(6, 1, 1, 0);
    assert!(matches!(run_mrqap(&d, Strategy::PermuteFocal, Statistic::Studentized, &o), Err(Error::Config(_))));
    let flat = DyadMatrix::constant(6, 2.0);
    assert!(matches!(run_qap(&flat, &b, Statistic::Studentized, &o), Err(Error::DegenerateMatrix { .. })));
}
