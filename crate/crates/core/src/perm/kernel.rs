//! Per-replicate evaluators.
//!
//! Both evaluators work on centered arrays (the off-diagonal mean is permutation
//! invariant, so centering commutes with relabeling) and only touch the upper
//! triangle. Products between two arrays that move together, or two arrays that stay
//! fixed, are computed once: their totals are invariant and their row aggregates are
//! simply relabeled. Only cross products between a moving and a fixed array are
//! recomputed per replicate.

use nalgebra::{DMatrix, DVector};

use crate::dyad::DyadMatrix;
use crate::error::{Error, Result};
use crate::numeric::csum;
use crate::regress::{centered_values, is_perfect_fit, solve_design, spd_inverse, symmetrize};
use crate::ustat::Eta1Correction;

/// QAP evaluator for `(A_π, B)`.
#[derive(Debug, Clone)]
pub(crate) struct QapKernel {
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    /// Off-diagonal sums of squares of the centered matrices.
    ss_a: f64,
    ss_b: f64,
    eta1_factor: f64,
}

/// Both QAP statistics for one replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct QapValues {
    pub unstudentized: f64,
    pub studentized: f64,
}

impl QapKernel {
    pub fn new(a: &DyadMatrix, b: &DyadMatrix, correction: Eta1Correction) -> Result<Self> {
        let n = a.n();
        if b.n() != n {
            return Err(Error::DimensionMismatch { expected: n, got: b.n() });
        }
        let (a, b) = (centered_values(a), centered_values(b));
        let ss = |v: &[f64]| 2.0 * csum((0..n).flat_map(|i| ((i + 1)..n).map(move |j| v[i * n + j] * v[i * n + j])));
        let (ss_a, ss_b) = (ss(&a), ss(&b));
        Ok(Self { n, ss_a, ss_b, a, b, eta1_factor: correction.factor(n)? })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `rows` is scratch of length `n`.
    pub fn eval(&self, pi: &[usize], rows: &mut [f64]) -> Result<QapValues> {
        let n = self.n;
        rows.iter_mut().for_each(|r| *r = 0.0);
        for i in 0..n {
            let src = &self.a[pi[i] * n..(pi[i] + 1) * n];
            let fixed = &self.b[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in (i + 1)..n {
                let v = src[pi[j]] * fixed[j];
                acc += v;
                rows[j] += v;
            }
            rows[i] += acc;
        }
        let nf = n as f64;
        let nn1 = nf * (nf - 1.0) - 1.0;
        let cross = csum(rows.iter().copied());
        let rho = cross / (self.ss_a.sqrt() * self.ss_b.sqrt());
        let eta1 = self.eta1_factor * csum(rows.iter().map(|r| (r / (nf - 1.0)).powi(2)));
        let v_hat = 4.0 * eta1 / ((self.ss_a / nn1) * (self.ss_b / nn1));
        if !(v_hat > 0.0) {
            return Err(Error::ZeroVariance);
        }
        let unstudentized = nf.sqrt() * rho;
        Ok(QapValues { unstudentized, studentized: unstudentized / v_hat.sqrt() })
    }
}

#[derive(Debug, Clone)]
enum PairSource {
    /// Both arrays move (rows relabeled) or both stay fixed.
    Cached { moving: bool, total: f64, rows: Vec<f64> },
    /// Index into the per-replicate cross-product buffers.
    Cross { slot: usize },
}

/// Both MRQAP statistics for one replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct MrqapValues {
    pub coef: f64,
    pub wald: f64,
}

/// MRQAP evaluator for a design whose arrays are split into a moving and a fixed
/// group. Array `0` is the outcome, arrays `1..=k` are the regressors with the `p`
/// focal ones first.
#[derive(Debug, Clone)]
pub(crate) struct MrqapKernel {
    n: usize,
    p: usize,
    k: usize,
    data: Vec<Vec<f64>>,
    /// Indexed by `pair_index(u, v)` for `u <= v`, `u` in `0..=k`, `v` in `1..=k`.
    pairs: Vec<PairSource>,
    cross: Vec<(usize, usize)>,
    /// Sum of squares of the centered outcome over ordered pairs.
    ss_outcome: f64,
    eta1_factor: f64,
}

/// Scratch buffers for one worker.
#[derive(Debug, Clone)]
pub(crate) struct MrqapScratch {
    rows: Vec<Vec<f64>>,
    totals: Vec<f64>,
}

impl MrqapKernel {
    pub fn new(
        outcome: &DyadMatrix,
        regressors: &[&DyadMatrix],
        p: usize,
        moving: Vec<bool>,
        correction: Eta1Correction,
    ) -> Result<Self> {
        let n = outcome.n();
        let k = regressors.len();
        debug_assert_eq!(moving.len(), k + 1);
        let mut data = vec![centered_values(outcome)];
        data.extend(regressors.iter().map(|m| centered_values(m)));

        let mut pairs = Vec::new();
        let mut cross = Vec::new();
        for (u, v) in Self::pair_list(k) {
            if moving[u] == moving[v] {
                let mut rows = vec![0.0; n];
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            rows[i] += data[u][i * n + j] * data[v][i * n + j];
                        }
                    }
                }
                let total = csum(rows.iter().copied());
                pairs.push(PairSource::Cached { moving: moving[u], total, rows });
            } else {
                let (m, f) = if moving[u] { (u, v) } else { (v, u) };
                pairs.push(PairSource::Cross { slot: cross.len() });
                cross.push((m, f));
            }
        }
        let ss_outcome = csum(data[0].iter().map(|v| v * v));
        Ok(Self { n, p, k, data, pairs, cross, ss_outcome, eta1_factor: correction.factor(n)? })
    }

    fn pair_list(k: usize) -> impl Iterator<Item = (usize, usize)> {
        (1..=k).map(|a| (0, a)).chain((1..=k).flat_map(move |a| (a..=k).map(move |b| (a, b))))
    }

    #[inline]
    fn pair_index(&self, u: usize, v: usize) -> usize {
        let (u, v) = if u <= v { (u, v) } else { (v, u) };
        if u == 0 {
            v - 1
        } else {
            // offset past the k outcome pairs, then the upper triangle of regressors
            let k = self.k;
            k + (u - 1) * (k + 1) - (u - 1) * u / 2 + (v - u)
        }
    }

    pub fn scratch(&self) -> MrqapScratch {
        MrqapScratch {
            rows: vec![vec![0.0; self.n]; self.cross.len()],
            totals: vec![0.0; self.cross.len()],
        }
    }

    pub fn eval(&self, pi: &[usize], s: &mut MrqapScratch) -> Result<MrqapValues> {
        let n = self.n;
        for (rows, &(m, f)) in s.rows.iter_mut().zip(&self.cross) {
            rows.iter_mut().for_each(|v| *v = 0.0);
            let (moving, fixed) = (&self.data[m], &self.data[f]);
            for i in 0..n {
                let src = &moving[pi[i] * n..(pi[i] + 1) * n];
                let row = &fixed[i * n..(i + 1) * n];
                let mut acc = 0.0;
                for j in (i + 1)..n {
                    let v = src[pi[j]] * row[j];
                    acc += v;
                    rows[j] += v;
                }
                rows[i] += acc;
            }
        }
        for (slot, rows) in s.rows.iter().enumerate() {
            s.totals[slot] = csum(rows.iter().copied());
        }

        let k = self.k;
        let total = |u: usize, v: usize| match &self.pairs[self.pair_index(u, v)] {
            PairSource::Cached { total, .. } => *total,
            PairSource::Cross { slot } => s.totals[*slot],
        };
        let row = |u: usize, v: usize, i: usize| match &self.pairs[self.pair_index(u, v)] {
            PairSource::Cached { moving: true, rows, .. } => rows[pi[i]],
            PairSource::Cached { moving: false, rows, .. } => rows[i],
            PairSource::Cross { slot } => s.rows[*slot][i],
        };

        let nf = n as f64;
        let nn = nf * (nf - 1.0);
        let sigma = DMatrix::from_fn(k, k, |a, b| total(a + 1, b + 1) / nn);
        let sigma_a = DVector::from_fn(k, |a, _| total(0, a + 1) / nn);
        let sigma_inv = solve_design(&sigma)?;
        let w = &sigma_inv * &sigma_a;
        let ssr = self.ss_outcome - nn * sigma_a.dot(&w);
        if is_perfect_fit(ssr, self.ss_outcome) {
            return Err(Error::SingularVariance);
        }

        let mut h = DMatrix::<f64>::zeros(k, k);
        let mut phi = vec![0.0; k];
        for i in 0..n {
            for a in 0..k {
                let mut v = row(0, a + 1, i);
                for b in 0..k {
                    v -= row(a + 1, b + 1, i) * w[b];
                }
                phi[a] = v / (nf - 1.0);
            }
            for a in 0..k {
                for b in 0..k {
                    h[(a, b)] += phi[a] * phi[b];
                }
            }
        }
        let h = symmetrize(h * self.eta1_factor);
        let v_hat = symmetrize(&sigma_inv * h * &sigma_inv * 4.0);

        let p = self.p;
        let theta = w.rows(0, p).into_owned();
        let coef = if p == 1 { nf.sqrt() * theta[0] } else { nf.sqrt() * theta.norm() };
        let block = v_hat.view((0, 0), (p, p)).into_owned();
        let (inv, _) = spd_inverse(&block).ok_or(Error::SingularVariance)?;
        let wald = (nf * theta.dot(&(&inv * &theta))).max(0.0);
        Ok(MrqapValues { coef, wald })
    }
}
