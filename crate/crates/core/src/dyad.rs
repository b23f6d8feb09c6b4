//! Dyadic matrices and their deterministic summaries.
//!
//! A [`DyadMatrix`] is a symmetric `n × n` array with zero diagonal, stored dense and
//! row-major. [`DyadStats`] caches the quantities every estimator needs:
//!
//! ```text
//! ā     = {n(n-1)}⁻¹ Σ_{i≠j} a_ij
//! ā_i   = (n-2)⁻¹ Σ_{j≠i} (a_ij - ā)
//! ã_ij  = a_ij - ā_i - ā_j - ā
//! m_1k  = n⁻¹ Σ_i |ā_i|^k
//! m_2k  = {n(n-1)}⁻¹ Σ_{i≠j} |ã_ij|^k
//! ```

use crate::error::{Error, Result};
use crate::numeric::{csum, CompensatedSum};

/// Relative tolerance used when checking symmetry on ingestion.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Symmetric real matrix with zero diagonal over `n >= 3` units.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DyadMatrix {
    /// Validates a square array of rows. Entries that pass the symmetry check are
    /// replaced by `(a_ij + a_ji) / 2` so downstream code sees exact symmetry.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::NotSquare { rows: n, row: r, cols: row.len() });
            }
        }
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        Self::from_row_major(n, values)
    }

    /// Same validation as [`DyadMatrix::new`] for a flat row-major buffer.
    pub fn from_row_major(n: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::NotSquare { rows: n, row: 0, cols: values.len() / n.max(1) });
        }
        if n < 3 {
            return Err(Error::TooSmall { n });
        }
        let mut max_abs = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() {
                    return Err(Error::NonFiniteEntry { i, j });
                }
                max_abs = max_abs.max(v.abs());
            }
        }
        for i in 0..n {
            let d = values[i * n + i];
            if d != 0.0 {
                return Err(Error::NonzeroDiagonal { i, value: d });
            }
        }
        let tol = SYMMETRY_TOLERANCE * max_abs;
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (values[i * n + j], values[j * n + i]);
                let diff = (a - b).abs();
                if diff > tol {
                    return Err(Error::AsymmetricBeyondTolerance { i, j, diff });
                }
                let mid = 0.5 * (a + b);
                values[i * n + j] = mid;
                values[j * n + i] = mid;
            }
        }
        Ok(Self { n, values })
    }

    /// Builds a matrix from a function evaluated on the upper triangle `i < j`.
    /// The value is mirrored to `(j, i)` and the diagonal is zero.
    ///
    /// Panics if `n < 3`; use [`DyadMatrix::new`] for untrusted input.
    pub fn from_upper_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(n >= 3, "dyad matrices need at least 3 units");
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = f(i, j);
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Self { n, values }
    }

    /// Matrix whose off-diagonal entries all equal `c`.
    pub fn constant(n: usize, c: f64) -> Self {
        Self::from_upper_fn(n, |_, _| c)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Row-major view of all `n²` entries, diagonal included.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Iterates `(i, j, a_ij)` over the upper triangle.
    pub fn upper(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j, self.values[i * n + j])))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Entrywise `c * a_ij`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { n: self.n, values: self.values.iter().map(|v| c * v).collect() }
    }

    /// Off-diagonal entries shifted by `-mean`; the diagonal stays zero.
    pub fn centered(&self) -> Self {
        let mean = self.off_diagonal_mean();
        Self::from_upper_fn(self.n, |i, j| self.get(i, j) - mean)
    }

    /// Average of the `n(n-1)` off-diagonal entries.
    pub fn off_diagonal_mean(&self) -> f64 {
        let n = self.n as f64;
        2.0 * csum(self.upper().map(|(_, _, v)| v)) / (n * (n - 1.0))
    }

    /// `A_π = (a_{π(i)π(j)})`.
    pub fn permuted(&self, pi: &Permutation) -> Result<Self> {
        apply_double_permutation(self, pi.as_slice())
    }

    pub fn stats(&self) -> DyadStats {
        dyad_stats(self)
    }
}

/// A bijection on `0..n`, stored as the image vector `pi[i] = π(i)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(image: Vec<usize>) -> Result<Self> {
        validate_permutation(&image, image.len())?;
        Ok(Self(image))
    }

    /// Construction without the bijection check, for generators that are correct by
    /// construction.
    pub(crate) fn from_vec_unchecked(image: Vec<usize>) -> Self {
        Self(image)
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p] = i;
        }
        Self(inv)
    }

    /// `(self ∘ other)(i) = self(other(i))`.
    pub fn compose(&self, other: &Permutation) -> Self {
        Self(other.0.iter().map(|&i| self.0[i]).collect())
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &p)| i == p)
    }
}

fn validate_permutation(pi: &[usize], n: usize) -> Result<()> {
    if pi.len() != n {
        return Err(Error::PermutationLengthMismatch { expected: n, got: pi.len() });
    }
    let mut seen = vec![false; n];
    for &p in pi {
        if p >= n || seen[p] {
            return Err(Error::NotBijection { n });
        }
        seen[p] = true;
    }
    Ok(())
}

/// Relabels rows and columns together: the result has entries `a_{π(i)π(j)}`.
pub fn apply_double_permutation(m: &DyadMatrix, pi: &[usize]) -> Result<DyadMatrix> {
    validate_permutation(pi, m.n)?;
    let n = m.n;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let src = m.row(pi[i]);
        let dst = &mut values[i * n..(i + 1) * n];
        for j in 0..n {
            dst[j] = src[pi[j]];
        }
    }
    Ok(DyadMatrix { n, values })
}

/// Which family of moments: row means (`1`) or double-demeaned entries (`2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentBlock {
    RowMeans,
    Elements,
}

/// Derived quantities of a [`DyadMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct DyadStats {
    pub n: usize,
    pub grand_mean: f64,
    pub row_means: Vec<f64>,
    /// Row-major `n × n`, zero diagonal.
    pub double_demeaned: Vec<f64>,
    pub m12: f64,
    pub m14: f64,
    pub m22: f64,
    pub m24: f64,
}

impl DyadStats {
    #[inline]
    pub fn tilde(&self, i: usize, j: usize) -> f64 {
        self.double_demeaned[i * self.n + j]
    }

    /// `m_1k` or `m_2k` for arbitrary order `k`.
    pub fn moment(&self, block: MomentBlock, k: i32) -> f64 {
        let n = self.n as f64;
        match block {
            MomentBlock::RowMeans => csum(self.row_means.iter().map(|v| v.abs().powi(k))) / n,
            MomentBlock::Elements => {
                let s = csum((0..self.n).flat_map(|i| {
                    ((i + 1)..self.n).map(move |j| self.tilde(i, j).abs().powi(k))
                }));
                2.0 * s / (n * (n - 1.0))
            }
        }
    }
}

pub fn off_diagonal_mean(m: &DyadMatrix) -> f64 {
    m.off_diagonal_mean()
}

pub fn dyad_stats(m: &DyadMatrix) -> DyadStats {
    let n = m.n;
    let nf = n as f64;
    let grand_mean = m.off_diagonal_mean();
    let row_means: Vec<f64> = (0..n)
        .map(|i| {
            let s: CompensatedSum = m
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v - grand_mean)
                .collect();
            s.value() / (nf - 2.0)
        })
        .collect();
    let mut double_demeaned = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                double_demeaned[i * n + j] = m.get(i, j) - row_means[i] - row_means[j] - grand_mean;
            }
        }
    }
    let mut stats = DyadStats {
        n,
        grand_mean,
        row_means,
        double_demeaned,
        m12: 0.0,
        m14: 0.0,
        m22: 0.0,
        m24: 0.0,
    };
    stats.m12 = stats.moment(MomentBlock::RowMeans, 2);
    stats.m14 = stats.moment(MomentBlock::RowMeans, 4);
    stats.m22 = stats.moment(MomentBlock::Elements, 2);
    stats.m24 = stats.moment(MomentBlock::Elements, 4);
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m3(a12: f64, a13: f64, a23: f64) -> DyadMatrix {
        DyadMatrix::new(vec![vec![0.0, a12, a13], vec![a12, 0.0, a23], vec![a13, a23, 0.0]]).unwrap()
    }

    fn lcg_matrix(n: usize, seed: u64) -> DyadMatrix {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        DyadMatrix::from_upper_fn(n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        })
    }

    #[test]
    fn construction_and_validation() {
        let m = m3(1.0, 2.0, 3.0);
        assert_eq!(m.n(), 3);
        assert_eq!(m.get(2, 1), 3.0);

        let asym = DyadMatrix::new(vec![vec![0.0, 1.0, 0.0], vec![2.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]);
        assert!(matches!(asym, Err(Error::AsymmetricBeyondTolerance { i: 0, j: 1, .. })));

        assert_eq!(DyadMatrix::new(vec![vec![0.0; 2]; 2]), Err(Error::TooSmall { n: 2 }));

        let ragged = DyadMatrix::new(vec![vec![0.0; 3], vec![0.0; 2], vec![0.0; 3]]);
        assert!(matches!(ragged, Err(Error::NotSquare { row: 1, .. })));

        let diag = DyadMatrix::new(vec![vec![1.0, 0.0, 0.0], vec![0.0; 3], vec![0.0; 3]]);
        assert!(matches!(diag, Err(Error::NonzeroDiagonal { i: 0, .. })));

        let nan = DyadMatrix::new(vec![vec![0.0, f64::NAN, 0.0], vec![f64::NAN, 0.0, 0.0], vec![0.0; 3]]);
        assert!(matches!(nan, Err(Error::NonFiniteEntry { .. })));
    }

    #[test]
    fn near_symmetric_entries_are_averaged() {
        let m = DyadMatrix::new(vec![
            vec![0.0, 1.0, 2.0],
            vec![1.0 + 1e-12, 0.0, 3.0],
            vec![2.0, 3.0, 0.0],
        ])
        .unwrap();
        assert_eq!(m.get(0, 1), m.get(1, 0));
    }

    #[test]
    fn off_diagonal_mean_examples() {
        assert_eq!(m3(1.0, 2.0, 3.0).off_diagonal_mean(), 2.0);
        assert_eq!(DyadMatrix::constant(5, 0.0).off_diagonal_mean(), 0.0);

        let m = lcg_matrix(6, 3);
        let mut brute = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    brute += m.get(i, j);
                }
            }
        }
        brute /= 30.0;
        assert!((m.off_diagonal_mean() - brute).abs() < 1e-12);
    }

    #[test]
    fn constant_matrix_has_no_variation() {
        let s = DyadMatrix::constant(5, 2.5).stats();
        assert!((s.grand_mean - 2.5).abs() < 1e-15);
        assert!(s.row_means.iter().all(|v| v.abs() < 1e-14));
        assert!(s.double_demeaned.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn stats_match_entrywise_formulas() {
        let m = DyadMatrix::new(vec![
            vec![0.0, 1.0, 4.0, -2.0],
            vec![1.0, 0.0, 3.5, 7.0],
            vec![4.0, 3.5, 0.0, 0.25],
            vec![-2.0, 7.0, 0.25, 0.0],
        ])
        .unwrap();
        let n = 4usize;
        // direct evaluation of the defining formulas
        let mut abar = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    abar += m.get(i, j);
                }
            }
        }
        abar /= 12.0;
        let mut rows = [0.0; 4];
        for (i, r) in rows.iter_mut().enumerate() {
            for j in 0..n {
                if j != i {
                    *r += m.get(i, j) - abar;
                }
            }
            *r /= 2.0;
        }
        let s = m.stats();
        assert!((s.grand_mean - abar).abs() < 1e-14);
        for i in 0..n {
            assert!((s.row_means[i] - rows[i]).abs() < 1e-14);
            for j in 0..n {
                if i != j {
                    let t = m.get(i, j) - rows[i] - rows[j] - abar;
                    assert!((s.tilde(i, j) - t).abs() < 1e-13);
                }
            }
        }
        let m22: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| {
                let t = m.get(i, j) - rows[i] - rows[j] - abar;
                t * t
            })
            .sum::<f64>()
            / 12.0;
        assert!((s.m22 - m22).abs() < 1e-13);
    }

    #[test]
    fn relabeling_example() {
        let m = m3(1.0, 2.0, 3.0);
        let out = apply_double_permutation(&m, &[1, 2, 0]).unwrap();
        assert_eq!((out.get(0, 1), out.get(0, 2), out.get(1, 2)), (3.0, 1.0, 2.0));
        assert_eq!(apply_double_permutation(&m, &[0, 1, 2]).unwrap(), m);
        assert!(matches!(
            apply_double_permutation(&m, &[0, 1]),
            Err(Error::PermutationLengthMismatch { .. })
        ));
        assert_eq!(apply_double_permutation(&m, &[0, 0, 1]), Err(Error::NotBijection { n: 3 }));
    }

    fn arb_matrix_and_perms() -> impl Strategy<Value = (DyadMatrix, Vec<usize>, Vec<usize>)> {
        (3usize..9).prop_flat_map(|n| {
            (
                proptest::collection::vec(-5.0f64..5.0, n * (n - 1) / 2),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            )
                .prop_map(move |(vals, p, s)| {
                    let mut it = vals.into_iter();
                    (DyadMatrix::from_upper_fn(n, |_, _| it.next().unwrap()), p, s)
                })
        })
    }

    proptest! {
        #[test]
        fn permutation_preserves_multiset_and_moments((m, p, s) in arb_matrix_and_perms()) {
            let mp = apply_double_permutation(&m, &p).unwrap();
            prop_assert!((mp.off_diagonal_mean() - m.off_diagonal_mean()).abs() < 1e-12);

            let sorted = |x: &DyadMatrix| {
                let mut v: Vec<f64> = x.upper().map(|(_, _, v)| v).collect();
                v.sort_by(f64::total_cmp);
                v
            };
            prop_assert_eq!(sorted(&mp), sorted(&m));

            let (s0, s1) = (m.stats(), mp.stats());
            for (a, b) in [(s0.m12, s1.m12), (s0.m14, s1.m14), (s0.m22, s1.m22), (s0.m24, s1.m24)] {
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
            }
            for i in 0..m.n() {
                prop_assert!((s1.row_means[i] - s0.row_means[p[i]]).abs() < 1e-10);
            }

            let twice = apply_double_permutation(&mp, &s).unwrap();
            let pi = Permutation::new(p.clone()).unwrap();
            let sigma = Permutation::new(s.clone()).unwrap();
            prop_assert_eq!(&twice, &m.permuted(&pi.compose(&sigma)).unwrap());
            prop_assert_eq!(&mp.permuted(&pi.inverse()).unwrap(), &m);
        }

        #[test]
        fn stats_invariants((m, _p, _s) in arb_matrix_and_perms()) {
            let st = m.stats();
            let n = m.n();
            let tol = 1e-10 * n as f64 * m.max_abs().max(1e-300);
            prop_assert!(st.row_means.iter().sum::<f64>().abs() <= tol);
            for i in 0..n {
                let r: f64 = (0..n).filter(|&j| j != i).map(|j| st.tilde(i, j)).sum();
                prop_assert!(r.abs() <= tol);
            }
            // m22 three-term decomposition
            let nf = n as f64;
            let ss: f64 = m.upper().map(|(_, _, v)| 2.0 * (v - st.grand_mean).powi(2)).sum();
            let rr: f64 = st.row_means.iter().map(|v| v * v).sum();
            let rhs = ss / (nf * (nf - 1.0)) - 2.0 * (nf - 2.0) * rr / (nf * (nf - 1.0));
            prop_assert!((st.m22 - rhs).abs() <= tol * m.max_abs().max(1.0));
        }
    }
}
