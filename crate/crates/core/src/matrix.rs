//! Moment and localizing matrices, PSD/rank reports, recursive consistency
//! of column relations, and the Smul'jan block criterion.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, sym_eigen, sym_norm, sym_pinv};
use crate::moments::MomentSequence;
use crate::poly::{MonomialSet, MultiIndex, Polynomial};

pub const DEFAULT_PSD_TOL: f64 = 1e-9;
pub const DEFAULT_RANK_TOL: f64 = 1e-8;
pub const DEFAULT_CONSISTENCY_TOL: f64 = 1e-6;

/// Kernel coefficients below this are zeroed.
const KERNEL_COEFF_EPS: f64 = 1e-10;

/// A polynomial inequality `g >= 0` cutting out the support set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub g: Polynomial,
}

impl Constraint {
    pub fn new(name: impl Into<String>, g: Polynomial) -> Result<Self> {
        if g.is_zero() {
            return Err(Error::Invalid("constraint polynomial is zero".into()));
        }
        Ok(Constraint {
            name: name.into(),
            g,
        })
    }

    pub fn holds_at(&self, x: &[f64], tol: f64) -> bool {
        self.g.eval_unchecked(x) >= -tol
    }
}

/// Symmetric matrix with rows and columns labelled by monomials.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentMatrix {
    basis: Vec<MultiIndex>,
    entries: DMatrix<f64>,
    /// Name of the localizing constraint, `None` for a plain moment matrix.
    localizer: Option<String>,
}

impl MomentMatrix {
    pub fn from_parts(basis: Vec<MultiIndex>, entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != basis.len() || entries.ncols() != basis.len() {
            return Err(Error::Invalid(format!(
                "{}x{} entries for {} labels",
                entries.nrows(),
                entries.ncols(),
                basis.len()
            )));
        }
        Ok(MomentMatrix {
            basis,
            entries,
            localizer: None,
        })
    }

    pub fn basis(&self) -> &[MultiIndex] {
        &self.basis
    }

    pub fn basis_set(&self) -> MonomialSet {
        MonomialSet::from_set(
            self.basis.first().map_or(0, |a| a.nvars()),
            self.basis.iter().cloned().collect(),
        )
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn localizer(&self) -> Option<&str> {
        self.localizer.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Principal submatrix on the first `k` labels.
    pub fn leading(&self, k: usize) -> MomentMatrix {
        MomentMatrix {
            basis: self.basis[..k].to_vec(),
            entries: self.entries.view((0, 0), (k, k)).into_owned(),
            localizer: self.localizer.clone(),
        }
    }

    /// Principal submatrix on the given label positions.
    pub fn principal(&self, positions: &[usize]) -> MomentMatrix {
        let k = positions.len();
        let entries = DMatrix::from_fn(k, k, |i, j| self.entries[(positions[i], positions[j])]);
        MomentMatrix {
            basis: positions.iter().map(|&i| self.basis[i].clone()).collect(),
            entries,
            localizer: self.localizer.clone(),
        }
    }

    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.basis.iter().position(|b| b == alpha)
    }
}

fn build_matrix<F>(basis: &[MultiIndex], mut entry: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&MultiIndex, &MultiIndex, &mut BTreeSet<MultiIndex>) -> f64,
{
    let n = basis.len();
    let mut missing = BTreeSet::new();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = entry(&basis[i], &basis[j], &mut missing);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    if missing.is_empty() {
        Ok(m)
    } else {
        Err(Error::MissingMoments(missing.into_iter().collect()))
    }
}

/// Moment matrix over `basis` in its graded-lex order.
pub fn moment_matrix(gamma: &MomentSequence, basis: &MonomialSet) -> Result<MomentMatrix> {
    moment_matrix_ordered(gamma, &basis.to_vec())
}

/// Moment matrix over an explicitly ordered label list.
pub fn moment_matrix_ordered(gamma: &MomentSequence, basis: &[MultiIndex]) -> Result<MomentMatrix> {
    check_labels(gamma.nvars(), basis)?;
    let entries = build_matrix(basis, |a, b, missing| {
        let idx = a.add(b);
        gamma.get(&idx).unwrap_or_else(|| {
            missing.insert(idx);
            0.0
        })
    })?;
    Ok(MomentMatrix {
        basis: basis.to_vec(),
        entries,
        localizer: None,
    })
}

/// Localizing matrix with entries `Lambda(g x^(alpha+beta))`.
pub fn localizing_matrix(
    gamma: &MomentSequence,
    g: &Constraint,
    basis: &MonomialSet,
) -> Result<MomentMatrix> {
    localizing_matrix_ordered(gamma, g, &basis.to_vec())
}

pub fn localizing_matrix_ordered(
    gamma: &MomentSequence,
    g: &Constraint,
    basis: &[MultiIndex],
) -> Result<MomentMatrix> {
    check_labels(gamma.nvars(), basis)?;
    if g.g.nvars() != gamma.nvars() {
        return Err(Error::DimensionMismatch {
            expected: gamma.nvars(),
            got: g.g.nvars(),
        });
    }
    let entries = build_matrix(basis, |a, b, missing| {
        let ab = a.add(b);
        let mut acc = 0.0;
        for (d, c) in g.g.terms() {
            let idx = ab.add(d);
            match gamma.get(&idx) {
                Some(v) => acc += c * v,
                None => {
                    missing.insert(idx);
                }
            }
        }
        acc
    })?;
    Ok(MomentMatrix {
        basis: basis.to_vec(),
        entries,
        localizer: Some(g.name.clone()),
    })
}

fn check_labels(nvars: usize, basis: &[MultiIndex]) -> Result<()> {
    if let Some(a) = basis.iter().find(|a| a.nvars() != nvars) {
        return Err(Error::DimensionMismatch {
            expected: nvars,
            got: a.nvars(),
        });
    }
    let distinct: BTreeSet<_> = basis.iter().collect();
    if distinct.len() != basis.len() {
        return Err(Error::Invalid("repeated basis label".into()));
    }
    Ok(())
}

/// Eigendecomposition-based positivity and rank verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdReport {
    pub is_psd: bool,
    pub min_eigenvalue: f64,
    pub rank: usize,
    /// Orthonormal basis of the numerical null space, as polynomials over
    /// the matrix labels.
    pub kernel: Vec<Polynomial>,
    /// Spectral norm of the matrix.
    pub norm: f64,
}

pub fn psd_rank(m: &MomentMatrix, psd_tol: f64, rank_tol: f64) -> PsdReport {
    let n = m.dim();
    if n == 0 {
        return PsdReport {
            is_psd: true,
            min_eigenvalue: 0.0,
            rank: 0,
            kernel: Vec::new(),
            norm: 0.0,
        };
    }
    let nvars = m.basis[0].nvars();
    let (values, vectors) = sym_eigen(&m.entries);
    let norm = sym_norm(&values);
    let min_eigenvalue = values[0];
    let is_psd = min_eigenvalue >= -psd_tol * norm.max(1.0);
    let cut = rank_tol * norm;
    let mut rank = 0;
    let mut kernel = Vec::new();
    for (j, &lam) in values.iter().enumerate() {
        if norm > 0.0 && lam.abs() > cut {
            rank += 1;
            continue;
        }
        let col = vectors.column(j);
        // sign convention: the last nonzero coefficient (highest label) is positive
        let sign = col
            .iter()
            .rev()
            .find(|c| c.abs() > KERNEL_COEFF_EPS)
            .map_or(1.0, |c| c.signum());
        let terms = m
            .basis
            .iter()
            .zip(col.iter())
            .filter(|(_, c)| c.abs() > KERNEL_COEFF_EPS)
            .map(|(a, &c)| (a.clone(), sign * c));
        kernel.push(Polynomial::from_terms(nvars, terms).expect("labels share nvars"));
    }
    PsdReport {
        is_psd,
        min_eigenvalue,
        rank,
        kernel,
        norm,
    }
}

/// Numerical rank: count of singular values above `rank_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rank_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().fold(0.0f64, |a, v| a.max(*v));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rank_tol * smax).count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyViolation {
    pub kernel: Polynomial,
    pub variable: usize,
    pub beta: MultiIndex,
    /// `Lambda(x_variable * kernel * x^beta)`, expected to vanish.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub consistent: bool,
    pub violations: Vec<ConsistencyViolation>,
    pub tested: usize,
    /// Products skipped because a needed moment is unavailable.
    pub untested: usize,
}

/// Checks that kernel relations propagate under multiplication by each
/// variable: `Lambda(x_i p x^beta) = 0` for kernel `p`, `beta` in the basis,
/// wherever the needed moments exist.
pub fn recursive_consistency(
    m: &MomentMatrix,
    gamma: &MomentSequence,
    report: &PsdReport,
    tol: f64,
) -> ConsistencyReport {
    let nvars = gamma.nvars();
    let scale = report.norm.max(1.0);
    let mut violations = Vec::new();
    let mut tested = 0;
    let mut untested = 0;
    for p in &report.kernel {
        for i in 0..nvars {
            let xp = p.shift_by(&MultiIndex::unit(nvars, i));
            for beta in &m.basis {
                let q = xp.shift_by(beta);
                match gamma.riesz(&q) {
                    Ok(v) => {
                        tested += 1;
                        if v.abs() > tol * scale {
                            violations.push(ConsistencyViolation {
                                kernel: p.clone(),
                                variable: i,
                                beta: beta.clone(),
                                value: v,
                            });
                        }
                    }
                    Err(_) => untested += 1,
                }
            }
        }
    }
    ConsistencyReport {
        consistent: violations.is_empty(),
        violations,
        tested,
        untested,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmulyanReport {
    /// `max |M W - B|` for the minimum-norm `W`.
    pub range_residual: f64,
    /// Smallest eigenvalue of `C - W^T M W`.
    pub schur_min_eigenvalue: f64,
    pub holds: bool,
}

/// Smul'jan criterion on `[[M, B], [B^T, C]]` split after `split` rows.
pub fn smulyan_report(big: &DMatrix<f64>, split: usize, tol: f64) -> SmulyanReport {
    let n = big.nrows();
    assert!(split <= n, "split beyond matrix size");
    let scale = max_abs(big).max(1.0);
    let m = big.view((0, 0), (split, split)).into_owned();
    let b = big.view((0, split), (split, n - split)).into_owned();
    let c = big.view((split, split), (n - split, n - split)).into_owned();
    let w = sym_pinv(&m, 1e-12) * &b;
    let range_residual = max_abs(&(&m * &w - &b));
    let schur = &c - w.transpose() * &m * &w;
    let (vals, _) = sym_eigen(&schur);
    let schur_min_eigenvalue = vals.first().copied().unwrap_or(0.0);
    let m_psd = sym_eigen(&m).0.first().is_none_or(|&v| v >= -tol * scale);
    SmulyanReport {
        range_residual,
        schur_min_eigenvalue,
        holds: m_psd && range_residual < tol * scale && schur_min_eigenvalue >= -tol * scale,
    }
}

pub fn smulyan_check(big: &DMatrix<f64>, split: usize, tol: f64) -> bool {
    smulyan_report(big, split, tol).holds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{moments_of_atomic, AtomicMeasure};
    use proptest::prelude::*;

    fn mi<const N: usize>(a: [u32; N]) -> MultiIndex {
        MultiIndex::from(a)
    }

    fn example_37() -> MomentSequence {
        MomentSequence::univariate(&[1.0, 1.0, 1.0, 1.0, 2.0]).unwrap()
    }

    fn poly1(coeffs: &[f64]) -> Polynomial {
        Polynomial::from_terms(
            1,
            coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| (mi([k as u32]), c)),
        )
        .unwrap()
    }

    #[test]
    fn omega1_moment_matrix_shape() {
        let (a, b, c, d, e) = (0.3, 0.4, 0.6, 0.7, 0.8);
        let f = b * e / a;
        let g = MomentSequence::from_pairs(
            2,
            vec![
                (mi([0, 0]), 1.0),
                (mi([1, 0]), a),
                (mi([0, 1]), b),
                (mi([2, 0]), a * c),
                (mi([1, 1]), a * f),
                (mi([0, 2]), b * d),
            ],
        )
        .unwrap();
        let m = moment_matrix(&g, &MonomialSet::up_to_degree(2, 1)).unwrap();
        let expect = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, a, b, a, a * c, b * e, b, b * e, b * d],
        );
        assert!((m.entries() - expect).abs().max() < 1e-15);
    }

    #[test]
    fn hankel_examples() {
        let m = moment_matrix(&example_37(), &MonomialSet::up_to_degree(1, 2)).unwrap();
        assert_eq!(
            m.entries(),
            &DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0])
        );
        let g = moments_of_atomic(&AtomicMeasure::dirac(vec![0.0]), &MonomialSet::up_to_degree(1, 2))
            .unwrap();
        let m = moment_matrix(&g, &MonomialSet::up_to_degree(1, 1)).unwrap();
        assert_eq!(m.entries(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn missing_moments_are_listed() {
        let g = MomentSequence::univariate(&[1.0, 0.5, 0.5]).unwrap();
        let err = moment_matrix(&g, &MonomialSet::up_to_degree(1, 2)).unwrap_err();
        assert_eq!(err, Error::MissingMoments(vec![mi([3]), mi([4])]));
    }

    #[test]
    fn localizing_examples() {
        let s = Polynomial::var(2, 0);
        let g = Constraint::new("s(1-s)", &s - &(&s * &s)).unwrap();
        let gamma = moments_of_atomic(
            &AtomicMeasure::dirac(vec![0.5, 0.5]),
            &MonomialSet::up_to_degree(2, 2),
        )
        .unwrap();
        let m = localizing_matrix(&gamma, &g, &MonomialSet::up_to_degree(2, 0)).unwrap();
        assert!((m.entries()[(0, 0)] - 0.25).abs() < 1e-15);

        let one = Constraint::new("one", Polynomial::constant(2, 1.0)).unwrap();
        let basis = MonomialSet::up_to_degree(2, 1);
        assert_eq!(
            localizing_matrix(&gamma, &one, &basis).unwrap().entries(),
            moment_matrix(&gamma, &basis).unwrap().entries()
        );

        let gamma = moments_of_atomic(&AtomicMeasure::dirac(vec![2.0]), &MonomialSet::up_to_degree(1, 2))
            .unwrap();
        let g = Constraint::new("1-X^2", poly1(&[1.0, 0.0, -1.0])).unwrap();
        let m = localizing_matrix(&gamma, &g, &MonomialSet::up_to_degree(1, 0)).unwrap();
        assert_eq!(m.entries()[(0, 0)], -3.0);
    }

    #[test]
    fn psd_rank_examples() {
        let m = moment_matrix(&example_37(), &MonomialSet::up_to_degree(1, 2)).unwrap();
        let r = psd_rank(&m, DEFAULT_PSD_TOL, DEFAULT_RANK_TOL);
        assert!(r.is_psd);
        assert_eq!(r.rank, 2);
        assert_eq!(r.kernel.len(), 1);
        let k = &r.kernel[0];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((k.coefficient(&mi([1])) - h).abs() < 1e-12);
        assert!((k.coefficient(&mi([0])) + h).abs() < 1e-12);
        assert_eq!(k.coefficient(&mi([2])), 0.0);

        let id = MomentMatrix::from_parts(MonomialSet::up_to_degree(1, 2).to_vec(), DMatrix::identity(3, 3))
            .unwrap();
        let r = psd_rank(&id, DEFAULT_PSD_TOL, DEFAULT_RANK_TOL);
        assert!(r.is_psd && r.rank == 3 && r.kernel.is_empty());

        let flip = MomentMatrix::from_parts(
            MonomialSet::up_to_degree(1, 1).to_vec(),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        )
        .unwrap();
        let r = psd_rank(&flip, DEFAULT_PSD_TOL, DEFAULT_RANK_TOL);
        assert!(!r.is_psd);
        assert!((r.min_eigenvalue + 1.0).abs() < 1e-14);

        let empty = MomentMatrix::from_parts(Vec::new(), DMatrix::zeros(0, 0)).unwrap();
        let r = psd_rank(&empty, DEFAULT_PSD_TOL, DEFAULT_RANK_TOL);
        assert!(r.is_psd && r.rank == 0);
    }

    #[test]
    fn consistency_examples() {
        let g = example_37();
        let m = moment_matrix(&g, &MonomialSet::up_to_degree(1, 2)).unwrap();
        let r = psd_rank(&m, DEFAULT_PSD_TOL, DEFAULT_RANK_TOL);
        let c = recursive_consistency(&m, &g, &r, DEFAULT_CONSISTENCY_TOL);
        assert!(!c.consistent);
        assert_eq!(c.violations.len(), 1);
        let v = &c.violations[0];
        assert_eq!(v.beta, mi([2]));
        // Lambda(X (X-1) X^2) = gamma_4 - gamma_3 = 1, divided by the kernel norm sqrt(2)
        assert!((v.value - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);

        let g = MomentSequence::univariate(&[1.0; 5]).unwrap();
        let m = moment_matrix(&g, &MonomialSet::up_to_degree(1, 2)).unwrap();
        let r = psd_rank(&m, DEFAULT_PSD_TOL, DEFAULT_RANK_TOL);
        assert_eq!(r.rank, 1);
        assert!(recursive_consistency(&m, &g, &r, DEFAULT_CONSISTENCY_TOL).consistent);

        let g = MomentSequence::univariate(&[1.0, 0.0, 1.0]).unwrap();
        let m = moment_matrix(&g, &MonomialSet::up_to_degree(1, 1)).unwrap();
        let r = psd_rank(&m, DEFAULT_PSD_TOL, DEFAULT_RANK_TOL);
        let c = recursive_consistency(&m, &g, &r, DEFAULT_CONSISTENCY_TOL);
        assert!(c.consistent && c.tested == 0);
    }

    #[test]
    fn smulyan_examples() {
        let mu = AtomicMeasure::new(1, vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        let g = moments_of_atomic(&mu, &MonomialSet::up_to_degree(1, 4)).unwrap();
        let m = moment_matrix(&g, &MonomialSet::up_to_degree(1, 2)).unwrap();
        for split in 0..=3 {
            assert!(smulyan_check(m.entries(), split, 1e-9));
        }
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]);
        let r = smulyan_report(&bad, 1, 1e-9);
        assert!(!r.holds);
        assert!((r.schur_min_eigenvalue + 1.0).abs() < 1e-12);
        assert!(smulyan_check(&DMatrix::identity(2, 2), 1, 1e-9));
    }

    fn arb_measure(nvars: usize) -> impl Strategy<Value = AtomicMeasure> {
        proptest::collection::vec(
            (proptest::collection::vec(0.0f64..1.0, nvars), 0.05f64..1.0),
            1..5,
        )
        .prop_map(move |v| {
            let (atoms, weights) = v.into_iter().unzip();
            AtomicMeasure::new(nvars, atoms, weights).unwrap()
        })
    }

    proptest! {
        #[test]
        fn measures_in_the_box_give_psd_forms(mu in arb_measure(2)) {
            let g = moments_of_atomic(&mu, &MonomialSet::up_to_degree(2, 5)).unwrap();
            let basis = MonomialSet::up_to_degree(2, 2);
            let m = moment_matrix(&g, &basis).unwrap();
            let r = psd_rank(&m, DEFAULT_PSD_TOL, DEFAULT_RANK_TOL);
            prop_assert!(r.is_psd);
            prop_assert!(r.rank <= mu.len());
            let s = Polynomial::var(2, 0);
            let t = Polynomial::var(2, 1);
            let one = Polynomial::constant(2, 1.0);
            let lb = MonomialSet::up_to_degree(2, 1);
            for (name, p) in [("s", s.clone()), ("1-s", &one - &s), ("t", t.clone()), ("1-t", &one - &t)] {
                let c = Constraint::new(name, p).unwrap();
                let l = localizing_matrix(&g, &c, &lb).unwrap();
                prop_assert!(psd_rank(&l, DEFAULT_PSD_TOL, DEFAULT_RANK_TOL).is_psd);
            }
            prop_assert!(recursive_consistency(&m, &g, &r, DEFAULT_CONSISTENCY_TOL).consistent);
        }

        #[test]
        fn smulyan_holds_on_random_psd(
            cols in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 5), 1..6),
            split in 0usize..=5,
        ) {
            let a = DMatrix::from_fn(5, cols.len(), |i, j| cols[j][i]);
            let psd = &a * a.transpose();
            prop_assert!(smulyan_check(&psd, split, 1e-9));
        }
    }

    #[test]
    fn rank_equals_atom_count_for_generic_atoms() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let r = rng.random_range(1..=4);
            let atoms: Vec<Vec<f64>> = (0..r)
                .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
                .collect();
            let weights = (0..r).map(|_| rng.random_range(0.05..1.0)).collect();
            let mu = AtomicMeasure::new(2, atoms, weights).unwrap();
            let basis = MonomialSet::up_to_degree(2, 2);
            let g = moments_of_atomic(&mu, &basis.sums()).unwrap();
            let m = moment_matrix(&g, &basis).unwrap();
            // independence of the basis on the atoms, via the evaluation matrix
            let v = DMatrix::from_fn(mu.len(), basis.len(), |i, j| {
                basis.to_vec()[j].eval(&mu.atoms()[i])
            });
            if numerical_rank(&v, 1e-6) == mu.len() {
                assert_eq!(psd_rank(&m, DEFAULT_PSD_TOL, DEFAULT_RANK_TOL).rank, mu.len());
            }
        }
    }
}
