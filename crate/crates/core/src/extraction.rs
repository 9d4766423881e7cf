//! Atom and weight extraction from a flat moment matrix through
//! multiplication operators on the column space.
//!
//! For a flat moment matrix every shifted pivot column `x_i x^alpha` is a
//! combination of pivot columns. Those combinations form commuting matrices
//! `N_i` whose joint eigenvalues are the atoms. The joint eigenvalues are read
//! off an ordered real Schur basis of a random convex combination of the
//! `N_i`, which triangularizes every `N_i` simultaneously.

use nalgebra::{DMatrix, DVector, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, sym_eigen, sym_norm};
use crate::moments::{euclidean, AtomicMeasure, MomentSequence, ATOM_MERGE_TOL};
use crate::matrix::MomentMatrix;
use crate::poly::{MonomialSet, MultiIndex};

pub const DEFAULT_COMMUTE_TOL: f64 = 1e-7;
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-9;
pub const DEFAULT_WEIGHT_TOL: f64 = 1e-8;
pub const DEFAULT_POINT_TOL: f64 = 1e-6;
/// Joint eigenvalues with a larger imaginary part abort extraction.
pub const IMAG_TOL: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub seed: u64,
    pub commute_tol: f64,
    pub weight_floor: f64,
    pub weight_tol: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            seed: 0,
            commute_tol: DEFAULT_COMMUTE_TOL,
            weight_floor: DEFAULT_WEIGHT_FLOOR,
            weight_tol: DEFAULT_WEIGHT_TOL,
        }
    }
}

/// Pivot monomials and one shift matrix per variable.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplicationSystem {
    pub pivots: Vec<MultiIndex>,
    pub shifts: Vec<DMatrix<f64>>,
}

impl MultiplicationSystem {
    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    /// Largest relative commutator `|N_i N_j - N_j N_i| / max(1, |N_i||N_j|)`
    /// in Frobenius norm.
    pub fn commutator_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.shifts.len() {
            for j in i + 1..self.shifts.len() {
                let (a, b) = (&self.shifts[i], &self.shifts[j]);
                let c = (a * b - b * a).norm();
                worst = worst.max(c / (a.norm() * b.norm()).max(1.0));
            }
        }
        worst
    }
}

/// Chooses pivot columns by pivoted Cholesky restricted to columns whose
/// shifts are all labelled, then expresses every shifted pivot column in
/// the pivot columns.
pub fn build_multiplication_system(m_ext: &MomentMatrix, rank_tol: f64) -> Result<MultiplicationSystem> {
    let basis = m_ext.basis();
    let n = basis.len();
    if n == 0 {
        return Err(Error::EmptyBasis);
    }
    let nvars = basis[0].nvars();
    let m = m_ext.entries();
    let (values, _) = sym_eigen(m);
    let norm = sym_norm(&values);
    if norm == 0.0 {
        return Err(Error::Flatness("moment matrix is zero".into()));
    }
    let rank = values.iter().filter(|v| v.abs() > rank_tol * norm).count();

    let shiftable: Vec<usize> = (0..n)
        .filter(|&j| (0..nvars).all(|i| m_ext.position(&basis[j].shift(i)).is_some()))
        .collect();

    // pivoted Cholesky on the shiftable columns
    let mut pivots: Vec<usize> = Vec::with_capacity(rank);
    let mut l = DMatrix::<f64>::zeros(n, rank);
    let mut resid: Vec<f64> = (0..n).map(|j| m[(j, j)]).collect();
    for k in 0..rank {
        let best = shiftable
            .iter()
            .copied()
            .filter(|j| !pivots.contains(j))
            .max_by(|&a, &b| resid[a].total_cmp(&resid[b]).then(b.cmp(&a)));
        let Some(p) = best.filter(|&p| resid[p] > rank_tol * norm * 1e-3) else {
            return Err(Error::Flatness(format!(
                "shiftable columns span rank {k}, matrix rank is {rank}"
            )));
        };
        let d = resid[p].sqrt();
        for j in 0..n {
            let mut v = m[(j, p)];
            for q in 0..k {
                v -= l[(j, q)] * l[(p, q)];
            }
            l[(j, k)] = v / d;
        }
        for j in 0..n {
            resid[j] -= l[(j, k)] * l[(j, k)];
        }
        pivots.push(p);
    }
    pivots.sort_unstable();

    let pcols = DMatrix::from_fn(n, rank, |i, j| m[(i, pivots[j])]);
    let mut shifts = Vec::with_capacity(nvars);
    for var in 0..nvars {
        let mut nmat = DMatrix::zeros(rank, rank);
        for (j, &p) in pivots.iter().enumerate() {
            let q = m_ext
                .position(&basis[p].shift(var))
                .expect("pivot chosen among shiftable columns");
            let target = m.column(q).into_owned();
            let c = lstsq(&pcols, &target, 1e-13);
            let miss = (&pcols * &c - &target).amax();
            if miss > rank_tol.sqrt() * norm {
                return Err(Error::Flatness(format!(
                    "column {} leaves the pivot span (residual {miss:.3e})",
                    basis[q]
                )));
            }
            nmat.set_column(j, &c);
        }
        shifts.push(nmat);
    }
    Ok(MultiplicationSystem {
        pivots: pivots.iter().map(|&p| basis[p].clone()).collect(),
        shifts,
    })
}

/// Joint eigenvalues of the shift matrices as points, without weights.
pub fn joint_eigenvalues(sys: &MultiplicationSystem, opts: &ExtractOptions) -> Result<Vec<Vec<f64>>> {
    let r = sys.rank();
    let nvars = sys.shifts.len();
    if r == 0 {
        return Ok(Vec::new());
    }
    let defect = sys.commutator_defect();
    if defect > opts.commute_tol {
        return Err(Error::Extraction(format!(
            "shift matrices do not commute (defect {defect:.3e})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut coeffs: Vec<f64> = (0..nvars).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = coeffs.iter().sum();
    coeffs.iter_mut().for_each(|c| *c /= total);
    let mut comb = DMatrix::zeros(r, r);
    for (c, n) in coeffs.iter().zip(&sys.shifts) {
        comb += n * *c;
    }
    let scale = comb.amax().max(1.0);
    let schur = Schur::try_new(comb, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Extraction("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();

    // 2x2 diagonal blocks mark complex-conjugate pairs
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut j = 0;
    while j < r {
        if j + 1 < r && t[(j + 1, j)].abs() > f64::EPSILON * scale {
            let (a, b, c, d) = (t[(j, j)], t[(j, j + 1)], t[(j + 1, j)], t[(j + 1, j + 1)]);
            let half_diff = 0.5 * (a - d);
            let disc = half_diff * half_diff + b * c;
            if disc < 0.0 && (-disc).sqrt() > IMAG_TOL {
                return Err(Error::Extraction(format!(
                    "complex joint eigenvalue (imaginary part {:.3e})",
                    (-disc).sqrt()
                )));
            }
            blocks.push((j, 2));
            j += 2;
        } else {
            blocks.push((j, 1));
            j += 1;
        }
    }

    let projected: Vec<DMatrix<f64>> = sys.shifts.iter().map(|n| q.transpose() * n * &q).collect();
    let mut points = Vec::with_capacity(r);
    for &(start, size) in &blocks {
        if size == 1 {
            points.push(projected.iter().map(|d| d[(start, start)]).collect());
        } else {
            // nearly real pair: split the block by its own eigenvalues
            for k in 0..2 {
                let x: Vec<f64> = projected
                    .iter()
                    .map(|d| {
                        let (a, b, c, e) = (d[(start, start)], d[(start, start + 1)], d[(start + 1, start)], d[(start + 1, start + 1)]);
                        let mid = 0.5 * (a + e);
                        let disc = (0.25 * (a - e) * (a - e) + b * c).max(0.0).sqrt();
                        if k == 0 { mid - disc } else { mid + disc }
                    })
                    .collect();
                points.push(x);
            }
        }
    }
    Ok(points)
}

/// Extracts atoms as joint eigenvalues and solves for weights by least
/// squares on the moments of the pivot monomials and their pairwise sums.
pub fn extract_atoms(
    sys: &MultiplicationSystem,
    gamma: &MomentSequence,
    opts: &ExtractOptions,
) -> Result<AtomicMeasure> {
    let nvars = gamma.nvars();
    let mut points = joint_eigenvalues(sys, opts)?;
    merge_points(&mut points);

    let mut rows: Vec<MultiIndex> = Vec::new();
    for a in &sys.pivots {
        for b in &sys.pivots {
            let s = a.add(b);
            if gamma.contains(&s) && !rows.contains(&s) {
                rows.push(s);
            }
        }
        if gamma.contains(a) && !rows.contains(a) {
            rows.push(a.clone());
        }
    }
    let weights = solve_weights(&points, &rows, gamma);
    let mut atoms = Vec::new();
    let mut kept = Vec::new();
    for (x, w) in points.into_iter().zip(weights) {
        if w < -opts.weight_tol {
            return Err(Error::Extraction(format!("negative weight {w:.3e} at {x:?}")));
        }
        if w >= opts.weight_floor {
            atoms.push(x);
            kept.push(w);
        }
    }
    let mu = AtomicMeasure::new(nvars, atoms, kept)?;
    // Tchakaloff bound on the pivot span
    assert!(
        mu.len() <= sys.rank(),
        "extracted {} atoms from a rank {} system",
        mu.len(),
        sys.rank()
    );
    Ok(mu)
}

fn merge_points(points: &mut Vec<Vec<f64>>) {
    let mut out: Vec<(Vec<f64>, usize)> = Vec::new();
    for p in points.drain(..) {
        match out.iter_mut().find(|(q, _)| euclidean(&p, q) <= ATOM_MERGE_TOL) {
            Some((q, count)) => {
                for (qk, pk) in q.iter_mut().zip(&p) {
                    *qk = (*qk * *count as f64 + pk) / (*count as f64 + 1.0);
                }
                *count += 1;
            }
            None => out.push((p, 1)),
        }
    }
    points.extend(out.into_iter().map(|(p, _)| p));
}

pub(crate) fn solve_weights(points: &[Vec<f64>], rows: &[MultiIndex], gamma: &MomentSequence) -> Vec<f64> {
    let a = DMatrix::from_fn(rows.len(), points.len(), |i, j| rows[i].eval(&points[j]));
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| gamma.get(r).unwrap_or(0.0)));
    lstsq(&a, &b, 1e-14).iter().copied().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    /// `max |gamma_alpha - sum_i w_i x_i^alpha| / max(1, |gamma_alpha|)`.
    pub max_residual: f64,
    pub ok: bool,
    pub checked: usize,
}

/// Compares the measure's moments with `gamma` on every index of `set`
/// for which `gamma` has a value.
pub fn verify_representation(
    gamma: &MomentSequence,
    mu: &AtomicMeasure,
    set: &MonomialSet,
    tol: f64,
) -> Verification {
    let mut max_residual = 0.0f64;
    let mut checked = 0;
    for a in set {
        if let Some(g) = gamma.get(a) {
            checked += 1;
            let r = (g - mu.moment(a)).abs() / g.abs().max(1.0);
            max_residual = max_residual.max(r);
        }
    }
    Verification {
        max_residual,
        ok: max_residual <= tol,
        checked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::moment_matrix;
    use crate::moments::moments_of_atomic;

    fn flat_system(mu: &AtomicMeasure, deg: u32) -> (MultiplicationSystem, MomentSequence) {
        let basis = MonomialSet::up_to_degree(mu.nvars(), deg);
        let g = moments_of_atomic(mu, &basis.sums()).unwrap();
        let m = moment_matrix(&g, &basis).unwrap();
        (build_multiplication_system(&m, 1e-8).unwrap(), g)
    }

    #[test]
    fn single_atom() {
        let mu = AtomicMeasure::dirac(vec![1.7]);
        let (sys, g) = flat_system(&mu, 1);
        assert_eq!(sys.rank(), 1);
        assert!((sys.shifts[0][(0, 0)] - 1.7).abs() < 1e-12);
        let out = extract_atoms(&sys, &g, &ExtractOptions::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.atoms()[0][0] - 1.7).abs() < 1e-12);
        assert!((out.weights()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_atoms_companion_eigenvalues() {
        let mu = AtomicMeasure::new(1, vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        let (sys, _) = flat_system(&mu, 2);
        assert_eq!(sys.rank(), 2);
        let mut ev: Vec<f64> = joint_eigenvalues(&sys, &ExtractOptions::default())
            .unwrap()
            .into_iter()
            .map(|p| p[0])
            .collect();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0].abs() < 1e-12 && (ev[1] - 1.0).abs() < 1e-12);

        let mu = AtomicMeasure::new(1, vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        let (sys, g) = flat_system(&mu, 2);
        let out = extract_atoms(&sys, &g, &ExtractOptions::default()).unwrap();
        let s = out.sorted();
        assert!((s[0].0[0] + 1.0).abs() < 1e-12 && (s[1].0[0] - 1.0).abs() < 1e-12);
        assert!((s[0].1 - 0.5).abs() < 1e-12 && (s[1].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn three_atoms_in_the_plane() {
        let mu = AtomicMeasure::new(
            2,
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            vec![0.25, 0.25, 0.5],
        )
        .unwrap();
        let (sys, g) = flat_system(&mu, 2);
        assert_eq!(sys.rank(), 3);
        assert!(sys.commutator_defect() < 1e-10);
        let out = extract_atoms(&sys, &g, &ExtractOptions::default()).unwrap();
        let (dx, dw) = out.matching_error(&mu).expect("same atom count");
        assert!(dx < 1e-8 && dw < 1e-8);
    }

    #[test]
    fn non_flat_matrix_is_rejected() {
        // full-rank Hankel on {1, X}: the shifted column X^2 is not labelled
        let g = MomentSequence::univariate(&[1.0, 0.0, 1.0]).unwrap();
        let m = moment_matrix(&g, &MonomialSet::up_to_degree(1, 1)).unwrap();
        assert!(matches!(build_multiplication_system(&m, 1e-8), Err(Error::Flatness(_))));
    }

    #[test]
    fn non_commuting_shifts_refused() {
        let sys = MultiplicationSystem {
            pivots: vec![MultiIndex::from([0, 0]), MultiIndex::from([1, 0])],
            shifts: vec![
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
                DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            ],
        };
        assert!(matches!(
            joint_eigenvalues(&sys, &ExtractOptions::default()),
            Err(Error::Extraction(_))
        ));
    }

    #[test]
    fn verification_examples() {
        let mu = AtomicMeasure::new(1, vec![vec![0.5], vec![2.0]], vec![0.3, 0.7]).unwrap();
        let set = MonomialSet::up_to_degree(1, 4);
        let g = moments_of_atomic(&mu, &set).unwrap();
        let v = verify_representation(&g, &mu, &set, 1e-12);
        assert!(v.ok && v.max_residual < 1e-15);

        let bumped = AtomicMeasure::new(1, vec![vec![0.5], vec![2.0]], vec![0.301, 0.7]).unwrap();
        let v = verify_representation(&g, &bumped, &set, 1e-6);
        assert!(!v.ok);
        assert!((v.max_residual - 1e-3).abs() < 1e-9);

        let unit = MonomialSet::up_to_degree(1, 0);
        let v = verify_representation(&g, &bumped, &unit, 1e-6);
        assert!((v.max_residual - 1e-3).abs() < 1e-12);
    }
}
