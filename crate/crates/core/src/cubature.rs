//! Atomic fits on bounded semialgebraic sets: grid candidates, non-negative
//! least squares, clustering of neighbouring grid atoms and a
//! Levenberg–Marquardt polish of positions and weights.
//!
//! Used when the minimum-norm extension of a moment matrix yields a measure
//! that leaves `K` (or none at all) although some other extension would not.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dominating::axis_points;
use crate::error::{Error, Result};
use crate::linalg::{lstsq, nnls};
use crate::matrix::Constraint;
use crate::moments::{AtomicMeasure, MomentSequence};
use crate::poly::MultiIndex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubatureOptions {
    /// Overrides the per-dimension default grid resolution.
    pub points_per_axis: Option<usize>,
    pub polish_iters: usize,
}

impl Default for CubatureOptions {
    fn default() -> Self {
        CubatureOptions {
            points_per_axis: None,
            polish_iters: 400,
        }
    }
}

pub fn default_points_per_axis(nvars: usize) -> usize {
    match nvars {
        1 => 1001,
        2 => 101,
        3 => 31,
        n => ((30_000f64).powf(1.0 / n as f64).floor() as usize).max(5),
    }
}

/// Bounding box read off the constraints: linear univariate pieces
/// `c0 + c1 x_i >= 0` and balls/ellipsoids `c - sum a_i x_i^2 >= 0`.
/// `None` unless every coordinate ends up bounded on both sides.
pub fn constraint_box(constraints: &[Constraint], nvars: usize) -> Option<Vec<(f64, f64)>> {
    let mut lo = vec![f64::NEG_INFINITY; nvars];
    let mut hi = vec![f64::INFINITY; nvars];
    for c in constraints {
        let g = &c.g;
        if g.nvars() != nvars {
            continue;
        }
        let constant = g.coefficient(&MultiIndex::zero(nvars));
        let mut linear: Option<(usize, f64)> = None;
        let mut squares = vec![0.0; nvars];
        let mut shape = Shape::Unknown;
        for (alpha, coef) in g.terms() {
            if alpha.is_zero() {
                continue;
            }
            let nz: Vec<(usize, u32)> = alpha
                .exponents()
                .iter()
                .enumerate()
                .filter(|(_, e)| **e > 0)
                .map(|(i, e)| (i, *e))
                .collect();
            match (nz.as_slice(), shape) {
                ([(i, 1)], Shape::Unknown) => {
                    linear = Some((*i, coef));
                    shape = Shape::Linear;
                }
                ([(i, 2)], Shape::Unknown | Shape::Quadric) if coef < 0.0 => {
                    squares[*i] = -coef;
                    shape = Shape::Quadric;
                }
                _ => {
                    shape = Shape::Other;
                }
            }
        }
        match shape {
            Shape::Linear => {
                let (i, c1) = linear.expect("linear shape has a term");
                let bound = -constant / c1;
                if c1 > 0.0 {
                    lo[i] = lo[i].max(bound);
                } else {
                    hi[i] = hi[i].min(bound);
                }
            }
            Shape::Quadric if constant > 0.0 => {
                for (i, &a) in squares.iter().enumerate() {
                    if a > 0.0 {
                        let r = (constant / a).sqrt();
                        lo[i] = lo[i].max(-r);
                        hi[i] = hi[i].min(r);
                    }
                }
            }
            _ => {}
        }
    }
    let bounds: Vec<(f64, f64)> = lo.into_iter().zip(hi).collect();
    bounds
        .iter()
        .all(|(l, h)| l.is_finite() && h.is_finite() && l <= h)
        .then_some(bounds)
}

#[derive(Clone, Copy, PartialEq)]
enum Shape {
    Unknown,
    Linear,
    Quadric,
    Other,
}

/// Positive atomic measure supported in the box and on `{g >= 0}` whose
/// moments match `data` on its support to relative accuracy `tol`.
pub fn fit_atomic(
    data: &MomentSequence,
    constraints: &[Constraint],
    bounds: &[(f64, f64)],
    tol: f64,
    opts: &CubatureOptions,
) -> Result<AtomicMeasure> {
    let nvars = data.nvars();
    if bounds.len() != nvars {
        return Err(Error::DimensionMismatch {
            expected: nvars,
            got: bounds.len(),
        });
    }
    let steps = opts
        .points_per_axis
        .unwrap_or_else(|| default_points_per_axis(nvars))
        .max(2);
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(l, h)| axis_points(l, h, steps))
        .collect();
    let spacing: Vec<f64> = bounds
        .iter()
        .map(|&(l, h)| (h - l) / (steps - 1) as f64)
        .collect();

    let mut candidates: Vec<Vec<usize>> = Vec::new();
    let mut counter = vec![0usize; nvars];
    'grid: loop {
        let x: Vec<f64> = counter.iter().enumerate().map(|(i, &k)| axes[i][k]).collect();
        if constraints.iter().all(|c| c.holds_at(&x, 1e-12)) {
            candidates.push(counter.clone());
        }
        for i in (0..nvars).rev() {
            counter[i] += 1;
            if counter[i] < steps {
                continue 'grid;
            }
            counter[i] = 0;
        }
        break;
    }
    if candidates.is_empty() {
        return Err(Error::Extraction("no grid point satisfies the constraints".into()));
    }
    let point = |c: &[usize]| -> Vec<f64> { c.iter().enumerate().map(|(i, &k)| axes[i][k]).collect() };

    let rows: Vec<(MultiIndex, f64)> = data.iter().map(|(a, v)| (a.clone(), v)).collect();
    let mut a = DMatrix::from_fn(rows.len(), candidates.len(), |i, j| rows[i].0.eval(&point(&candidates[j])));
    let mut b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    for i in 0..rows.len() {
        let s = a.row(i).amax().max(b[i].abs()).max(1e-300);
        a.row_mut(i).scale_mut(1.0 / s);
        b[i] /= s;
    }
    let w = nnls(&a, &b, 3 * rows.len() + 50);

    // cluster support atoms that touch on the grid
    let support: Vec<usize> = (0..candidates.len()).filter(|&j| w[j] > 0.0).collect();
    let mut parent: Vec<usize> = (0..support.len()).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for u in 0..support.len() {
        for v in u + 1..support.len() {
            let (cu, cv) = (&candidates[support[u]], &candidates[support[v]]);
            if cu.iter().zip(cv).all(|(x, y)| x.abs_diff(*y) <= 1) {
                let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
                parent[ru] = rv;
            }
        }
    }
    let mut clusters: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut root_slot: Vec<Option<usize>> = vec![None; support.len()];
    for u in 0..support.len() {
        let r = find(&mut parent, u);
        let wu = w[support[u]];
        let x = point(&candidates[support[u]]);
        let slot = *root_slot[r].get_or_insert_with(|| {
            clusters.push((vec![0.0; nvars], 0.0));
            clusters.len() - 1
        });
        let (pos, total) = &mut clusters[slot];
        for (p, xi) in pos.iter_mut().zip(&x) {
            *p += wu * xi;
        }
        *total += wu;
    }
    for (pos, total) in &mut clusters {
        pos.iter_mut().for_each(|p| *p /= *total);
    }
    let mut atoms: Vec<Vec<f64>> = clusters.iter().map(|c| c.0.clone()).collect();
    let mut weights: Vec<f64> = refit_weights(&atoms, &rows);

    let mut residual = relative_residual(&atoms, &weights, &rows);
    if residual > tol {
        (atoms, weights) = polish(atoms, weights, &rows, bounds, &spacing, opts.polish_iters);
        residual = relative_residual(&atoms, &weights, &rows);
    }
    if residual > tol {
        return Err(Error::Extraction(format!(
            "no atomic fit on the grid (relative residual {residual:.3e})"
        )));
    }
    let keep: Vec<usize> = (0..atoms.len()).filter(|&j| weights[j] > 0.0).collect();
    let atoms: Vec<Vec<f64>> = keep.iter().map(|&j| atoms[j].clone()).collect();
    let weights: Vec<f64> = keep.iter().map(|&j| weights[j]).collect();
    AtomicMeasure::new(nvars, atoms, weights)
}

fn refit_weights(atoms: &[Vec<f64>], rows: &[(MultiIndex, f64)]) -> Vec<f64> {
    let a = DMatrix::from_fn(rows.len(), atoms.len(), |i, j| rows[i].0.eval(&atoms[j]) / rows[i].1.abs().max(1.0));
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1 / r.1.abs().max(1.0)));
    let w = nnls(&a, &b, 3 * atoms.len() + 50);
    w.iter().copied().collect()
}

fn residuals(atoms: &[Vec<f64>], weights: &[f64], rows: &[(MultiIndex, f64)]) -> DVector<f64> {
    DVector::from_iterator(
        rows.len(),
        rows.iter().map(|(a, v)| {
            let m: f64 = atoms.iter().zip(weights).map(|(x, w)| w * a.eval(x)).sum();
            (m - v) / v.abs().max(1.0)
        }),
    )
}

fn relative_residual(atoms: &[Vec<f64>], weights: &[f64], rows: &[(MultiIndex, f64)]) -> f64 {
    residuals(atoms, weights, rows).amax()
}

/// Levenberg–Marquardt on atom positions and weights; positions stay in the
/// box, weights stay non-negative.
fn polish(
    mut atoms: Vec<Vec<f64>>,
    mut weights: Vec<f64>,
    rows: &[(MultiIndex, f64)],
    bounds: &[(f64, f64)],
    spacing: &[f64],
    iters: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = atoms.len();
    let n = bounds.len();
    if k == 0 {
        return (atoms, weights);
    }
    let cost = |a: &[Vec<f64>], w: &[f64]| residuals(a, w, rows).norm_squared();
    let mut current = cost(&atoms, &weights);
    let mut lambda = 1e-3;
    // positions move on the grid scale; weights on the mass scale
    let pos_scale: Vec<f64> = spacing.iter().map(|s| s.max(1e-12)).collect();
    for _ in 0..iters {
        if current.sqrt() < 1e-15 {
            break;
        }
        let r = residuals(&atoms, &weights, rows);
        let mut jac = DMatrix::zeros(rows.len(), k * (n + 1));
        for (ri, (alpha, v)) in rows.iter().enumerate() {
            let s = v.abs().max(1.0);
            for j in 0..k {
                for i in 0..n {
                    if let Some(lower) = alpha.unshift(i) {
                        let e = alpha.exponents()[i] as f64;
                        jac[(ri, j * n + i)] = weights[j] * e * lower.eval(&atoms[j]) * pos_scale[i] / s;
                    }
                }
                jac[(ri, k * n + j)] = alpha.eval(&atoms[j]) / s;
            }
        }
        let g = jac.tr_mul(&r);
        let h = jac.tr_mul(&jac);
        let mut improved = false;
        for _ in 0..12 {
            let mut damped = h.clone();
            for d in 0..damped.nrows() {
                damped[(d, d)] += lambda * (h[(d, d)] + 1e-12);
            }
            let step = lstsq(&damped, &(-&g), 1e-15);
            let mut trial_atoms = atoms.clone();
            let mut trial_weights = weights.clone();
            for j in 0..k {
                for i in 0..n {
                    let x = trial_atoms[j][i] + step[j * n + i] * pos_scale[i];
                    trial_atoms[j][i] = x.clamp(bounds[i].0, bounds[i].1);
                }
                trial_weights[j] = (trial_weights[j] + step[k * n + j]).max(0.0);
            }
            let c = cost(&trial_atoms, &trial_weights);
            if c < current {
                atoms = trial_atoms;
                weights = trial_weights;
                current = c;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (atoms, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::moments_of_atomic;
    use crate::poly::{MonomialSet, Polynomial};

    fn lin(nvars: usize, c0: f64, i: usize, c1: f64) -> Polynomial {
        &Polynomial::constant(nvars, c0) + &Polynomial::var(nvars, i).scale(c1)
    }

    fn unit_square() -> Vec<Constraint> {
        vec![
            Constraint::new("s", lin(2, 0.0, 0, 1.0)).unwrap(),
            Constraint::new("1-s", lin(2, 1.0, 0, -1.0)).unwrap(),
            Constraint::new("t", lin(2, 0.0, 1, 1.0)).unwrap(),
            Constraint::new("1-t", lin(2, 1.0, 1, -1.0)).unwrap(),
        ]
    }

    #[test]
    fn box_from_linear_constraints() {
        assert_eq!(constraint_box(&unit_square(), 2), Some(vec![(0.0, 1.0), (0.0, 1.0)]));
        assert_eq!(constraint_box(&unit_square()[..3], 2), None);
        let x = Polynomial::var(1, 0);
        let ball = Constraint::new("ball", &Polynomial::constant(1, 4.0) - &(&x * &x)).unwrap();
        assert_eq!(constraint_box(&[ball], 1), Some(vec![(-2.0, 2.0)]));
    }

    #[test]
    fn recovers_grid_atoms_exactly() {
        let mu = AtomicMeasure::new(2, vec![vec![0.0, 0.0], vec![0.5, 0.5]], vec![0.5, 0.5]).unwrap();
        let data = moments_of_atomic(&mu, &MonomialSet::up_to_degree(2, 2)).unwrap();
        let cons: Vec<Constraint> = vec![
            Constraint::new("s", lin(2, 0.0, 0, 1.0)).unwrap(),
            Constraint::new("a-s", lin(2, 0.5, 0, -1.0)).unwrap(),
            Constraint::new("t", lin(2, 0.0, 1, 1.0)).unwrap(),
            Constraint::new("a-t", lin(2, 0.5, 1, -1.0)).unwrap(),
        ];
        let bounds = constraint_box(&cons, 2).unwrap();
        let fit = fit_atomic(&data, &cons, &bounds, 1e-10, &CubatureOptions::default()).unwrap();
        let (dx, dw) = fit.matching_error(&mu).unwrap();
        assert!(dx < 1e-9 && dw < 1e-9, "{fit:?}");
    }

    #[test]
    fn polishes_off_grid_atoms() {
        let mu = AtomicMeasure::new(1, vec![vec![0.1234567], vec![0.7654321]], vec![0.3, 0.7]).unwrap();
        let data = moments_of_atomic(&mu, &MonomialSet::up_to_degree(1, 3)).unwrap();
        let cons = vec![
            Constraint::new("x", lin(1, 0.0, 0, 1.0)).unwrap(),
            Constraint::new("1-x", lin(1, 1.0, 0, -1.0)).unwrap(),
        ];
        let opts = CubatureOptions {
            points_per_axis: Some(41),
            ..CubatureOptions::default()
        };
        let fit = fit_atomic(&data, &cons, &[(0.0, 1.0)], 1e-10, &opts).unwrap();
        // interior data of degree 3 is not determinate; any fit with at most |C| atoms will do
        assert!(fit.len() <= data.len());
        let check = moments_of_atomic(&fit, &MonomialSet::up_to_degree(1, 3)).unwrap();
        for (a, v) in data.iter() {
            assert!((check.value(a).unwrap() - v).abs() < 1e-10);
        }
    }

    #[test]
    fn infeasible_data_is_refused() {
        // mean outside [0, 1]
        let data = MomentSequence::univariate(&[1.0, 2.0, 4.0]).unwrap();
        let cons = vec![
            Constraint::new("x", lin(1, 0.0, 0, 1.0)).unwrap(),
            Constraint::new("1-x", lin(1, 1.0, 0, -1.0)).unwrap(),
        ];
        assert!(fit_atomic(&data, &cons, &[(0.0, 1.0)], 1e-8, &CubatureOptions::default()).is_err());
    }
}
