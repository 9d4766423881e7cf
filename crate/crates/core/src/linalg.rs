//! Small dense helpers over nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
pub(crate) fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (j, &i) in order.iter().enumerate() {
        vectors.set_column(j, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Largest absolute eigenvalue, i.e. the spectral norm of a symmetric matrix.
pub(crate) fn sym_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Pseudo-inverse of a symmetric matrix, dropping eigenvalues with
/// `|lambda| <= rel_cutoff * max|lambda|`.
pub(crate) fn sym_pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let (values, vectors) = sym_eigen(m);
    let cut = rel_cutoff * sym_norm(&values);
    let mut out = DMatrix::zeros(n, n);
    for (j, &lam) in values.iter().enumerate() {
        if lam.abs() > cut && lam != 0.0 {
            let v = vectors.column(j);
            out += (v * v.transpose()) / lam;
        }
    }
    out
}

/// Minimum-norm least-squares solution of `a x = b` via SVD, singular values
/// below `rel_cutoff * sigma_max` treated as zero.
pub(crate) fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rel_cutoff: f64) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |m, v| m.max(*v));
    let eps = (rel_cutoff * smax).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Lawson–Hanson non-negative least squares `min |a x - b|, x >= 0`.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, max_iter: usize) -> DVector<f64> {
    let (m, n) = a.shape();
    let mut x = DVector::zeros(n);
    if n == 0 || m == 0 {
        return x;
    }
    let tol = 10.0 * f64::EPSILON * max_abs(a).max(1.0) * m.max(n) as f64;
    let mut passive = vec![false; n];
    // columns that entered and left again without moving x; skipped until x changes
    let mut stalled = vec![false; n];
    let mut iter = 0;
    loop {
        let w = a.tr_mul(&(b - a * &x));
        let Some(t) = (0..n)
            .filter(|&j| !passive[j] && !stalled[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]))
        else {
            break;
        };
        if w[t] <= tol {
            break;
        }
        passive[t] = true;
        let before = x.clone();
        loop {
            iter += 1;
            if iter > max_iter {
                return x;
            }
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let z = lstsq(&a.select_columns(idx.iter()), b, 1e-14);
            if z.iter().all(|&v| v > 0.0) {
                for (k, &j) in idx.iter().enumerate() {
                    x[j] = z[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &j) in idx.iter().enumerate() {
                if z[k] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - z[k]));
                }
            }
            for (k, &j) in idx.iter().enumerate() {
                x[j] += alpha * (z[k] - x[j]);
                if x[j] <= tol {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
        if (&x - &before).amax() <= tol {
            stalled[t] = !passive[t];
        } else {
            stalled.iter_mut().for_each(|s| *s = false);
        }
    }
    x
}
