//! Dense helpers shared by POD and the posterior summaries.

use nalgebra::{DMatrix, SymmetricEigen};

/// Eigenpairs of a symmetric matrix, sorted by decreasing eigenvalue.
pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let e = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..e.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| e.eigenvalues[b].total_cmp(&e.eigenvalues[a]));
    let vals = order.iter().map(|&k| e.eigenvalues[k]).collect();
    let vecs = DMatrix::from_fn(e.eigenvectors.nrows(), order.len(), |i, j| e.eigenvectors[(i, order[j])]);
    (vals, vecs)
}

/// In-place modified Gram-Schmidt, run twice for orthogonality to roundoff.
pub(crate) fn orthonormalize(q: &mut DMatrix<f64>) {
    for _ in 0..2 {
        for j in 0..q.ncols() {
            for i in 0..j {
                let d = q.column(i).dot(&q.column(j));
                let ci = q.column(i).clone_owned();
                q.column_mut(j).axpy(-d, &ci, 1.0);
            }
            let norm = q.column(j).norm();
            q.column_mut(j).unscale_mut(norm);
        }
    }
}

/// Leading left singular vectors of `y` and the squared singular values,
/// via the smaller of `y y^T` and `y^T y`.
///
/// At most `max_rank` pairs are returned. On the `y^T y` branch, pairs whose
/// squared singular value is below `tol * largest` are dropped since their
/// left vectors cannot be recovered.
pub(crate) fn left_singular(y: &DMatrix<f64>, max_rank: usize, tol: f64) -> (Vec<f64>, DMatrix<f64>) {
    let (n, k) = y.shape();
    if n <= k {
        let (vals, u) = sorted_eigen(y * y.transpose());
        let r = max_rank.min(n);
        let vals = vals.into_iter().take(r).map(|v| v.max(0.0)).collect();
        (vals, u.columns(0, r).into_owned())
    } else {
        let (vals, v) = sorted_eigen(y.tr_mul(y));
        let top = vals[0].max(0.0);
        let r = vals.iter().take(max_rank).take_while(|&&l| l > tol * top && l > 0.0).count();
        let mut u = y * v.columns(0, r);
        orthonormalize(&mut u);
        (vals[..r].to_vec(), u)
    }
}
