//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Rank by Gaussian elimination with partial pivoting.
pub fn rank(matrix: &DMatrix<f64>, tol: f64) -> usize {
    let mut a = matrix.clone();
    let (rows, cols) = a.shape();
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let (pivot, max) = (rank..rows)
            .map(|r| (r, a[(r, col)].abs()))
            .fold((rank, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if max <= tol {
            continue;
        }
        a.swap_rows(rank, pivot);
        for r in rank + 1..rows {
            let factor = a[(r, col)] / a[(rank, col)];
            if factor != 0.0 {
                for c in col..cols {
                    let v = a[(rank, c)];
                    a[(r, c)] -= factor * v;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(matrix: &DMatrix<f64>) -> f64 {
    if matrix.nrows() == 0 {
        return f64::INFINITY;
    }
    matrix
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if max_sv == 0.0 {
        return None;
    }
    let eps = max_sv * 1e-12 * a.nrows().max(a.ncols()) as f64;
    svd.solve(b, eps).ok()
}

/// Orthonormal basis of the kernel of `a`, as columns.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = a.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad to a square-or-tall matrix so the thin SVD exposes every right
    // singular vector.
    let rows = a.nrows().max(cols);
    let mut padded = DMatrix::zeros(rows, cols);
    padded.view_mut((0, 0), (a.nrows(), cols)).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let max_sv = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = max_sv.max(1.0) * 1e-10;
    let kernel: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= tol)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();
    if kernel.is_empty() {
        DMatrix::zeros(cols, 0)
    } else {
        DMatrix::from_columns(&kernel)
    }
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
