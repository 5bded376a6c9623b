//! Small dense Cholesky routines with explicit pivot control.
//!
//! The covariance and Hessian solves in this crate are at most
//! (d+1) x (d+1) with d around 10, so a straightforward O(n^3)
//! factorization is plenty. Rolling it by hand buys two things the
//! general-purpose decompositions don't guarantee: a deterministic
//! singularity verdict (pivots are compared against a relative
//! tolerance instead of whatever rounding noise produces), and the
//! certainty that no explicit inverse is ever formed.

use nalgebra::{DMatrix, DVector};

/// Lower-triangular Cholesky factor of a symmetric matrix, or `None`
/// if any pivot falls below `n * eps * max_diag` (rank deficiency up
/// to floating-point scale).
pub(crate) fn cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return None;
    }
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0_f64, f64::max);
    let tol = (n as f64) * f64::EPSILON * max_diag;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > tol) || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Some(l)
}

/// Solves (L L^T) x = b by forward then backward substitution.
pub(crate) fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        for k in 0..i {
            let v = x[k];
            x[i] -= l[(i, k)] * v;
        }
        x[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let v = x[k];
            x[i] -= l[(k, i)] * v;
        }
        x[i] /= l[(i, i)];
    }
    x
}

/// log det(L L^T) = 2 * sum_i log L_ii.
pub(crate) fn chol_log_det(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn factor_solve_roundtrip() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let l = cholesky(&a).expect("PD matrix must factor");
        let b = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let x = chol_solve(&l, &b);
        let r = &a * &x - &b;
        assert!(r.norm() < 1e-12, "residual {}", r.norm());
    }

    #[test]
    fn rejects_rank_deficient() {
        // exact rank-1 outer product: the trailing pivot is rounding noise
        let z = DVector::from_column_slice(&[0.6, 0.4]);
        let a: DMatrix<f64> = 0.5 * &z * z.transpose();
        assert!(cholesky(&a).is_none());
        assert!(cholesky(&DMatrix::zeros(2, 2)).is_none());
        let zero_col = DMatrix::from_row_slice(2, 2, &[0.0625, 0.0, 0.0, 0.0]);
        assert!(cholesky(&zero_col).is_none());
    }

    #[test]
    fn log_det_matches_diagonal_case() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 8.0]);
        let l = cholesky(&a).unwrap();
        assert_relative_eq!(chol_log_det(&l), (16.0_f64).ln(), max_relative = 1e-14);
    }
}
