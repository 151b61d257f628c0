//! Small dense linear-algebra helpers shared by the classical smoothers.

use nalgebra::{DMatrix, DVector};

/// Pivot magnitude below which the LU fallback reports the system as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Solves `A X = B` for square `A`.
///
/// Tries a Cholesky factorization first (the common case: `A` is a
/// covariance). If `A` is not numerically SPD, falls back to LU with partial
/// pivoting and rejects the system when a pivot is below [`PIVOT_TOLERANCE`]
/// relative to the largest entry of `A`.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    debug_assert!(a.is_square() && a.nrows() == b.nrows());
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    let scale = a.amax().max(1.0);
    let lu = a.clone().lu();
    let u = lu.u();
    if u.diagonal().iter().any(|p| p.abs() <= PIVOT_TOLERANCE * scale) {
        return None;
    }
    lu.solve(b)
}

/// Solves `X A = B` for square `A` (i.e. `X = B A⁻¹`) without forming the inverse.
pub fn solve_right(b: &DMatrix<f64>, a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    solve(&a.transpose(), &b.transpose()).map(|x| x.transpose())
}

/// Replaces `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Largest absolute asymmetry `max |m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Central finite-difference Jacobian of `f` at `x`, returned as a `k x m` matrix.
pub fn numerical_jacobian<F>(f: F, x: &DVector<f64>, eps: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let m = x.len();
    let mut probe = x.clone();
    let mut columns = Vec::with_capacity(m);
    for j in 0..m {
        probe[j] = x[j] + eps;
        let plus = f(&probe);
        probe[j] = x[j] - eps;
        let minus = f(&probe);
        probe[j] = x[j];
        columns.push((plus - minus) / (2.0 * eps));
    }
    if columns.is_empty() {
        let k = f(x).len();
        return DMatrix::zeros(k, 0);
    }
    DMatrix::from_columns(&columns)
}

/// Step used for Jacobians of functions that do not provide one analytically.
pub fn default_jacobian_step(x: &[f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    1e-6 * (1.0 + norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn jacobian_of_linear_map_is_its_matrix() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let x = DVector::from_vec(vec![0.3, -1.2]);
        let jac = numerical_jacobian(|v| &h * v, &x, 1e-6);
        assert_abs_diff_eq!(jac, h, epsilon = 1e-8);
    }

    #[test]
    fn jacobian_of_constant_map_is_zero() {
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let jac = numerical_jacobian(|_| DVector::from_vec(vec![5.0, -1.0]), &x, 1e-4);
        assert_eq!(jac, DMatrix::zeros(2, 3));
    }

    #[test]
    fn solve_falls_back_to_lu_for_indefinite_systems() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[2.0, 3.0]);
        let x = solve(&a, &b).unwrap();
        assert_abs_diff_eq!(x, DMatrix::from_row_slice(2, 1, &[3.0, 2.0]), epsilon = 1e-14);
    }

    #[test]
    fn solve_rejects_singular_systems() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DMatrix::identity(2, 2);
        assert!(solve(&a, &b).is_none());
        assert!(solve(&DMatrix::zeros(3, 3), &DMatrix::identity(3, 3)).is_none());
    }

    #[test]
    fn right_solve_inverts_from_the_right() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = solve_right(&b, &a).unwrap();
        assert_abs_diff_eq!(&x * &a, b, epsilon = 1e-12);
    }
}
