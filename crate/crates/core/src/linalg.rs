//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest condition number accepted for matrices that must be inverted.
pub const MAX_CONDITION: f64 = 1e12;

/// 2-norm condition number; `+inf` for singular input.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a square matrix, rejected above [`MAX_CONDITION`].
pub fn checked_inverse(a: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::dims(name, a.nrows(), a.ncols()));
    }
    let condition = condition_number(a);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned {
            name: name.to_string(),
            condition,
        });
    }
    a.clone().try_inverse().ok_or(Error::IllConditioned {
        name: name.to_string(),
        condition,
    })
}

/// `qᵀ G⁻¹ q` via Cholesky, `None` when `G` is not numerically positive definite.
pub fn inverse_quadratic(g: &DMatrix<f64>, q: &DVector<f64>) -> Option<f64> {
    let chol = g.clone().cholesky()?;
    let l = chol.l();
    let y = l.solve_lower_triangular(q)?;
    let v = y.norm_squared();
    v.is_finite().then_some(v)
}

/// `qᵀ G⁺ q` for symmetric positive semidefinite `G`, or `+inf` when `q` has
/// a component along the numerical null space of `G`.
pub fn pseudo_inverse_quadratic(g: &DMatrix<f64>, q: &DVector<f64>) -> f64 {
    let eig = g.clone().symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let q_norm = q.norm();
    if q_norm == 0.0 {
        return 0.0;
    }
    let cutoff = scale * 1e-12 * g.nrows() as f64;
    let mut total = 0.0;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        let coef = eig.eigenvectors.column(i).dot(q);
        if lambda > cutoff {
            total += coef * coef / lambda;
        } else if coef.abs() > 1e-9 * q_norm {
            return f64::INFINITY;
        }
    }
    total
}

/// Orthonormal basis of the null space of `a` (columns), by SVD with a
/// relative rank cutoff.
pub fn null_space(a: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // pad to at least square so the SVD yields a full set of right vectors
    let mut padded = DMatrix::zeros(rows.max(cols), cols);
    padded.rows_mut(0, rows).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let smax = svd.singular_values.max();
    let cutoff = rtol * smax.max(f64::MIN_POSITIVE);
    let null: Vec<usize> = (0..cols)
        .filter(|&i| svd.singular_values[i] <= cutoff || smax == 0.0)
        .collect();
    let mut basis = DMatrix::zeros(cols, null.len());
    for (j, &i) in null.iter().enumerate() {
        basis.set_column(j, &v_t.row(i).transpose());
    }
    basis
}

/// Row-major nested vectors into a matrix with the given shape.
pub fn matrix_from_rows(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    for row in rows {
        if row.len() != ncols {
            return Err(Error::dims(field, ncols, row.len()));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| a.row(i).iter().copied().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_inverse_matches_inverse_when_definite() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let q = DVector::from_vec(vec![1.0, -1.0]);
        let a = inverse_quadratic(&g, &q).unwrap();
        let b = pseudo_inverse_quadratic(&g, &q);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn pseudo_inverse_detects_null_component() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(pseudo_inverse_quadratic(&g, &DVector::from_vec(vec![1.0, 1.0])).is_infinite());
        let v = pseudo_inverse_quadratic(&g, &DVector::from_vec(vec![3.0, 0.0]));
        assert!((v - 9.0).abs() < 1e-12);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let z = null_space(&a, 1e-12);
        assert_eq!(z.ncols(), 2);
        assert!((&a * &z).norm() < 1e-12);
    }

    #[test]
    fn singular_inverse_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            checked_inverse(&a, "mixing"),
            Err(Error::IllConditioned { .. })
        ));
    }
}
