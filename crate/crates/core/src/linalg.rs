//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub(crate) type Chol = Cholesky<f64, Dyn>;

pub(crate) fn cholesky(m: &DMatrix<f64>, context: &'static str) -> Result<Chol> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite { context });
    }
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite { context })
}

/// log|M| from a Cholesky factor.
pub(crate) fn log_det(chol: &Chol) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// zᵀ M⁻¹ z, using the factor of M.
pub(crate) fn quad_form_inv(chol: &Chol, z: &DVector<f64>) -> f64 {
    let mut y = z.clone();
    chol.l_dirty()
        .solve_lower_triangular_mut(&mut y);
    y.norm_squared()
}

/// Largest absolute difference between `m` and its transpose.
pub(crate) fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_form_matches_explicit_inverse() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let z = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let chol = cholesky(&m, "test").unwrap();
        let direct = (z.transpose() * m.clone().try_inverse().unwrap() * &z)[(0, 0)];
        assert!((quad_form_inv(&chol, &z) - direct).abs() < 1e-12);
        assert!((log_det(&chol) - m.determinant().ln()).abs() < 1e-12);
    }

    #[test]
    fn non_finite_is_rejected() {
        let m = DMatrix::from_element(2, 2, f64::NAN);
        assert!(cholesky(&m, "nan").is_err());
    }
}
