//! Dense symmetric solves backed by nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2};

use crate::error::{CureError, Result};

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub(crate) fn min_eigenvalue(a: &Array2<f64>) -> f64 {
    SymmetricEigen::new(to_dmatrix(a))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub(crate) fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let chol = to_dmatrix(a)
        .cholesky()
        .ok_or_else(|| CureError::RankDeficient {
            eigenvalue: min_eigenvalue(a),
        })?;
    let x = chol.solve(&DVector::from_iterator(b.len(), b.iter().copied()));
    Ok(Array1::from_iter(x.iter().copied()))
}

/// Inverse of a symmetric positive-definite matrix.
///
/// Fails when the smallest eigenvalue is not positive relative to the largest.
pub(crate) fn spd_inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    let m = to_dmatrix(a);
    let eig = SymmetricEigen::new(m.clone());
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min.is_nan() || min <= max * 1e-14 {
        return Err(CureError::RankDeficient { eigenvalue: min });
    }
    let chol = m
        .cholesky()
        .ok_or(CureError::RankDeficient { eigenvalue: min })?;
    let inv = chol.inverse();
    // symmetrize away rounding in the back-substitution
    let inv = (&inv + inv.transpose()) * 0.5;
    Ok(from_dmatrix(&inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn inverse_of_spd() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let inv = spd_inverse(&a).unwrap();
        let id = a.dot(&inv);
        assert!((id[[0, 0]] - 1.0).abs() < 1e-14 && id[[0, 1]].abs() < 1e-14);
        let x = solve_spd(&a, &array![1.0, 2.0]).unwrap();
        assert!((a.dot(&x) - array![1.0, 2.0])
            .iter()
            .all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn singular_reports_eigenvalue() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        match spd_inverse(&a) {
            Err(CureError::RankDeficient { eigenvalue }) => assert!(eigenvalue.abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }
}
