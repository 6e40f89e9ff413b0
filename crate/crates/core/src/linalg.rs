//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Everything here works on matrices whose side is the number of regression
//! coefficients, so SVD/eigen-based guards are cheap.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Reciprocal condition number below which a matrix is treated as singular.
pub const RCOND_MIN: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute off-diagonal asymmetry relative to the largest entry.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() / scale
}

pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    symmetrize(m).symmetric_eigenvalues()
}

/// Positive semidefinite up to `tol` relative to the largest eigenvalue.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let ev = symmetric_eigenvalues(m);
    let max = ev.amax();
    ev.iter().all(|&e| e >= -tol * max.max(1.0))
}

/// Inverse of a symmetric positive-definite matrix, rejecting ill-conditioned
/// input.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let s = symmetrize(m);
    let ev = s.symmetric_eigenvalues();
    let max = ev.max();
    let min = ev.min();
    if !(max > 0.0) || min / max < RCOND_MIN {
        return Err(Error::SingularCovariance(format!(
            "{what}: eigenvalue range [{min:e}, {max:e}]"
        )));
    }
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance(format!("{what}: not positive definite")))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Reciprocal condition number from singular values; 0 for an empty or zero
/// matrix.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    if max <= 0.0 || !max.is_finite() {
        return 0.0;
    }
    sv.min() / max
}

/// Inverse of a general square matrix. Returns `None` when the matrix is
/// numerically singular.
pub fn try_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if rcond(m) < 1e-14 {
        return None;
    }
    m.clone().try_inverse()
}

/// Solve `a x = b` for square `a`, `None` when `a` is singular.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if rcond(a) < 1e-14 {
        return None;
    }
    a.clone().lu().solve(b)
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Neumaier-compensated sum, used where aggregation order must not matter
/// beyond the last bit.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn spd_inverse_matches_closed_form() {
        let m = dmatrix![4.0, 1.0; 1.0, 3.0];
        let inv = spd_inverse(&m, "m").unwrap();
        let id = &m * &inv;
        assert!((id - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn spd_inverse_rejects_singular() {
        let m = dmatrix![1.0, 1.0; 1.0, 1.0];
        assert!(matches!(
            spd_inverse(&m, "m"),
            Err(Error::SingularCovariance(_))
        ));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = vec![1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn psd_check() {
        assert!(is_psd(&dmatrix![1.0, 0.0; 0.0, 0.0], 1e-12));
        assert!(!is_psd(&dmatrix![1.0, 2.0; 2.0, 1.0], 1e-12));
    }
}
