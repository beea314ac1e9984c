//! Dense symmetric linear algebra on top of `nalgebra`.
//!
//! Every square root here goes through a symmetric eigendecomposition so
//! that rank-deficient ensemble covariances are handled uniformly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor used by [`matrix_sqrt`].
pub const SQRT_EIGEN_FLOOR: f64 = 1e-14;
/// Relative threshold below which eigenvalues are treated as zero in
/// pseudo-inverse square roots.
pub const PINV_REL_TOL: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = max_abs(m).max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    Ok(())
}

/// Eigendecomposition of the symmetric part of `m`.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(m))
}

fn rebuild(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let v = &eig.eigenvectors;
    let d = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| f(l)));
    let scaled = v * DMatrix::from_diagonal(&d);
    symmetrize(&(scaled * v.transpose()))
}

/// Symmetric positive semi-definite square root.
///
/// Eigenvalues below `-1e-10 * ||S||` are rejected; smaller negative values and
/// values below `1e-14 * trace(S)` are floored to zero.
pub fn matrix_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(s)?;
    if !is_symmetric(s, 1e-10) {
        return Err(Error::invalid("matrix_sqrt: input is not symmetric"));
    }
    if s.nrows() == 0 {
        return Ok(s.clone());
    }
    let eig = sym_eigen(s);
    let norm = eig.eigenvalues.iter().fold(0.0_f64, |a, l| a.max(l.abs()));
    let min = eig.eigenvalues.min();
    if min < -1e-10 * norm {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let floor = SQRT_EIGEN_FLOOR * s.trace().abs();
    Ok(rebuild(&eig, |l| if l <= floor { 0.0 } else { l.sqrt() }))
}

/// Inverse square root of a symmetric positive definite matrix.
pub fn inv_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(s)?;
    let eig = sym_eigen(s);
    let max = eig.eigenvalues.max();
    if s.nrows() > 0 && (eig.eigenvalues.min() <= PINV_REL_TOL * max || max <= 0.0) {
        return Err(Error::Singular("inverse square root of singular matrix"));
    }
    Ok(rebuild(&eig, |l| 1.0 / l.sqrt()))
}

/// Pseudo-inverse square root: eigenvalues below `rel_tol * max` map to zero.
pub fn pinv_sqrt(s: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    check_square(s)?;
    let eig = sym_eigen(s);
    let cut = rel_tol * eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l));
    Ok(rebuild(&eig, |l| if l <= cut || l <= 0.0 { 0.0 } else { 1.0 / l.sqrt() }))
}

/// Symmetric pseudo-inverse with an absolute eigenvalue cut.
pub fn pinv_sym_abs(s: &DMatrix<f64>, cut: f64) -> Result<DMatrix<f64>> {
    check_square(s)?;
    let eig = sym_eigen(s);
    Ok(rebuild(&eig, |l| if l <= cut { 0.0 } else { 1.0 / l }))
}

/// Solves `A X = B` for symmetric positive definite `A`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(a)?;
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::Singular("matrix is not positive definite"))?;
    Ok(chol.solve(b))
}

pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(a)?;
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::Singular("matrix is not positive definite"))?;
    Ok(symmetrize(&chol.inverse()))
}

/// `ln det A` for symmetric positive definite `A`.
pub fn spd_log_det(a: &DMatrix<f64>) -> Result<f64> {
    check_square(a)?;
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::Singular("matrix is not positive definite"))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Frobenius norm of `a - b` relative to the Frobenius norm of `b`.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let nb = b.norm();
    let d = (a - b).norm();
    if nb == 0.0 {
        d
    } else {
        d / nb
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!(rel_diff(&matrix_sqrt(&i).unwrap(), &i) < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = matrix_sqrt(&d).unwrap();
        assert!((r[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((r[(1, 1)] - 3.0).abs() < 1e-14);
        assert!(r[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn sqrt_squares_back_for_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 0..100 {
            let n = 1 + k % 16;
            let s = random_spd(n, &mut rng);
            let r = matrix_sqrt(&s).unwrap();
            assert!(rel_diff(&(&r * &r), &s) <= 1e-10);
            assert!(is_symmetric(&r, 1e-14));
        }
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(matrix_sqrt(&m), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn sqrt_floors_tiny_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-13]);
        let r = matrix_sqrt(&m).unwrap();
        assert_eq!(r[(1, 1)], 0.0);
    }

    #[test]
    fn sqrt_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matrix_sqrt(&m).is_err());
    }

    #[test]
    fn pinv_sqrt_of_rank_one() {
        let v = DVector::from_vec(vec![3.0, 4.0]);
        let m = &v * v.transpose();
        let p = pinv_sqrt(&m, PINV_REL_TOL).unwrap();
        // p * m * p is the projector onto span(v)
        let proj = &p * &m * &p;
        let expected = &v * v.transpose() / 25.0;
        assert!(rel_diff(&proj, &expected) < 1e-12);
    }

    #[test]
    fn log_det_matches_product_of_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!((spd_log_det(&m).unwrap() - (1.75_f64).ln()).abs() < 1e-14);
    }
}
