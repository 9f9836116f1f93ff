//! Moore-Penrose pseudoinverse for small dense matrices.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Relative singular-value cutoff used when none is given.
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

fn check(m: &DenseMatrix, tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::invalid(format!("pinv tolerance {tol} must lie in (0, 1)")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    Ok(())
}

/// Pseudoinverse via SVD; singular values below `tol * sigma_max` are treated as zero.
pub fn pinv(m: &DenseMatrix, tol: f64) -> Result<DenseMatrix> {
    check(m, tol)?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(DenseMatrix::zeros(cols, rows));
    }
    if rows < cols {
        return Ok(pinv(&m.transpose(), tol)?.transpose());
    }
    let (w, v) = jacobi_svd(m.clone());
    let sigma: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);
    let mut out = DenseMatrix::zeros(cols, rows);
    if sigma_max <= 0.0 {
        return Ok(out);
    }
    let cutoff = tol * sigma_max;
    for (k, &s) in sigma.iter().enumerate() {
        if s > cutoff {
            // columns of w are sigma_k u_k, so v_k u_k^T / sigma_k = v_k w_k^T / sigma_k^2
            out.ger(1.0 / (s * s), &v.column(k), &w.column(k), 1.0);
        }
    }
    Ok(out)
}

/// One-sided Jacobi SVD for `rows >= cols`: returns `(A V, V)` with the
/// columns of `A V` mutually orthogonal, their norms being the singular values.
///
/// nalgebra's bidiagonal SVD loses accuracy on inputs with exactly zero
/// singular values, which is the common case here.
fn jacobi_svd(mut w: DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let n = w.ncols();
    let mut v = DenseMatrix::identity(n, n);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    (w, v)
}

fn rotate(m: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let a = m[(i, p)];
        let b = m[(i, q)];
        m[(i, p)] = c * a - s * b;
        m[(i, q)] = s * a + c * b;
    }
}

/// Pseudoinverse of a symmetric matrix through its eigendecomposition.
///
/// Only the lower triangle is trusted; the result is exactly symmetric.
pub fn pinv_symmetric(m: &DenseMatrix, tol: f64) -> Result<DenseMatrix> {
    check(m, tol)?;
    if !m.is_square() {
        return Err(Error::invalid(format!(
            "symmetric pinv needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(m.clone());
    let lambda_max = eig.eigenvalues.amax();
    let mut out = DenseMatrix::zeros(n, n);
    if lambda_max <= 0.0 {
        return Ok(out);
    }
    let cutoff = tol * lambda_max;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff {
            let q = eig.eigenvectors.column(k);
            out.ger(1.0 / lambda, &q, &q, 1.0);
        }
    }
    let sym = (&out + out.transpose()) * 0.5;
    Ok(sym)
}

/// Largest absolute entry, the matrix infinity-max norm used throughout the tests.
pub fn max_abs(m: &DenseMatrix) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn penrose_residuals(m: &DenseMatrix, p: &DenseMatrix) -> [f64; 4] {
        let mp = m * p;
        let pm = p * m;
        [
            max_abs(&(&mp * m - m)),
            max_abs(&(&pm * p - p)),
            max_abs(&(&mp - mp.transpose())),
            max_abs(&(&pm - pm.transpose())),
        ]
    }

    #[test]
    fn identity_is_its_own_pinv() {
        let id = DenseMatrix::identity(4, 4);
        assert_eq!(max_abs(&(pinv(&id, DEFAULT_PINV_TOL).unwrap() - &id)), 0.0);
        assert!(max_abs(&(pinv_symmetric(&id, DEFAULT_PINV_TOL).unwrap() - &id)) < 1e-15);
    }

    #[test]
    fn diagonal_with_null_direction() {
        let m = DenseMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.0]));
        let expected = DenseMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.0]));
        assert!(max_abs(&(pinv(&m, DEFAULT_PINV_TOL).unwrap() - &expected)) < 1e-15);
        assert!(max_abs(&(pinv_symmetric(&m, DEFAULT_PINV_TOL).unwrap() - &expected)) < 1e-15);
    }

    #[test]
    fn uniform_two_by_two_gamma_satisfies_penrose() {
        // four actions of a 2x2 scheme, marginal indicators, uniform logging
        let mut gamma = DenseMatrix::zeros(4, 4);
        for f0 in 0..2 {
            for f1 in 0..2 {
                let mut v = nalgebra::DVector::zeros(4);
                v[f0] = 1.0;
                v[2 + f1] = 1.0;
                gamma += &v * v.transpose() * 0.25;
            }
        }
        for p in [
            pinv(&gamma, DEFAULT_PINV_TOL).unwrap(),
            pinv_symmetric(&gamma, DEFAULT_PINV_TOL).unwrap(),
        ] {
            assert!(max_abs(&(&gamma * &p * &gamma - &gamma)) < 1e-10);
            assert!(penrose_residuals(&gamma, &p).iter().all(|&r| r < 1e-10));
        }
    }

    #[test]
    fn rectangular_input() {
        let m = DenseMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = pinv(&m, DEFAULT_PINV_TOL).unwrap();
        assert_eq!(p.shape(), (3, 2));
        assert!(penrose_residuals(&m, &p).iter().all(|&r| r < 1e-10));
    }

    #[test]
    fn rejects_non_finite_and_bad_tolerance() {
        let mut m = DenseMatrix::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(pinv(&m, DEFAULT_PINV_TOL).is_err());
        assert!(pinv_symmetric(&m, DEFAULT_PINV_TOL).is_err());
        let id = DenseMatrix::identity(2, 2);
        assert!(pinv(&id, 0.0).is_err());
        assert!(pinv(&id, 1.0).is_err());
        assert!(pinv_symmetric(&DenseMatrix::zeros(2, 3), DEFAULT_PINV_TOL).is_err());
    }

    #[test]
    fn zero_matrix_maps_to_zero() {
        let z = DenseMatrix::zeros(3, 2);
        assert_eq!(pinv(&z, DEFAULT_PINV_TOL).unwrap(), DenseMatrix::zeros(2, 3));
        let zs = DenseMatrix::zeros(3, 3);
        assert_eq!(pinv_symmetric(&zs, DEFAULT_PINV_TOL).unwrap(), zs);
    }

    /// Random rank-deficient PSD matrix `Q diag(lambda) Q^T` whose nonzero
    /// eigenvalues stay in [0.05, 2], so the pseudoinverse has bounded norm.
    fn psd_strategy() -> impl Strategy<Value = DenseMatrix> {
        (1usize..24).prop_flat_map(|n| {
            (
                proptest::collection::vec(-1.0f64..1.0, n * n),
                proptest::collection::vec(prop_oneof![Just(0.0), 0.05f64..2.0], n),
            )
                .prop_map(move |(data, lambda)| {
                    let q = DenseMatrix::from_vec(n, n, data).qr().q();
                    let d = DenseMatrix::from_diagonal(&nalgebra::DVector::from_vec(lambda));
                    &q * d * q.transpose()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn penrose_conditions_on_random_psd(m in psd_strategy()) {
            for p in [pinv(&m, DEFAULT_PINV_TOL).unwrap(), pinv_symmetric(&m, DEFAULT_PINV_TOL).unwrap()] {
                for r in penrose_residuals(&m, &p) {
                    prop_assert!(r < 1e-8, "residual {r}");
                }
            }
        }

        #[test]
        fn svd_and_eigen_paths_agree(m in psd_strategy()) {
            let a = pinv(&m, DEFAULT_PINV_TOL).unwrap();
            let b = pinv_symmetric(&m, DEFAULT_PINV_TOL).unwrap();
            prop_assert!(max_abs(&(a - b)) < 1e-8);
        }

        #[test]
        fn rectangular_penrose(rows in 1usize..10, cols in 1usize..10, data in proptest::collection::vec(-1.0f64..1.0, 100)) {
            // rank at most 2 so the input is usually deficient
            let l = DenseMatrix::from_vec(rows, 2, data[..rows * 2].to_vec());
            let r = DenseMatrix::from_vec(2, cols, data[20..20 + 2 * cols].to_vec());
            let m = l * r;
            let p = pinv(&m, DEFAULT_PINV_TOL).unwrap();
            let sv = m.singular_values();
            let smin = sv.iter().cloned().filter(|&s| s > 1e-6).fold(f64::INFINITY, f64::min);
            // residuals scale with the conditioning of the retained spectrum
            let bound = 1e-10 * (1.0 + 1.0 / (smin * smin));
            for r in penrose_residuals(&m, &p) {
                prop_assert!(r < bound, "residual {r}");
            }
        }

        #[test]
        fn double_pinv_recovers_full_rank_symmetric(n in 1usize..12, data in proptest::collection::vec(-1.0f64..1.0, 144)) {
            let b = DenseMatrix::from_vec(n, n, data[..n * n].to_vec());
            let m = &b * b.transpose() + DenseMatrix::identity(n, n);
            let back = pinv_symmetric(&pinv_symmetric(&m, DEFAULT_PINV_TOL).unwrap(), DEFAULT_PINV_TOL).unwrap();
            prop_assert!(max_abs(&(back - &m)) < 1e-6);
        }
    }
}
