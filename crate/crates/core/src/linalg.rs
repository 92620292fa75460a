//! Cholesky factorization with the jitter-escalation policy shared by every
//! Gaussian-process computation in the crate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// First jitter tried, relative to the mean diagonal.
pub const JITTER_START: f64 = 1e-8;
/// Largest jitter tried before giving up, relative to the mean diagonal.
pub const JITTER_MAX: f64 = 1e-2;

/// A lower-triangular factor together with the jitter that made it succeed.
#[derive(Debug, Clone)]
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    /// Absolute jitter added to the diagonal (0 when none was needed).
    pub jitter: f64,
}

impl Factor {
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ b` by forward substitution.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky factor has a nonzero diagonal")
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Factorizes `m`, escalating jitter ×10 from `JITTER_START` to `JITTER_MAX`
/// times the mean diagonal. With `try_exact`, the unjittered matrix is tried first.
pub fn factorize(m: &DMatrix<f64>, try_exact: bool, label: impl Fn() -> String) -> Result<Factor> {
    let n = m.nrows();
    if n == 0 {
        return Err(Error::domain("cannot factorize an empty matrix"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization { kernel: label(), condition: f64::INFINITY });
    }
    if try_exact {
        if let Some(chol) = m.clone().cholesky() {
            return Ok(Factor { chol, jitter: 0.0 });
        }
    }
    let mean_diag = (m.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * mean_diag;
        let mut mj = m.clone();
        for i in 0..n {
            mj[(i, i)] += jitter;
        }
        if let Some(chol) = mj.cholesky() {
            return Ok(Factor { chol, jitter });
        }
        rel *= 10.0;
    }
    Err(Error::Factorization { kernel: label(), condition: condition_estimate(m) })
}

/// Ratio of extreme eigenvalues of a symmetric matrix (infinite when not positive definite).
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let (min, max) = (eig.min(), eig.max());
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_when_possible() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = factorize(&m, true, || "test".into()).unwrap();
        assert_eq!(f.jitter, 0.0);
        let rec = f.l() * f.l().transpose();
        assert!((rec - m).abs().max() < 1e-14);
    }

    #[test]
    fn singular_matrix_gets_jitter() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let f = factorize(&m, true, || "ones".into()).unwrap();
        assert!(f.jitter > 0.0 && f.jitter <= JITTER_MAX);
    }

    #[test]
    fn indefinite_matrix_fails_with_label() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match factorize(&m, true, || "bad kernel".into()) {
            Err(Error::Factorization { kernel, condition }) => {
                assert_eq!(kernel, "bad kernel");
                assert!(condition.is_infinite());
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
