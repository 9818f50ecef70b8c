use nalgebra::{DMatrix, DVector};

use super::Regularizer;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, SymEigen};

/// Kernel ridge regression in the dual: `½‖y − Kα‖² + (λ/2)αᵀKα`.
#[derive(Debug, Clone)]
pub struct KernelProblem {
    gram: DMatrix<f64>,
    y: DVector<f64>,
    eigen: SymEigen,
}

impl KernelProblem {
    /// Eigendecomposes the Gram matrix once; all scheme algebra later runs in
    /// that basis.
    pub fn new(gram: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        check_dim("kernel targets", gram.nrows(), y.len())?;
        if !linalg::is_symmetric(&gram, 1e-12) {
            return Err(Error::precondition(
                "gram_symmetric",
                "Gram matrix must be symmetric",
            ));
        }
        let eigen = linalg::jacobi_eigen(&gram)?;
        let scale = eigen.values.amax().max(1.0);
        if eigen.min() < -1e-12 * scale {
            return Err(Error::precondition(
                "gram_psd",
                format!("Gram matrix has eigenvalue {:e}", eigen.min()),
            ));
        }
        let mut eigen = eigen;
        // Round-off negatives are really zeros.
        eigen.values.apply(|v| *v = v.max(0.0));
        Ok(Self { gram, y, eigen })
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn eigen(&self) -> &SymEigen {
        &self.eigen
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Penalty strength of the RKHS regularizer; only plain l2 is meaningful.
    pub(crate) fn penalty(reg: &Regularizer) -> Result<f64> {
        match reg {
            Regularizer::None => Ok(0.0),
            Regularizer::L2(l) => Ok(*l),
            Regularizer::GeneralizedL2 { .. } => {
                Err(Error::Unsupported("generalized l2 on a kernel dual"))
            }
            Regularizer::L1(_) => Err(Error::NonSmooth),
        }
    }

    pub(crate) fn loss_grad(
        &self,
        reg: &Regularizer,
        alpha: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>)> {
        let lambda = Self::penalty(reg)?;
        let ka = &self.gram * alpha;
        let resid = &ka - &self.y;
        let loss = 0.5 * resid.norm_squared() + 0.5 * lambda * alpha.dot(&ka);
        let grad = &self.gram * (resid + alpha * lambda);
        Ok((loss, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_reconstructs_gram() {
        let k = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.0, 0.5, 1.0]);
        let p = KernelProblem::new(k.clone(), DVector::zeros(3)).unwrap();
        assert!((p.eigen().reconstruct() - &k).amax() <= 1e-10 * k.amax());
        assert!(p.eigen().values.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn rejects_indefinite_gram() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(KernelProblem::new(k, DVector::zeros(2)).is_err());
    }

    #[test]
    fn rank_deficient_gram_accepted() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = KernelProblem::new(k, DVector::zeros(2)).unwrap();
        assert_eq!(p.eigen().min(), 0.0f64.max(p.eigen().min()));
        assert!(p.eigen().min().abs() < 1e-15);
    }
}
