use nalgebra::DMatrix;

use super::Samples;
use crate::error::{Error, Result};
use crate::linalg;

/// Multi-class softmax cross-entropy plus a base ridge `(λ₀/2)‖W‖²`.
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    samples: Samples,
    base_ridge: f64,
    smoothness: f64,
}

impl LogisticProblem {
    pub fn new(samples: Samples, base_ridge: f64) -> Result<Self> {
        if !(base_ridge >= 0.0 && base_ridge.is_finite()) {
            return Err(Error::precondition(
                "base_ridge_nonnegative",
                format!("base ridge must be >= 0, got {base_ridge}"),
            ));
        }
        for (i, row) in samples.y.row_iter().enumerate() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::precondition(
                    "labels_one_hot",
                    format!("row {i} of the label matrix is not one-hot"),
                ));
            }
        }
        let n = samples.len() as f64;
        let top = linalg::extreme_eigenvalues(&(samples.x.tr_mul(&samples.x) / n)).1;
        // The softmax Hessian diag(s) − ssᵀ has spectral norm at most 1/2.
        let smoothness = base_ridge + top.max(0.0) / 2.0;
        Ok(Self {
            samples,
            base_ridge,
            smoothness,
        })
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn base_ridge(&self) -> f64 {
        self.base_ridge
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn features(&self) -> usize {
        self.samples.features()
    }

    pub fn classes(&self) -> usize {
        self.samples.outputs()
    }

    pub(crate) fn loss_grad(&self, w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let (loss, g) = cross_entropy(&self.samples.x, &self.samples.y, w);
        (
            loss + 0.5 * self.base_ridge * w.norm_squared(),
            g + w * self.base_ridge,
        )
    }

    pub(crate) fn batch_grad(&self, w: &DMatrix<f64>, batch: &[usize]) -> Result<DMatrix<f64>> {
        let (xb, yb) = self.samples.batch(batch)?;
        let (_, g) = cross_entropy(&xb, &yb, w);
        Ok(g + w * self.base_ridge)
    }
}

/// Mean softmax cross-entropy of `x w` against `y` and its gradient.
fn cross_entropy(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mut z = x * w;
    let mut loss = 0.0;
    for mut row in z.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        loss += m + s.ln();
        row /= s;
    }
    loss -= (x * w).dot(y);
    (loss / n, x.tr_mul(&(z - y)) / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_log_c() {
        let x = DMatrix::from_row_slice(2, 2, &[0.2, 0.9, 1.0, 0.0]);
        let y = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let p = LogisticProblem::new(Samples::new(x, y).unwrap(), 1.0).unwrap();
        let (loss, g) = p.loss_grad(&DMatrix::zeros(2, 3));
        assert!((loss - 3f64.ln()).abs() < 1e-15);
        // gradient: Xᵀ(1/3 − Y)/n
        assert!((g[(0, 0)] - (0.2 * (1.0 / 3.0 - 1.0) + 1.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_one_hot() {
        let x = DMatrix::from_element(1, 2, 0.5);
        let y = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert!(LogisticProblem::new(Samples::new(x, y).unwrap(), 1.0).is_err());
    }

    #[test]
    fn large_scores_stay_finite() {
        let x = DMatrix::from_row_slice(1, 1, &[1.0]);
        let y = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let p = LogisticProblem::new(Samples::new(x, y).unwrap(), 0.0).unwrap();
        let (loss, g) = p.loss_grad(&DMatrix::from_row_slice(1, 2, &[0.0, 800.0]));
        assert!((loss - 800.0).abs() < 1e-9);
        assert!(g.iter().all(|v| v.is_finite()));
    }
}
