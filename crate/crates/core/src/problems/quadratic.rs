use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{flatten, Samples};
use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Least squares `L(W) = ½ tr(WᵀΣW) − tr(WᵀA) + const`, optionally backed by
/// the raw samples it was built from.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    sigma: DMatrix<f64>,
    a: DMatrix<f64>,
    samples: Option<Samples>,
    offset: f64,
}

impl QuadraticProblem {
    /// From second moments. `sigma` must be symmetric positive definite;
    /// `a` is `d x c`.
    pub fn from_moments(sigma: DMatrix<f64>, a: DMatrix<f64>) -> Result<Self> {
        check_dim("a rows vs sigma", sigma.nrows(), a.nrows())?;
        if !linalg::is_symmetric(&sigma, 1e-12) {
            return Err(Error::precondition(
                "sigma_symmetric",
                "sigma must be symmetric",
            ));
        }
        let (lo, _) = linalg::extreme_eigenvalues(&sigma);
        if lo <= 0.0 {
            return Err(Error::precondition(
                "sigma_positive_definite",
                format!("smallest eigenvalue of sigma is {lo:e}"),
            ));
        }
        Ok(Self {
            sigma,
            a,
            samples: None,
            offset: 0.0,
        })
    }

    /// `Σ = XᵀX/n`, `A = XᵀY/n`. The result may be only positive
    /// semi-definite (e.g. image pixels that are always zero).
    pub fn from_samples(samples: Samples) -> Result<Self> {
        let n = samples.len() as f64;
        let sigma = samples.x.tr_mul(&samples.x) / n;
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let a = samples.x.tr_mul(&samples.y) / n;
        let offset = 0.5 * samples.y.norm_squared() / n;
        Ok(Self {
            sigma,
            a,
            samples: Some(samples),
            offset,
        })
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn samples(&self) -> Option<&Samples> {
        self.samples.as_ref()
    }

    pub fn features(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.a.ncols()
    }

    /// Unregularized minimizer `Σ⁻¹A`, flattened; `None` when Σ is singular.
    pub fn minimizer(&self) -> Option<DVector<f64>> {
        let chol = self.sigma.clone().cholesky()?;
        Some(flatten(chol.solve(&self.a)))
    }

    pub(crate) fn loss_grad(&self, w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let sw = &self.sigma * w;
        let loss = 0.5 * w.dot(&sw) - w.dot(&self.a) + self.offset;
        (loss, sw - &self.a)
    }

    pub(crate) fn batch_grad(&self, w: &DMatrix<f64>, batch: &[usize]) -> Result<DMatrix<f64>> {
        let samples = self
            .samples
            .as_ref()
            .ok_or(Error::Unsupported("stochastic gradients without raw data"))?;
        let (xb, yb) = samples.batch(batch)?;
        let resid = &xb * w - yb;
        Ok(xb.tr_mul(&resid) / batch.len() as f64)
    }
}

/// Eigenbasis of a synthetic quadratic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rotation {
    /// Planar rotation by the given angle; two dimensions only.
    Angle(f64),
    /// Random orthogonal matrix drawn from the seed.
    Seeded(u64),
}

/// `Σ = U diag(s) Uᵀ` with `s` linearly spaced over `[eig_min, eig_max]` and
/// `a = Σ w_star`, so `w_star` is the unregularized minimizer.
pub fn make_synthetic_quadratic(
    d: usize,
    eig_min: f64,
    eig_max: f64,
    rotation: Rotation,
    w_star: &DVector<f64>,
) -> Result<QuadraticProblem> {
    if !(eig_min > 0.0 && eig_min <= eig_max && eig_max.is_finite()) {
        return Err(Error::precondition(
            "spectrum_ordered",
            format!("need 0 < eig_min <= eig_max, got ({eig_min}, {eig_max})"),
        ));
    }
    if d == 0 {
        return Err(Error::precondition(
            "dimension_positive",
            "d must be at least 1",
        ));
    }
    check_dim("w_star", d, w_star.len())?;
    let spectrum = DVector::from_fn(d, |i, _| {
        if d == 1 {
            eig_min
        } else {
            eig_min + (eig_max - eig_min) * i as f64 / (d - 1) as f64
        }
    });
    let u = match rotation {
        Rotation::Angle(theta) => {
            check_dim("planar rotation", 2, d)?;
            linalg::rotation2(theta)
        }
        Rotation::Seeded(seed) => {
            linalg::random_orthogonal(d, &mut ChaCha8Rng::seed_from_u64(seed))
        }
    };
    let sigma = &u * DMatrix::from_diagonal(&spectrum) * u.transpose();
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let a = &sigma * w_star;
    let a = DMatrix::from_column_slice(d, 1, a.as_slice());
    QuadraticProblem::from_moments(sigma, a)
}
