use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg;

/// A symmetric positive-definite matrix `Q` with its Cholesky factor cached,
/// used both as the preconditioner of PSGD and as the metric of the
/// generalized l2 penalty `½ wᵀQw`.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    q: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Preconditioner {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_symmetric(&q, 1e-12) {
            return Err(Error::precondition(
                "q_symmetric",
                "preconditioner must be symmetric",
            ));
        }
        let chol = Cholesky::new(q.clone())
            .ok_or_else(|| Error::Singular("preconditioner is not positive definite".into()))?;
        // Cholesky succeeds on matrices that are numerically singular; reject
        // those too since Q⁻¹ would amplify round-off without bound.
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
        if lo <= 1e-12 * hi.max(1.0) {
            return Err(Error::Singular(
                "preconditioner is numerically singular".into(),
            ));
        }
        Ok(Self { q, chol })
    }

    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d)).expect("identity is positive definite")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// `Q⁻¹ G`, column by column.
    pub fn solve(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(g)
    }

    /// Lower Cholesky factor `L` with `Q = L Lᵀ`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Spectral norm `‖Q‖₂`.
    pub fn spectral_norm(&self) -> f64 {
        linalg::extreme_eigenvalues(&self.q).1
    }

    /// Applies `Q` to each column of a `d x c` matrix.
    pub fn apply(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        &self.q * w
    }

    pub(crate) fn is_identity(&self) -> bool {
        self.q == DMatrix::identity(self.dim(), self.dim())
    }
}

impl PartialEq for Preconditioner {
    fn eq(&self, other: &Self) -> bool {
        self.q == other.q
    }
}

/// Explicit regularizer `λ R(w)` added to the loss.
#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer {
    None,
    /// `(λ/2)‖w‖²`. For kernel problems this is the RKHS penalty `(λ/2)αᵀKα`.
    L2(f64),
    /// `(λ/2) wᵀQw`.
    GeneralizedL2 {
        q: Arc<Preconditioner>,
        lambda: f64,
    },
    /// `λ‖w‖₁`. Non-smooth: rejected by every gradient consumer.
    L1(f64),
}

impl Regularizer {
    pub fn l2(lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Regularizer::L2(lambda))
    }

    pub fn generalized(q: Arc<Preconditioner>, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Regularizer::GeneralizedL2 { q, lambda })
    }

    pub fn l1(lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Regularizer::L1(lambda))
    }

    pub fn lambda(&self) -> f64 {
        match self {
            Regularizer::None => 0.0,
            Regularizer::L2(l) | Regularizer::L1(l) => *l,
            Regularizer::GeneralizedL2 { lambda, .. } => *lambda,
        }
    }

    pub fn metric(&self) -> Option<&Arc<Preconditioner>> {
        match self {
            Regularizer::GeneralizedL2 { q, .. } => Some(q),
            _ => None,
        }
    }

    /// Same kind of penalty with a different strength.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        match self {
            Regularizer::None | Regularizer::L2(_) => Regularizer::l2(lambda),
            Regularizer::GeneralizedL2 { q, .. } => Regularizer::generalized(q.clone(), lambda),
            Regularizer::L1(_) => Regularizer::l1(lambda),
        }
    }

    /// `λ R(W)` and `λ ∇R(W)` for a `d x c` parameter matrix. Kernel problems
    /// handle their own penalty and never reach this.
    pub(crate) fn value_grad(&self, w: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        match self {
            Regularizer::None => Ok((0.0, DMatrix::zeros(w.nrows(), w.ncols()))),
            Regularizer::L2(l) => Ok((0.5 * l * w.norm_squared(), w * *l)),
            Regularizer::GeneralizedL2 { q, lambda } => {
                crate::error::check_dim("generalized l2 metric", q.dim(), w.nrows())?;
                let qw = q.apply(w);
                Ok((0.5 * lambda * w.dot(&qw), qw * *lambda))
            }
            Regularizer::L1(_) => Err(Error::NonSmooth),
        }
    }

    pub fn value(&self, w: &DVector<f64>) -> f64 {
        match self {
            Regularizer::L1(l) => l * linalg::l1_norm(w),
            _ => 0.0,
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::precondition(
            "lambda_nonnegative",
            format!("lambda must be finite and >= 0, got {lambda}"),
        ))
    }
}
