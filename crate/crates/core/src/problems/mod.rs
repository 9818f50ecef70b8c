//! Objectives, regularizers and convexity constants.
//!
//! Parameters are `d x c` matrices (one column per output) flattened
//! column-major into a single vector, so every path algorithm works on plain
//! vectors regardless of the number of outputs.

mod kernel;
mod logistic;
mod quadratic;
mod regularizer;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

pub use kernel::KernelProblem;
pub use logistic::LogisticProblem;
pub use quadratic::{make_synthetic_quadratic, QuadraticProblem, Rotation};
pub use regularizer::{Preconditioner, Regularizer};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Raw training data: `x` is `n x d`, `y` is `n x c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl Samples {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        check_dim("samples: rows of y", x.nrows(), y.nrows())?;
        if x.nrows() == 0 {
            return Err(Error::precondition("nonempty_data", "dataset has no rows"));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn features(&self) -> usize {
        self.x.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.y.ncols()
    }

    pub(crate) fn batch(&self, idx: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::precondition(
                "batch_in_range",
                format!("batch index {bad} outside [0, {})", self.len()),
            ));
        }
        if idx.is_empty() {
            return Err(Error::precondition("batch_nonempty", "empty mini-batch"));
        }
        Ok((self.x.select_rows(idx), self.y.select_rows(idx)))
    }
}

#[derive(Debug, Clone)]
pub enum Problem {
    Quadratic(QuadraticProblem),
    Logistic(LogisticProblem),
    Kernel(KernelProblem),
}

impl Problem {
    /// `(rows, columns)` of the parameter matrix.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Problem::Quadratic(q) => (q.features(), q.outputs()),
            Problem::Logistic(l) => (l.features(), l.classes()),
            Problem::Kernel(k) => (k.len(), 1),
        }
    }

    /// Length of the flattened parameter vector.
    pub fn dim(&self) -> usize {
        let (d, c) = self.shape();
        d * c
    }

    pub fn samples(&self) -> Option<&Samples> {
        match self {
            Problem::Quadratic(q) => q.samples(),
            Problem::Logistic(l) => Some(l.samples()),
            Problem::Kernel(_) => None,
        }
    }

    pub fn as_quadratic(&self) -> Option<&QuadraticProblem> {
        match self {
            Problem::Quadratic(q) => Some(q),
            _ => None,
        }
    }

    pub fn as_kernel(&self) -> Option<&KernelProblem> {
        match self {
            Problem::Kernel(k) => Some(k),
            _ => None,
        }
    }

    /// Norm of a known minimizer, used to scale the divergence guard.
    pub(crate) fn reference_scale(&self) -> f64 {
        match self {
            Problem::Quadratic(q) => q.minimizer().map(|w| w.norm()).unwrap_or(1.0),
            Problem::Kernel(k) => k.y().norm(),
            Problem::Logistic(_) => 1.0,
        }
    }

    /// Stable content hash of the defining data (first 16 hex digits of a
    /// SHA-256), recorded in every path so stored paths can be matched to
    /// the problem that produced them.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |tag: &[u8], m: &DMatrix<f64>| {
            h.update(tag);
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        };
        match self {
            Problem::Quadratic(q) => {
                feed(b"quadratic.sigma", q.sigma());
                feed(b"quadratic.a", q.a());
            }
            Problem::Logistic(l) => {
                feed(b"logistic.x", &l.samples().x);
                feed(b"logistic.y", &l.samples().y);
                feed(
                    b"logistic.ridge",
                    &DMatrix::from_element(1, 1, l.base_ridge()),
                );
            }
            Problem::Kernel(k) => {
                feed(b"kernel.k", k.gram());
                feed(
                    b"kernel.y",
                    &DMatrix::from_column_slice(k.len(), 1, k.y().as_slice()),
                );
            }
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub(crate) fn unflatten(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("parameter vector", self.dim(), w.len())?;
        let (d, c) = self.shape();
        Ok(DMatrix::from_column_slice(d, c, w.as_slice()))
    }
}

pub(crate) fn flatten(m: DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

impl From<QuadraticProblem> for Problem {
    fn from(p: QuadraticProblem) -> Self {
        Problem::Quadratic(p)
    }
}

impl From<LogisticProblem> for Problem {
    fn from(p: LogisticProblem) -> Self {
        Problem::Logistic(p)
    }
}

impl From<KernelProblem> for Problem {
    fn from(p: KernelProblem) -> Self {
        Problem::Kernel(p)
    }
}

/// Strong convexity `alpha` and smoothness `beta` of a loss.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvexityBounds {
    pub alpha: f64,
    pub beta: f64,
}

impl ConvexityBounds {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::precondition(
                "strong_convexity",
                format!("alpha must be > 0, got {alpha}"),
            ));
        }
        if !(beta >= alpha && beta.is_finite()) {
            return Err(Error::precondition(
                "alpha_le_beta",
                format!("need 0 < alpha <= beta, got alpha={alpha}, beta={beta}"),
            ));
        }
        Ok(Self { alpha, beta })
    }
}

/// Loss and gradient of `L(w) + λR(w)`.
pub fn eval_loss_grad(
    problem: &Problem,
    reg: &Regularizer,
    w: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    if matches!(reg, Regularizer::L1(_)) {
        return Err(Error::NonSmooth);
    }
    if let Problem::Kernel(k) = problem {
        check_dim("parameter vector", k.len(), w.len())?;
        return k.loss_grad(reg, w);
    }
    let wm = problem.unflatten(w)?;
    let (loss, grad) = match problem {
        Problem::Quadratic(q) => q.loss_grad(&wm),
        Problem::Logistic(l) => l.loss_grad(&wm),
        Problem::Kernel(_) => unreachable!(),
    };
    let (rv, rg) = reg.value_grad(&wm)?;
    Ok((loss + rv, flatten(grad + rg)))
}

/// Mini-batch gradient `b⁻¹ Σ_{i∈batch} ∇ℓ(xᵢ, yᵢ, w) + λ∇R(w)`. Indices may
/// repeat (sampling with replacement).
pub fn stochastic_grad(
    problem: &Problem,
    reg: &Regularizer,
    w: &DVector<f64>,
    batch: &[usize],
) -> Result<DVector<f64>> {
    if matches!(reg, Regularizer::L1(_)) {
        return Err(Error::NonSmooth);
    }
    let wm = problem.unflatten(w)?;
    let grad = match problem {
        Problem::Quadratic(q) => q.batch_grad(&wm, batch)?,
        Problem::Logistic(l) => l.batch_grad(&wm, batch)?,
        Problem::Kernel(_) => return Err(Error::Unsupported("per-sample gradients")),
    };
    let (_, rg) = reg.value_grad(&wm)?;
    Ok(flatten(grad + rg))
}

/// Strong convexity and smoothness of the loss `L`, measured in the metric
/// of the regularizer (identity unless it is a generalized l2 penalty).
pub fn convexity_bounds(problem: &Problem, reg: &Regularizer) -> Result<ConvexityBounds> {
    match problem {
        Problem::Quadratic(q) => {
            let (lo, hi) = match reg.metric() {
                None => linalg::extreme_eigenvalues(q.sigma()),
                Some(metric) => {
                    check_dim("generalized l2 metric", q.features(), metric.dim())?;
                    linalg::extreme_eigenvalues(&whiten(q.sigma(), metric))
                }
            };
            if lo <= 1e-12 * hi.abs().max(1.0) {
                return Err(Error::precondition(
                    "strong_convexity",
                    format!("smallest curvature {lo:e} is not positive; the loss is not strongly convex"),
                ));
            }
            ConvexityBounds::new(lo, hi)
        }
        Problem::Logistic(l) => {
            if reg.metric().is_some() {
                return Err(Error::Unsupported(
                    "generalized l2 curvature bounds of a logistic loss",
                ));
            }
            if l.base_ridge() <= 0.0 {
                return Err(Error::precondition(
                    "strong_convexity",
                    "logistic loss needs base_ridge > 0 to be strongly convex",
                ));
            }
            ConvexityBounds::new(l.base_ridge(), l.smoothness())
        }
        Problem::Kernel(_) => Err(Error::Unsupported("convexity bounds of the kernel dual")),
    }
}

/// Smoothness constant alone; defined even when the loss is only convex
/// (e.g. a singular data covariance).
pub fn smoothness(problem: &Problem, reg: &Regularizer) -> Result<f64> {
    match problem {
        Problem::Quadratic(q) => Ok(match reg.metric() {
            None => linalg::extreme_eigenvalues(q.sigma()).1,
            Some(metric) => linalg::extreme_eigenvalues(&whiten(q.sigma(), metric)).1,
        }),
        Problem::Logistic(l) => Ok(l.smoothness()),
        Problem::Kernel(k) => {
            let mu = k.eigen().max();
            Ok(mu * (mu + reg.lambda()))
        }
    }
}

/// `L⁻¹ Σ L⁻ᵀ` for `Q = L Lᵀ`; same spectrum as `Q^{-1/2} Σ Q^{-1/2}`.
fn whiten(sigma: &DMatrix<f64>, metric: &Arc<Preconditioner>) -> DMatrix<f64> {
    let l = metric.factor();
    let li = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(l.nrows(), l.nrows()))
        .expect("cholesky factor is nonsingular");
    let m = &li * sigma * li.transpose();
    (&m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn diag_problem() -> Problem {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 1.0]));
        let a = DMatrix::from_column_slice(2, 1, &[0.1, 1.0]);
        QuadraticProblem::from_moments(sigma, a).unwrap().into()
    }

    fn random_data(n: usize, d: usize, c: usize, seed: u64) -> Samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(n, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        Samples::new(x, y).unwrap()
    }

    fn logistic(n: usize, d: usize, c: usize, seed: u64) -> Problem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(0.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let y = crate::data_io::one_hot(&labels, c).unwrap();
        LogisticProblem::new(Samples::new(x, y).unwrap(), 0.5)
            .unwrap()
            .into()
    }

    #[test]
    fn gradient_vanishes_at_minimizer() {
        let p = diag_problem();
        let (_, g) =
            eval_loss_grad(&p, &Regularizer::None, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn l2_gradient_at_origin() {
        let p = diag_problem();
        let reg = Regularizer::l2(0.1).unwrap();
        let (_, g) = eval_loss_grad(&p, &reg, &DVector::zeros(2)).unwrap();
        assert!((g[0] + 0.1).abs() < 1e-15 && (g[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn l2_gradient_at_ridge_solution() {
        // (Σ + λI)⁻¹a by hand: 0.1/0.2 and 1/1.1
        let p = diag_problem();
        let reg = Regularizer::l2(0.1).unwrap();
        let w = DVector::from_vec(vec![0.5, 1.0 / 1.1]);
        let (_, g) = eval_loss_grad(&p, &reg, &w).unwrap();
        assert!(g.amax() < 1e-6);
        // the rounded value quoted for it
        let (_, g) = eval_loss_grad(&p, &reg, &DVector::from_vec(vec![0.5, 0.909091])).unwrap();
        assert!(g.amax() < 1e-6);
    }

    #[test]
    fn generalized_l2_gradient_is_q_w() {
        let p = diag_problem();
        let q = Arc::new(
            Preconditioner::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap(),
        );
        let reg = Regularizer::generalized(q.clone(), 0.3).unwrap();
        let w = DVector::from_vec(vec![0.7, -0.2]);
        let (_, g0) = eval_loss_grad(&p, &Regularizer::None, &w).unwrap();
        let (_, g) = eval_loss_grad(&p, &reg, &w).unwrap();
        let expected = g0 + q.matrix() * &w * 0.3;
        assert!((g - expected).amax() < 1e-15);
    }

    #[test]
    fn l1_and_dimension_errors() {
        let p = diag_problem();
        assert!(matches!(
            eval_loss_grad(&p, &Regularizer::L1(0.1), &DVector::zeros(2)),
            Err(Error::NonSmooth)
        ));
        assert!(matches!(
            eval_loss_grad(&p, &Regularizer::None, &DVector::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn full_batch_equals_full_gradient() {
        let s = random_data(6, 3, 2, 1);
        let p: Problem = QuadraticProblem::from_samples(s).unwrap().into();
        let w = DVector::from_fn(6, |i, _| i as f64 * 0.1 - 0.2);
        let reg = Regularizer::l2(0.2).unwrap();
        let all: Vec<usize> = (0..6).collect();
        let gs = stochastic_grad(&p, &reg, &w, &all).unwrap();
        let (_, g) = eval_loss_grad(&p, &reg, &w).unwrap();
        assert!((gs - g).amax() < 1e-13);
    }

    #[test]
    fn identical_samples_have_no_noise() {
        let x = DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 0.3, -1.0]);
        let y = DMatrix::from_row_slice(2, 1, &[2.0, 2.0]);
        let p: Problem = QuadraticProblem::from_samples(Samples::new(x, y).unwrap())
            .unwrap()
            .into();
        let w = DVector::from_vec(vec![0.4, 0.1]);
        let (_, g) = eval_loss_grad(&p, &Regularizer::None, &w).unwrap();
        for b in [vec![0], vec![1], vec![0, 1], vec![1, 1]] {
            let gs = stochastic_grad(&p, &Regularizer::None, &w, &b).unwrap();
            assert!((gs - &g).amax() < 1e-15);
        }
    }

    #[test]
    fn single_sample_gradients_average_to_full() {
        let s = random_data(4, 2, 1, 3);
        let p: Problem = QuadraticProblem::from_samples(s).unwrap().into();
        let w = DVector::from_vec(vec![0.3, -0.8]);
        let mean = (0..4)
            .map(|i| stochastic_grad(&p, &Regularizer::None, &w, &[i]).unwrap())
            .fold(DVector::zeros(2), |acc, g| acc + g)
            / 4.0;
        let (_, g) = eval_loss_grad(&p, &Regularizer::None, &w).unwrap();
        assert!((mean - g).amax() < 1e-12);
    }

    #[test]
    fn kernel_problems_have_no_sample_gradients() {
        let k =
            KernelProblem::new(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let p: Problem = k.into();
        assert!(matches!(
            stochastic_grad(&p, &Regularizer::None, &DVector::zeros(2), &[0]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn exhaustive_batches_are_unbiased() {
        // every ordered pair of indices, i.e. all size-2 batches drawn with replacement
        for (seed, problem) in [
            (
                5u64,
                QuadraticProblem::from_samples(random_data(5, 3, 2, 5))
                    .unwrap()
                    .into(),
            ),
            (6u64, logistic(5, 3, 3, 6)),
        ] {
            let problem: Problem = problem;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = DVector::from_fn(problem.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let reg = Regularizer::l2(0.3).unwrap();
            let n = problem.samples().unwrap().len();
            let mut mean = DVector::zeros(problem.dim());
            for i in 0..n {
                for j in 0..n {
                    mean += stochastic_grad(&problem, &reg, &w, &[i, j]).unwrap();
                }
            }
            mean /= (n * n) as f64;
            let (_, g) = eval_loss_grad(&problem, &reg, &w).unwrap();
            assert!((mean - g).amax() < 1e-12);
        }
    }

    #[test]
    fn bounds_of_diagonal_quadratic() {
        let b = convexity_bounds(&diag_problem(), &Regularizer::l2(0.1).unwrap()).unwrap();
        assert!((b.alpha - 0.1).abs() < 1e-14 && (b.beta - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bounds_with_q_equal_sigma_are_unit() {
        let p = make_synthetic_quadratic(
            4,
            0.2,
            3.0,
            Rotation::Seeded(11),
            &DVector::from_element(4, 1.0),
        )
        .unwrap();
        let q = Arc::new(Preconditioner::new(p.sigma().clone()).unwrap());
        let reg = Regularizer::generalized(q, 0.5).unwrap();
        let b = convexity_bounds(&p.into(), &reg).unwrap();
        assert!((b.alpha - 1.0).abs() < 1e-10 && (b.beta - 1.0).abs() < 1e-10);
    }

    #[test]
    fn logistic_bounds_use_base_ridge() {
        let p = logistic(20, 3, 2, 2);
        let b = convexity_bounds(&p, &Regularizer::None).unwrap();
        assert_eq!(b.alpha, 0.5);
        let Problem::Logistic(l) = &p else {
            unreachable!()
        };
        let s = &l.samples().x;
        let top = linalg::extreme_eigenvalues(&(s.tr_mul(s) / 20.0)).1;
        assert!((b.beta - (0.5 + top / 2.0)).abs() < 1e-12);

        let flat = LogisticProblem::new(l.samples().clone(), 0.0).unwrap();
        assert!(matches!(
            convexity_bounds(&flat.into(), &Regularizer::None),
            Err(Error::Precondition {
                name: "strong_convexity",
                ..
            })
        ));
    }

    #[test]
    fn singular_sigma_is_not_strongly_convex() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, -1.0, 0.0]);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let p: Problem = QuadraticProblem::from_samples(Samples::new(x, y).unwrap())
            .unwrap()
            .into();
        assert!(convexity_bounds(&p, &Regularizer::None).is_err());
        assert!((smoothness(&p, &Regularizer::None).unwrap() - 2.0).abs() < 1e-12);
    }

    fn finite_difference_check(problem: &Problem, reg: &Regularizer, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = problem.dim();
        let w = DVector::from_fn(dim, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
        let (_, g) = eval_loss_grad(problem, reg, &w).unwrap();
        let h = 1e-5;
        for _ in 0..20 {
            let mut u = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            u /= u.norm();
            let (lp, _) = eval_loss_grad(problem, reg, &(&w + &u * h)).unwrap();
            let (lm, _) = eval_loss_grad(problem, reg, &(&w - &u * h)).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g.dot(&u)).abs() <= 1e-5, "fd {fd} vs {}", g.dot(&u));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn gradients_match_finite_differences(seed in 0u64..10_000, lambda in 0.0f64..2.0) {
            let quad: Problem = QuadraticProblem::from_samples(random_data(7, 3, 2, seed)).unwrap().into();
            finite_difference_check(&quad, &Regularizer::None, seed);
            finite_difference_check(&quad, &Regularizer::l2(lambda).unwrap(), seed + 1);
            let q = Arc::new(Preconditioner::new(DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5])).unwrap());
            finite_difference_check(&quad, &Regularizer::generalized(q, lambda).unwrap(), seed + 2);
            finite_difference_check(&logistic(9, 3, 3, seed), &Regularizer::l2(lambda).unwrap(), seed + 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = DMatrix::from_fn(4, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let kern: Problem = KernelProblem::new(&f * f.transpose() / 6.0, DVector::from_vec(vec![1.0, -1.0, 0.5, 0.0])).unwrap().into();
            finite_difference_check(&kern, &Regularizer::l2(lambda).unwrap(), seed + 4);
        }

        #[test]
        fn curvature_bounds_sandwich_gradient_differences(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let quad: Problem = make_synthetic_quadratic(3, 0.3, 2.0, Rotation::Seeded(seed), &DVector::from_element(3, 1.0)).unwrap().into();
            let logi = logistic(12, 3, 3, seed);
            for (p, slack) in [(&quad, 1e-12), (&logi, 1e-8)] {
                let b = convexity_bounds(p, &Regularizer::None).unwrap();
                for _ in 0..100 {
                    let w = DVector::from_fn(p.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
                    let w2 = DVector::from_fn(p.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
                    let (_, g) = eval_loss_grad(p, &Regularizer::None, &w).unwrap();
                    let (_, g2) = eval_loss_grad(p, &Regularizer::None, &w2).unwrap();
                    let d = &w - &w2;
                    let inner = (g - g2).dot(&d);
                    let sq = d.norm_squared();
                    prop_assert!(b.alpha * sq <= inner + slack * sq.max(1.0));
                    prop_assert!(inner <= b.beta * sq + slack * sq.max(1.0));
                }
            }
        }
    }
}
