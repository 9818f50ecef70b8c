//! Closed forms, reference recurrences and checkers used to validate the
//! averaging schemes independently of the optimizers.

// `!(x > 0.0)` guards reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::averaging::{self, WeightScheme, Weights};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::optimizers::{coupled, momentum, LrSchedule, PathRecord};
use crate::problems::{
    self, ConvexityBounds, KernelProblem, Preconditioner, Problem, QuadraticProblem, Regularizer,
};

/// Outcome of one numerical check: passes iff `residual <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub params: serde_json::Value,
    pub residual: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckReport {
    pub fn new(
        check: impl Into<String>,
        params: serde_json::Value,
        residual: f64,
        threshold: f64,
    ) -> Self {
        Self {
            check: check.into(),
            params,
            residual,
            threshold,
            pass: residual <= threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeKind {
    L2,
    GeneralizedL2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub w_hat: DVector<f64>,
    pub lambda: f64,
    pub kind: RidgeKind,
}

/// Solves `(Σ + λI)W = A`, or `(Σ + λQ)W = A` for the generalized penalty.
/// `Regularizer::None` gives the unregularized minimizer.
pub fn ridge_solution(problem: &QuadraticProblem, reg: &Regularizer) -> Result<RidgeSolution> {
    let d = problem.features();
    let (m, kind) = match reg {
        Regularizer::None => (problem.sigma().clone(), RidgeKind::L2),
        Regularizer::L2(l) => (
            problem.sigma() + DMatrix::identity(d, d) * *l,
            RidgeKind::L2,
        ),
        Regularizer::GeneralizedL2 { q, lambda } => {
            check_dim("generalized l2 metric", d, q.dim())?;
            (
                problem.sigma() + q.matrix() * *lambda,
                RidgeKind::GeneralizedL2,
            )
        }
        Regularizer::L1(_) => return Err(Error::NonSmooth),
    };
    let sol = match m.clone().cholesky() {
        Some(ch) => ch.solve(problem.a()),
        None => m
            .clone()
            .lu()
            .solve(problem.a())
            .ok_or_else(|| Error::Singular("ridge system is singular".into()))?,
    };
    let resid = (&m * &sol - problem.a()).amax();
    if !resid.is_finite() || resid > 1e-8 * (1.0 + problem.a().amax()) {
        return Err(Error::Singular(format!(
            "ridge system is ill-conditioned (residual {resid:e})"
        )));
    }
    Ok(RidgeSolution {
        w_hat: problems::flatten(sol),
        lambda: reg.lambda(),
        kind,
    })
}

/// `(K + λ̂I)⁻¹y`, solved in the eigenbasis of `K`.
pub fn kernel_solution(kernel: &KernelProblem, lambda_hat: f64) -> Result<DVector<f64>> {
    if !(lambda_hat >= 0.0) {
        return Err(Error::precondition(
            "lambda_hat_nonnegative",
            format!("lambda_hat must be >= 0, got {lambda_hat}"),
        ));
    }
    let eig = kernel.eigen();
    let ty = eig.to_eigenbasis(kernel.y());
    let scale = eig.max().max(1.0);
    let mut c = DVector::zeros(ty.len());
    for j in 0..ty.len() {
        let denom = eig.values[j] + lambda_hat;
        if denom <= 1e-14 * scale {
            return Err(Error::Singular("K + lambda_hat I is singular".into()));
        }
        c[j] = ty[j] / denom;
    }
    Ok(eig.from_eigenbasis(&c))
}

/// Orthogonal projection onto the range of `K` (eigenvalues above round-off).
pub fn project_range(kernel: &KernelProblem, v: &DVector<f64>) -> DVector<f64> {
    let eig = kernel.eigen();
    let tol = 1e-10 * eig.max().max(1.0);
    let mut z = eig.to_eigenbasis(v);
    for (zj, &mu) in z.iter_mut().zip(eig.values.iter()) {
        if mu <= tol {
            *zj = 0.0;
        }
    }
    eig.from_eigenbasis(&z)
}

/// Which noise-free recurrence to follow.
#[derive(Debug, Clone)]
pub enum ExpectationMethod {
    Gd,
    Pgd(std::sync::Arc<Preconditioner>),
    Ngd { alpha: f64 },
}

/// The expected path of SGD/PSGD/NSGD on a quadratic, obtained by running
/// the noise-free recurrence coordinate-wise in the (whitened) eigenbasis of
/// `Σ`. Independent of the optimizer code and used to cross-check it.
pub fn expectation_path(
    problem: &QuadraticProblem,
    reg: &Regularizer,
    schedule: &LrSchedule,
    steps: usize,
    method: &ExpectationMethod,
) -> Result<PathRecord> {
    if matches!(reg, Regularizer::L1(_)) {
        return Err(Error::NonSmooth);
    }
    let (d, c) = (problem.features(), problem.outputs());
    let lambda = reg.lambda();
    // coordinates u = T⁻¹ w in which the recurrence decouples
    let (spectrum, to_w, a_t) = match method {
        ExpectationMethod::Gd | ExpectationMethod::Ngd { .. } => {
            if reg.metric().is_some() {
                return Err(Error::Unsupported(
                    "generalized l2 without a preconditioner",
                ));
            }
            let eig = linalg::sym_eigen(problem.sigma());
            let a_t = eig.vectors.tr_mul(problem.a());
            (eig.values, eig.vectors, a_t)
        }
        ExpectationMethod::Pgd(q) => {
            if let Some(metric) = reg.metric() {
                if metric.matrix() != q.matrix() {
                    return Err(Error::precondition(
                        "penalty_metric_matches_q",
                        "metric differs from Q",
                    ));
                }
            } else if lambda > 0.0 {
                return Err(Error::precondition(
                    "penalty_metric_matches_q",
                    "plain l2 with a preconditioner",
                ));
            }
            let l = q.factor();
            let li = l
                .clone()
                .solve_lower_triangular(&DMatrix::identity(d, d))
                .expect("cholesky factor");
            let m = &li * problem.sigma() * li.transpose();
            let eig = linalg::sym_eigen(&((&m + m.transpose()) * 0.5));
            // w = L⁻ᵀ V u
            let to_w = li.transpose() * &eig.vectors;
            let a_t = eig.vectors.tr_mul(&(&li * problem.a()));
            (eig.values, to_w, a_t)
        }
    };
    let rate = |k: usize| coupled(schedule.eta(k), lambda);
    let mut coords = vec![DMatrix::<f64>::zeros(d, c)];
    match method {
        ExpectationMethod::Gd | ExpectationMethod::Pgd(_) => {
            schedule.require(steps)?;
            for k in 0..steps {
                let prev = &coords[k];
                let r = rate(k);
                let next = DMatrix::from_fn(d, c, |j, col| {
                    prev[(j, col)] - r * ((spectrum[j] + lambda) * prev[(j, col)] - a_t[(j, col)])
                });
                coords.push(next);
            }
        }
        ExpectationMethod::Ngd { alpha } => {
            let eta = schedule.constant_eta().ok_or_else(|| {
                Error::precondition("constant_rate", "nsgd requires a constant learning rate")
            })?;
            let r = coupled(eta, lambda);
            let tau = momentum(r, alpha + lambda)?;
            if steps >= 1 {
                coords.push(DMatrix::zeros(d, c));
            }
            for k in 1..steps {
                let (w, wp) = (&coords[k], &coords[k - 1]);
                let next = DMatrix::from_fn(d, c, |j, col| {
                    let v = w[(j, col)] + tau * (w[(j, col)] - wp[(j, col)]);
                    v - r * ((spectrum[j] + lambda) * v - a_t[(j, col)])
                });
                coords.push(next);
            }
        }
    }
    let tag = match method {
        ExpectationMethod::Gd => "expectation-gd",
        ExpectationMethod::Pgd(_) => "expectation-pgd",
        ExpectationMethod::Ngd { .. } => "expectation-ngd",
    };
    Ok(PathRecord {
        optimizer: tag.into(),
        seed: None,
        fingerprint: Problem::Quadratic(problem.clone()).fingerprint(),
        schedule: schedule.clone(),
        lambda,
        iterates: coords
            .into_iter()
            .map(|u| problems::flatten(&to_w * u))
            .collect(),
    })
}

/// Closed-form Nesterov increments `z_k = w_{k+1} − w_k` (with `w_0 = w_1 = 0`
/// so that `z_0 = 0`, `z_1 = ηa`) per eigendirection:
/// `z_k = (ηa / sin θ) (−B)^{(k−1)/2} sin(θk)`, `cos θ = √((1−ηΣ)/(1−ηα))`.
/// With `lambda = Some(λ)` the regularized run is described instead (rate
/// `γ`, curvatures `α+λ` and `Σ+λ`).
pub fn nsgd_expectation_increment(
    sigma_eigs: &[f64],
    a_eigs: &[f64],
    eta: f64,
    alpha: f64,
    lambda: Option<f64>,
    k: usize,
) -> Result<Vec<f64>> {
    if sigma_eigs.len() != a_eigs.len() {
        return Err(Error::DimensionMismatch {
            context: "eigen coefficients",
            expected: sigma_eigs.len(),
            got: a_eigs.len(),
        });
    }
    let lam = lambda.unwrap_or(0.0);
    let r = coupled(eta, lam);
    let al = alpha + lam;
    let tau = momentum(r, al)?;
    sigma_eigs
        .iter()
        .zip(a_eigs)
        .map(|(&s, &a)| {
            let s = s + lam;
            if s * r >= 1.0 {
                return Err(Error::precondition(
                    "eta_below_inverse_beta",
                    format!("rate {r} times curvature {s} is not below 1"),
                ));
            }
            if s <= al {
                return Err(Error::precondition(
                    "alpha_below_spectrum",
                    format!("alpha {al} is not strictly below eigenvalue {s}"),
                ));
            }
            if k == 0 {
                return Ok(0.0);
            }
            let sin = (r * (s - al) / (1.0 - r * al)).sqrt();
            let cos = ((1.0 - r * s) / (1.0 - r * al)).sqrt();
            let theta = sin.atan2(cos);
            let neg_b = tau * (1.0 - r * s);
            Ok(r * a / sin * neg_b.powf((k as f64 - 1.0) / 2.0) * (theta * k as f64).sin())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DeviationKind {
    Sgd,
    /// `q_norm` is `‖Q‖₂`.
    Psgd {
        q_norm: f64,
    },
    /// `lambda_min` is the smallest eigenvalue of `Σ`.
    Nsgd {
        eta: f64,
        lambda_min: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationBound {
    pub epsilon: f64,
    pub kind: DeviationKind,
    pub sigma: f64,
    pub delta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Chebyshev radius `ε` such that `‖P_k w̃_k − P_k E[w̃_k]‖ ≤ ε` holds with
/// probability at least `1 − δ` under gradient noise of variance `σ²`.
#[allow(clippy::too_many_arguments)]
pub fn variance_epsilon(
    kind: DeviationKind,
    sigma: f64,
    delta: f64,
    gamma: f64,
    lambda: f64,
    alpha: f64,
    beta: f64,
) -> Result<DeviationBound> {
    if !(sigma >= 0.0) {
        return Err(Error::precondition(
            "sigma_nonnegative",
            format!("sigma = {sigma}"),
        ));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::precondition(
            "delta_in_unit_interval",
            format!("delta = {delta}"),
        ));
    }
    for (name, v) in [
        ("gamma_positive", gamma),
        ("lambda_positive", lambda),
        ("alpha_positive", alpha),
        ("beta_positive", beta),
    ] {
        if !(v > 0.0) {
            return Err(Error::precondition(name, format!("got {v}")));
        }
    }
    let sgd = || {
        sigma / (gamma * (lambda + alpha) * (lambda + beta).powi(2))
            * (lambda / (delta * gamma * (2.0 - lambda * gamma))).sqrt()
    };
    let epsilon = match kind {
        DeviationKind::Sgd => sgd(),
        DeviationKind::Psgd { q_norm } => {
            if !(q_norm > 0.0) {
                return Err(Error::precondition(
                    "q_norm_positive",
                    format!("got {q_norm}"),
                ));
            }
            sgd() * q_norm
        }
        DeviationKind::Nsgd { eta, lambda_min } => {
            if lambda_min <= alpha {
                return Err(Error::precondition(
                    "lambda_min_above_alpha",
                    format!("smallest eigenvalue {lambda_min} must exceed alpha {alpha}"),
                ));
            }
            let sa = (eta * alpha).sqrt();
            let sg = (gamma * (alpha + lambda)).sqrt();
            let num = sigma * sigma * gamma * (1.0 - eta * alpha) * (sg - sa);
            let den = delta * eta * (lambda_min - alpha) * (alpha + lambda) * (2.0 - sa - sg);
            if !(num >= 0.0 && den > 0.0) {
                return Err(Error::precondition(
                    "nsgd_ratio_in_unit_interval",
                    "the deviation bound needs gamma(alpha+lambda) > eta alpha",
                ));
            }
            (num / den).sqrt()
        }
    };
    Ok(DeviationBound {
        epsilon,
        kind,
        sigma,
        delta,
        gamma,
        lambda,
        alpha,
        beta,
    })
}

/// `λ1 = 1/γ − 1/η + β − α` and `λ2 = 1/γ − 1/η + α − β`, after checking
/// `1/(2β−α) < η < 1/β` and `0 < γ < η/(η(β−α)+1)`.
pub fn lambda_pair(eta: f64, gamma: f64, bounds: &ConvexityBounds) -> Result<(f64, f64)> {
    let (a, b) = (bounds.alpha, bounds.beta);
    // α = β leaves an empty open window; the quadratic case only needs η < 1/β
    if a < b && eta <= 1.0 / (2.0 * b - a) {
        return Err(Error::precondition(
            "eta_above_lower_limit",
            format!(
                "need eta > 1/(2 beta - alpha) = {}, got {eta}",
                1.0 / (2.0 * b - a)
            ),
        ));
    }
    if eta >= 1.0 / b {
        return Err(Error::precondition(
            "eta_below_inverse_beta",
            format!("need eta < 1/beta = {}, got {eta}", 1.0 / b),
        ));
    }
    if gamma <= 0.0 {
        return Err(Error::precondition(
            "gamma_positive",
            format!("need gamma > 0, got {gamma}"),
        ));
    }
    let limit = eta / (eta * (b - a) + 1.0);
    if gamma >= limit {
        return Err(Error::precondition(
            "gamma_below_upper_limit",
            format!("need gamma < eta/(eta(beta-alpha)+1) = {limit}, got {gamma}"),
        ));
    }
    let base = 1.0 / gamma - 1.0 / eta;
    Ok((base + b - a, base + a - b))
}

/// Sign of a coordinate of the minimizer, deciding which bounding sequence
/// is the upper one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Positive,
    Negative,
    /// Exactly zero: excluded from the sandwich.
    Zero,
}

/// Scalar comparison sequences for the general strongly convex case. Each
/// entry holds one vector per step, coordinate-wise:
/// `u` follows curvature `α` at rate `η`, `v` curvature `β`;
/// `u_hat` follows `α+λ1` at rate `γ`, `v_hat` follows `β+λ2` at rate `γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingSequences {
    pub b: DVector<f64>,
    pub orientation: Vec<Orientation>,
    pub u: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub u_hat: Vec<DVector<f64>>,
    pub v_hat: Vec<DVector<f64>>,
    /// Center and half-width of the box spanned by the two regularized
    /// minimizers.
    pub m: DVector<f64>,
    pub d: DVector<f64>,
    pub lambdas: (f64, f64),
}

impl BoundingSequences {
    pub fn excluded(&self) -> Vec<usize> {
        self.orientation
            .iter()
            .enumerate()
            .filter(|(_, o)| **o == Orientation::Zero)
            .map(|(i, _)| i)
            .collect()
    }
}

fn scalar_recurrence(
    b: &DVector<f64>,
    rate: f64,
    curvature: f64,
    steps: usize,
) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = DVector::zeros(b.len());
    out.push(x.clone());
    for _ in 0..steps {
        x = &x - (&x * curvature - b) * rate;
        out.push(x.clone());
    }
    out
}

/// Minimizer of `L + λR` by gradient descent with step `1/(β+λ)`.
pub fn minimizer(
    problem: &Problem,
    reg: &Regularizer,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let beta = problems::smoothness(problem, reg)?
        + reg.lambda() * reg.metric().map_or(1.0, |q| q.spectral_norm());
    let step = 1.0 / beta;
    let mut w = DVector::zeros(problem.dim());
    for _ in 0..max_iter {
        let (_, g) = problems::eval_loss_grad(problem, reg, &w)?;
        if g.norm() <= tol {
            return Ok(w);
        }
        w -= g * step;
    }
    Err(Error::NoConvergence(max_iter))
}

/// Builds the comparison sequences and the limit box. Orientation follows
/// the sign of the unregularized minimizer per coordinate.
pub fn bounding_sequences(
    problem: &Problem,
    bounds: &ConvexityBounds,
    eta: f64,
    gamma: f64,
    lambda1: f64,
    lambda2: f64,
    steps: usize,
) -> Result<BoundingSequences> {
    let dim = problem.dim();
    let (_, g0) = problems::eval_loss_grad(problem, &Regularizer::None, &DVector::zeros(dim))?;
    let b = -g0;
    let w_star = minimizer(problem, &Regularizer::None, 1e-13, 1_000_000)?;
    let orientation = w_star
        .iter()
        .map(|&x| {
            if x > 0.0 {
                Orientation::Positive
            } else if x < 0.0 {
                Orientation::Negative
            } else {
                Orientation::Zero
            }
        })
        .collect();
    let w1 = minimizer(problem, &Regularizer::l2(lambda1)?, 1e-13, 1_000_000)?;
    let w2 = minimizer(problem, &Regularizer::l2(lambda2)?, 1e-13, 1_000_000)?;
    Ok(BoundingSequences {
        u: scalar_recurrence(&b, eta, bounds.alpha, steps),
        v: scalar_recurrence(&b, eta, bounds.beta, steps),
        u_hat: scalar_recurrence(&b, gamma, bounds.alpha + lambda1, steps),
        v_hat: scalar_recurrence(&b, gamma, bounds.beta + lambda2, steps),
        m: (&w2 + &w1) / 2.0,
        d: (&w2 - &w1) / 2.0,
        b,
        orientation,
        lambdas: (lambda1, lambda2),
    })
}

/// Worst violation of the coordinate-wise sandwich
/// `ŵ_{k,λ1} + (1−P_k)(ṽ_k − v_k) ≤ w̃_k ≤ ŵ_{k,λ2} + (1−P_k)(ũ_k − u_k)`
/// (bounds swapped on negatively oriented coordinates).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    /// Most negative slack over all steps and coordinates (0 if none).
    pub worst_slack: f64,
    pub worst_k: usize,
    pub worst_coord: usize,
}

pub fn sandwich_check(
    averaged: &[DVector<f64>],
    reg_lambda1: &[DVector<f64>],
    reg_lambda2: &[DVector<f64>],
    bounding: &BoundingSequences,
    scheme: &WeightScheme,
) -> Result<SandwichReport> {
    let n = averaged.len();
    check_dim("lambda1 path", n, reg_lambda1.len())?;
    check_dim("lambda2 path", n, reg_lambda2.len())?;
    check_dim("bounding sequences", n, bounding.u.len())?;
    let u_t = averaging::averaged_path(scheme, &bounding.u)?;
    let v_t = averaging::averaged_path(scheme, &bounding.v)?;
    let mut report = SandwichReport {
        worst_slack: 0.0,
        worst_k: 0,
        worst_coord: 0,
    };
    for k in 0..n {
        let tail = 1.0 - scheme.cumulative(k);
        let b1 = &reg_lambda1[k] + (&v_t[k] - &bounding.v[k]) * tail;
        let b2 = &reg_lambda2[k] + (&u_t[k] - &bounding.u[k]) * tail;
        for (j, o) in bounding.orientation.iter().enumerate() {
            let (lo, hi) = match o {
                Orientation::Positive => (b1[j], b2[j]),
                Orientation::Negative => (b2[j], b1[j]),
                Orientation::Zero => continue,
            };
            let slack = (averaged[k][j] - lo).min(hi - averaged[k][j]);
            if slack < report.worst_slack {
                report = SandwichReport {
                    worst_slack: slack,
                    worst_k: k,
                    worst_coord: j,
                };
            }
        }
    }
    Ok(report)
}

/// Per-step residual of the averaging identity
/// `P_k w̃_k = ŵ_k − (1 − P_k) w_k` in the infinity norm.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityResidual {
    pub per_step: Vec<f64>,
    pub max: f64,
}

pub fn identity_check(
    path_plain: &PathRecord,
    path_reg: &PathRecord,
    scheme: &WeightScheme,
) -> Result<IdentityResidual> {
    check_dim("regularized path length", path_plain.len(), path_reg.len())?;
    if scheme.len() < path_plain.len() {
        return Err(Error::DimensionMismatch {
            context: "scheme length",
            expected: path_plain.len(),
            got: scheme.len(),
        });
    }
    let sums = averaging::weighted_sums(scheme, &path_plain.iterates)?;
    let dim = path_plain.dim();
    let mut per_step = Vec::with_capacity(sums.len());
    for (k, s) in sums.iter().enumerate() {
        let w = &path_plain.iterates[k];
        let tail_w = match &scheme.weights {
            Weights::Scalar(_) => w * (1.0 - scheme.cumulative(k)),
            Weights::Spectral { basis, .. } => {
                let z = basis.to_eigenbasis(w);
                let tail = scheme.cumulative_vec(k, dim).map(|p| 1.0 - p);
                basis.from_eigenbasis(&tail.component_mul(&z))
            }
        };
        per_step.push(linalg::inf_norm(&(s - (&path_reg.iterates[k] - tail_w))));
    }
    let max = per_step.iter().copied().fold(0.0, f64::max);
    Ok(IdentityResidual { per_step, max })
}

/// Least-squares slope of `ln(errors[k])` against `k` over `range`.
pub fn log_slope(errors: &[f64], range: std::ops::RangeInclusive<usize>) -> f64 {
    let pts: Vec<(f64, f64)> = range
        .filter(|&k| k < errors.len() && errors[k] > 0.0)
        .map(|k| (k as f64, errors[k].ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// `argmin ½ tr(WᵀΣW) − tr(WᵀA) + λ‖W‖₁` by proximal gradient with step
/// `1/β`; stops when successive iterates differ by less than
/// `tol·(1 + ‖w‖)`.
pub fn l1_prox_solution(problem: &QuadraticProblem, lambda: f64, tol: f64) -> Result<DVector<f64>> {
    const MAX_ITER: usize = 1_000_000;
    if !(lambda >= 0.0) {
        return Err(Error::precondition(
            "lambda_nonnegative",
            format!("lambda = {lambda}"),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::precondition("tol_positive", format!("tol = {tol}")));
    }
    let beta = linalg::extreme_eigenvalues(problem.sigma()).1;
    let step = 1.0 / beta;
    let (d, c) = (problem.features(), problem.outputs());
    let mut w = DMatrix::<f64>::zeros(d, c);
    for _ in 0..MAX_ITER {
        let g = problem.sigma() * &w - problem.a();
        let next = (&w - g * step).map(|x| soft_threshold(x, lambda * step));
        let delta = (&next - &w).norm();
        w = next;
        if delta < tol * (1.0 + w.norm()) {
            return Ok(problems::flatten(w));
        }
    }
    Err(Error::NoConvergence(MAX_ITER))
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull in counter-clockwise order (Andrew's monotone chain),
/// collinear points dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn on_segment(a: [f64; 2], b: [f64; 2], q: [f64; 2], tol: f64) -> bool {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2))
        .sqrt()
        .max(f64::MIN_POSITIVE);
    if cross(a, b, q).abs() / len > tol {
        return false;
    }
    let dot = (q[0] - a[0]) * (b[0] - a[0]) + (q[1] - a[1]) * (b[1] - a[1]);
    dot >= -tol * len && dot <= len * len + tol * len
}

/// True iff `query` lies in the convex hull of `points`, boundary included
/// (1e-12 tolerance, relative to the point scale).
pub fn hull_contains(points: &[[f64; 2]], query: [f64; 2]) -> bool {
    let scale = points
        .iter()
        .chain(std::iter::once(&query))
        .flat_map(|p| p.iter())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    let hull = convex_hull(points);
    match hull.len() {
        0 => false,
        1 => (hull[0][0] - query[0]).abs() <= tol && (hull[0][1] - query[1]).abs() <= tol,
        2 => on_segment(hull[0], hull[1], query, tol),
        n => (0..n).all(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            cross(a, b, query) / len >= -tol
        }),
    }
}
