//! GD/SGD, PGD/PSGD and NGD/NSGD for the plain and regularized objectives,
//! producing replayable iterate paths.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{self, ConvexityBounds, KernelProblem, Preconditioner, Problem, Regularizer};

/// Learning rates of the unregularized run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    Constant(f64),
    /// `η_0, η_1, ...`; must cover every step it is used for.
    Sequence(Vec<f64>),
}

/// Rates `η_k` together with the coupled regularized rates
/// `γ_k = η_k / (1 + λη_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: RateKind,
    pub lambda: f64,
}

impl LrSchedule {
    /// Validates every rate against `(0, 1/beta)`.
    pub fn new(kind: RateKind, lambda: f64, beta: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::precondition(
                "lambda_nonnegative",
                format!("lambda must be finite and >= 0, got {lambda}"),
            ));
        }
        let rates: &[f64] = match &kind {
            RateKind::Constant(eta) => std::slice::from_ref(eta),
            RateKind::Sequence(v) => v,
        };
        if rates.is_empty() {
            return Err(Error::precondition(
                "rates_nonempty",
                "empty learning-rate sequence",
            ));
        }
        for (k, &eta) in rates.iter().enumerate() {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::precondition(
                    "eta_positive",
                    format!("eta_{k} = {eta} is not positive"),
                ));
            }
            if eta * beta >= 1.0 {
                return Err(Error::precondition(
                    "eta_below_inverse_beta",
                    format!("eta_{k} = {eta} is not below 1/beta = {}", 1.0 / beta),
                ));
            }
        }
        Ok(Self { kind, lambda })
    }

    pub fn constant(eta: f64) -> Self {
        Self {
            kind: RateKind::Constant(eta),
            lambda: 0.0,
        }
    }

    pub fn eta(&self, k: usize) -> f64 {
        match &self.kind {
            RateKind::Constant(eta) => *eta,
            RateKind::Sequence(v) => v[k],
        }
    }

    pub fn gamma(&self, k: usize) -> f64 {
        coupled(self.eta(k), self.lambda)
    }

    pub fn constant_eta(&self) -> Option<f64> {
        match &self.kind {
            RateKind::Constant(eta) => Some(*eta),
            RateKind::Sequence(_) => None,
        }
    }

    /// Number of rates available, `None` when unbounded.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> Option<usize> {
        match &self.kind {
            RateKind::Constant(_) => None,
            RateKind::Sequence(v) => Some(v.len()),
        }
    }

    pub(crate) fn require(&self, count: usize) -> Result<()> {
        match self.len() {
            Some(n) if n < count => Err(Error::precondition(
                "schedule_length",
                format!("schedule has {n} rates but {count} are needed"),
            )),
            _ => Ok(()),
        }
    }
}

/// `γ = η / (1 + λη)`, equivalently `1 − λγ = γ/η`.
pub fn coupled(eta: f64, lambda: f64) -> f64 {
    eta / (1.0 + lambda * eta)
}

pub fn make_schedule(kind: RateKind, lambda: f64, bounds: &ConvexityBounds) -> Result<LrSchedule> {
    LrSchedule::new(kind, lambda, bounds.beta)
}

/// Where each step's gradient comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSource {
    /// Exact gradient of the objective.
    Full,
    /// Uniform mini-batches drawn with replacement.
    MiniBatch { batch: usize, seed: u64 },
    /// Exact gradient plus noise drawn uniformly from the sphere of radius
    /// `sigma`. For preconditioned runs the noise is added after `Q⁻¹`.
    Injected { sigma: f64, seed: u64 },
}

impl GradientSource {
    pub fn seed(&self) -> Option<u64> {
        match self {
            GradientSource::Full => None,
            GradientSource::MiniBatch { seed, .. } | GradientSource::Injected { seed, .. } => {
                Some(*seed)
            }
        }
    }
}

/// Generator for step `k`. Every step has its own stream, so runs that share
/// a seed see identical noise regardless of what else they draw.
fn step_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Uniform draw from the sphere of radius `sigma` in `dim` dimensions.
pub fn spherical_noise<R: Rng + ?Sized>(dim: usize, sigma: f64, rng: &mut R) -> DVector<f64> {
    loop {
        let g = DVector::<f64>::from_fn(dim, |_, _| rng.sample(StandardNormal));
        let n = g.norm();
        if n > 0.0 {
            return g * (sigma / n);
        }
    }
}

/// Noise added at step `k` under `source`, if any.
pub fn injected_noise(source: &GradientSource, dim: usize, k: usize) -> Option<DVector<f64>> {
    match *source {
        GradientSource::Injected { sigma, seed } => {
            Some(spherical_noise(dim, sigma, &mut step_rng(seed, k)))
        }
        _ => None,
    }
}

pub fn sample_batch(n: usize, batch: usize, seed: u64, k: usize) -> Vec<usize> {
    let mut rng = step_rng(seed, k);
    (0..batch).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub steps: usize,
    pub gradient: Option<GradientSource>,
    /// Preconditioner `Q` of PSGD. Required even for the unregularized run.
    pub preconditioner: Option<Arc<Preconditioner>>,
    /// Strong convexity used for the Nesterov momentum.
    pub alpha: Option<f64>,
    /// Kernel problems only: the penalty `λ` of the reference run. When set
    /// and the regularizer's `λ̂` exceeds it, the run uses the matrix rate
    /// `η_k (I + (λ̂ − λ)η_k K)⁻¹`.
    pub kernel_reference: Option<f64>,
}

impl RunConfig {
    pub fn deterministic(steps: usize) -> Self {
        Self {
            steps,
            ..Default::default()
        }
    }

    pub fn source(&self) -> GradientSource {
        self.gradient.unwrap_or(GradientSource::Full)
    }

    pub fn with_gradient(mut self, g: GradientSource) -> Self {
        self.gradient = Some(g);
        self
    }

    pub fn with_preconditioner(mut self, q: Arc<Preconditioner>) -> Self {
        self.preconditioner = Some(q);
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn with_kernel_reference(mut self, lambda: f64) -> Self {
        self.kernel_reference = Some(lambda);
        self
    }
}

/// An optimization path `w_0 = 0, w_1, ..., w_K` with the metadata needed to
/// replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub optimizer: String,
    pub seed: Option<u64>,
    pub fingerprint: String,
    pub schedule: LrSchedule,
    /// Strength of the regularizer the path was run with.
    pub lambda: f64,
    pub iterates: Vec<DVector<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PathHeader {
    format: String,
    version: u32,
    optimizer: String,
    seed: Option<u64>,
    fingerprint: String,
    schedule: LrSchedule,
    lambda: f64,
    dim: usize,
    count: usize,
}

const PATH_FORMAT: &str = "iteravg-path";
const PATH_VERSION: u32 = 1;

impl PathRecord {
    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.iterates.first().map_or(0, |w| w.len())
    }

    pub fn last(&self) -> &DVector<f64> {
        self.iterates.last().expect("paths hold at least w_0")
    }

    /// JSON lines: a metadata header, then one iterate per line. Floats are
    /// written in shortest round-trip form, so reading back is bit-exact.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = PathHeader {
            format: PATH_FORMAT.into(),
            version: PATH_VERSION,
            optimizer: self.optimizer.clone(),
            seed: self.seed,
            fingerprint: self.fingerprint.clone(),
            schedule: self.schedule.clone(),
            lambda: self.lambda,
            dim: self.dim(),
            count: self.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for it in &self.iterates {
            serde_json::to_writer(&mut w, it.as_slice())?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut offset = 0usize;
        let mut lines = r.split(b'\n');
        let mut next_line = |what: &str| -> Result<(usize, Vec<u8>)> {
            let at = offset;
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse {
                    offset: at,
                    msg: format!("unexpected end of path file, expected {what}"),
                })?
                .map_err(|e| Error::Parse {
                    offset: at,
                    msg: e.to_string(),
                })?;
            offset += line.len() + 1;
            Ok((at, line))
        };
        let (_, head) = next_line("header")?;
        let header: PathHeader = serde_json::from_slice(&head).map_err(|e| Error::Parse {
            offset: 0,
            msg: format!("bad header: {e}"),
        })?;
        if header.format != PATH_FORMAT || header.version != PATH_VERSION {
            return Err(Error::Parse {
                offset: 0,
                msg: format!(
                    "unsupported path format {} v{}",
                    header.format, header.version
                ),
            });
        }
        let mut iterates = Vec::with_capacity(header.count);
        for i in 0..header.count {
            let (at, line) = next_line(&format!("iterate {i}"))?;
            let v: Vec<f64> = serde_json::from_slice(&line).map_err(|e| Error::Parse {
                offset: at,
                msg: format!("iterate {i}: {e}"),
            })?;
            if v.len() != header.dim {
                return Err(Error::Parse {
                    offset: at,
                    msg: format!(
                        "iterate {i} has {} entries, header says {}",
                        v.len(),
                        header.dim
                    ),
                });
            }
            iterates.push(DVector::from_vec(v));
        }
        Ok(Self {
            optimizer: header.optimizer,
            seed: header.seed,
            fingerprint: header.fingerprint,
            schedule: header.schedule,
            lambda: header.lambda,
            iterates,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

/// State of a Nesterov run.
#[derive(Debug, Clone, PartialEq)]
pub struct NesterovState {
    pub w: DVector<f64>,
    pub w_prev: DVector<f64>,
    pub tau: f64,
}

impl NesterovState {
    pub fn new(dim: usize, tau: f64) -> Self {
        Self {
            w: DVector::zeros(dim),
            w_prev: DVector::zeros(dim),
            tau,
        }
    }

    /// `v_k = w_k + τ(w_k − w_{k−1})`.
    pub fn lookahead(&self) -> DVector<f64> {
        &self.w + (&self.w - &self.w_prev) * self.tau
    }

    pub fn advance(&mut self, next: DVector<f64>) {
        self.w_prev = std::mem::replace(&mut self.w, next);
    }
}

/// `(1 − √(rate·curv)) / (1 + √(rate·curv))`.
pub fn momentum(rate: f64, curvature: f64) -> Result<f64> {
    let x = rate * curvature;
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::precondition(
            "eta_alpha_below_one",
            format!("momentum needs 0 < eta*alpha < 1, got {x}"),
        ));
    }
    let s = x.sqrt();
    Ok((1.0 - s) / (1.0 + s))
}

/// A path-producing algorithm selectable by name.
pub trait PathOptimizer: Send + Sync {
    fn name(&self) -> &'static str;

    fn run(
        &self,
        problem: &Problem,
        reg: &Regularizer,
        schedule: &LrSchedule,
        cfg: &RunConfig,
    ) -> Result<PathRecord>;
}

fn registry() -> &'static BTreeMap<&'static str, Box<dyn PathOptimizer>> {
    static REG: OnceLock<BTreeMap<&'static str, Box<dyn PathOptimizer>>> = OnceLock::new();
    REG.get_or_init(|| {
        let all: Vec<Box<dyn PathOptimizer>> = vec![Box::new(Sgd), Box::new(Psgd), Box::new(Nsgd)];
        all.into_iter().map(|o| (o.name(), o)).collect()
    })
}

pub fn optimizer(name: &str) -> Option<&'static dyn PathOptimizer> {
    registry().get(name).map(|b| b.as_ref())
}

pub fn optimizer_names() -> Vec<&'static str> {
    registry().keys().copied().collect()
}

/// Step rate of a plain (`λ = 0`) or regularized run.
fn step_rate(schedule: &LrSchedule, reg: &Regularizer, k: usize) -> f64 {
    coupled(schedule.eta(k), reg.lambda())
}

struct Guard {
    limit: f64,
}

impl Guard {
    fn new(problem: &Problem) -> Self {
        Self {
            limit: 1e8 * (1.0 + problem.reference_scale()),
        }
    }

    fn check(&self, step: usize, w: &DVector<f64>) -> Result<()> {
        let norm = w.norm();
        if norm.is_finite() && norm <= self.limit {
            Ok(())
        } else {
            Err(Error::Diverged { step, norm })
        }
    }
}

/// Gradient of the objective at `w` for step `k`, noise excluded.
fn gradient(
    problem: &Problem,
    reg: &Regularizer,
    w: &DVector<f64>,
    source: &GradientSource,
    k: usize,
) -> Result<DVector<f64>> {
    match *source {
        GradientSource::MiniBatch { batch, seed } => {
            let n = problem
                .samples()
                .ok_or(Error::Unsupported("mini-batch gradients without raw data"))?
                .len();
            if batch == 0 {
                return Err(Error::precondition(
                    "batch_nonempty",
                    "batch size must be at least 1",
                ));
            }
            problems::stochastic_grad(problem, reg, w, &sample_batch(n, batch, seed, k))
        }
        _ => Ok(problems::eval_loss_grad(problem, reg, w)?.1),
    }
}

fn record(
    name: &str,
    problem: &Problem,
    reg: &Regularizer,
    schedule: &LrSchedule,
    cfg: &RunConfig,
    iterates: Vec<DVector<f64>>,
) -> PathRecord {
    PathRecord {
        optimizer: name.to_string(),
        seed: cfg.source().seed(),
        fingerprint: problem.fingerprint(),
        schedule: schedule.clone(),
        lambda: reg.lambda(),
        iterates,
    }
}

fn check_smooth(reg: &Regularizer) -> Result<()> {
    if matches!(reg, Regularizer::L1(_)) {
        Err(Error::NonSmooth)
    } else {
        Ok(())
    }
}

/// Plain (stochastic) gradient descent.
pub struct Sgd;

impl PathOptimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn run(
        &self,
        problem: &Problem,
        reg: &Regularizer,
        schedule: &LrSchedule,
        cfg: &RunConfig,
    ) -> Result<PathRecord> {
        check_smooth(reg)?;
        schedule.require(cfg.steps)?;
        if let Problem::Kernel(k) = problem {
            let iterates = kernel_gd(k, reg, schedule, cfg)?;
            return Ok(record(self.name(), problem, reg, schedule, cfg, iterates));
        }
        let source = cfg.source();
        let guard = Guard::new(problem);
        let mut w = DVector::zeros(problem.dim());
        let mut iterates = Vec::with_capacity(cfg.steps + 1);
        iterates.push(w.clone());
        for k in 0..cfg.steps {
            let mut g = gradient(problem, reg, &w, &source, k)?;
            if let Some(noise) = injected_noise(&source, g.len(), k) {
                g += noise;
            }
            w -= g * step_rate(schedule, reg, k);
            guard.check(k + 1, &w)?;
            iterates.push(w.clone());
        }
        Ok(record(self.name(), problem, reg, schedule, cfg, iterates))
    }
}

/// Gradient descent on the kernel dual, carried out in the eigenbasis of `K`.
/// The plain run uses the scalar rate; when `kernel_reference` is set the
/// regularized run uses the matrix rate.
fn kernel_gd(
    k: &KernelProblem,
    reg: &Regularizer,
    schedule: &LrSchedule,
    cfg: &RunConfig,
) -> Result<Vec<DVector<f64>>> {
    if cfg.source() != GradientSource::Full {
        return Err(Error::Unsupported("stochastic kernel gradients"));
    }
    let lambda_hat = KernelProblem::penalty(reg)?;
    let shift = match cfg.kernel_reference {
        Some(base) if lambda_hat < base => {
            return Err(Error::precondition(
                "lambda_hat_above_lambda",
                format!(
                    "regularized kernel run needs lambda_hat >= lambda, got {lambda_hat} < {base}"
                ),
            ));
        }
        Some(base) => lambda_hat - base,
        None => 0.0,
    };
    let eig = k.eigen();
    let mu = &eig.values;
    let ty = eig.to_eigenbasis(k.y());
    let mut c = DVector::zeros(k.len());
    let mut iterates = Vec::with_capacity(cfg.steps + 1);
    iterates.push(DVector::zeros(k.len()));
    let limit = 1e8 * (1.0 + k.y().norm());
    for step in 0..cfg.steps {
        let eta = schedule.eta(step);
        for j in 0..c.len() {
            let g = mu[j] * ((mu[j] + lambda_hat) * c[j] - ty[j]);
            c[j] -= eta / (1.0 + shift * eta * mu[j]) * g;
        }
        let alpha = eig.from_eigenbasis(&c);
        let norm = alpha.norm();
        if !(norm.is_finite() && norm <= limit) {
            return Err(Error::Diverged {
                step: step + 1,
                norm,
            });
        }
        iterates.push(alpha);
    }
    Ok(iterates)
}

/// Preconditioned (stochastic) gradient descent `w ← w − η Q⁻¹ g`.
pub struct Psgd;

impl PathOptimizer for Psgd {
    fn name(&self) -> &'static str {
        "psgd"
    }

    fn run(
        &self,
        problem: &Problem,
        reg: &Regularizer,
        schedule: &LrSchedule,
        cfg: &RunConfig,
    ) -> Result<PathRecord> {
        check_smooth(reg)?;
        schedule.require(cfg.steps)?;
        let q = cfg.preconditioner.as_ref().ok_or_else(|| {
            Error::precondition("preconditioner_present", "psgd needs a preconditioner Q")
        })?;
        if let Problem::Kernel(_) = problem {
            return Err(Error::Unsupported("preconditioned kernel descent"));
        }
        match reg {
            Regularizer::GeneralizedL2 { q: rq, .. } if rq.matrix() != q.matrix() => {
                return Err(Error::precondition(
                    "penalty_metric_matches_q",
                    "the generalized l2 metric must equal the preconditioner",
                ));
            }
            Regularizer::L2(l) if *l > 0.0 && !q.is_identity() => {
                return Err(Error::precondition(
                    "penalty_metric_matches_q",
                    "plain l2 with a non-identity preconditioner has no averaging counterpart",
                ));
            }
            _ => {}
        }
        let (d, c) = problem.shape();
        crate::error::check_dim("preconditioner", d, q.dim())?;
        let source = cfg.source();
        let guard = Guard::new(problem);
        let mut w = DVector::zeros(problem.dim());
        let mut iterates = Vec::with_capacity(cfg.steps + 1);
        iterates.push(w.clone());
        for k in 0..cfg.steps {
            let g = gradient(problem, reg, &w, &source, k)?;
            let g = DMatrix::from_column_slice(d, c, g.as_slice());
            let mut dir = problems::flatten(q.solve(&g));
            if let Some(noise) = injected_noise(&source, dir.len(), k) {
                dir += noise;
            }
            w -= dir * step_rate(schedule, reg, k);
            guard.check(k + 1, &w)?;
            iterates.push(w.clone());
        }
        Ok(record(self.name(), problem, reg, schedule, cfg, iterates))
    }
}

/// Nesterov's accelerated (stochastic) gradient descent with constant rate.
/// `w_0 = w_1 = 0`; the first gradient step produces `w_2`.
pub struct Nsgd;

impl PathOptimizer for Nsgd {
    fn name(&self) -> &'static str {
        "nsgd"
    }

    fn run(
        &self,
        problem: &Problem,
        reg: &Regularizer,
        schedule: &LrSchedule,
        cfg: &RunConfig,
    ) -> Result<PathRecord> {
        check_smooth(reg)?;
        let eta = schedule.constant_eta().ok_or_else(|| {
            Error::precondition("constant_rate", "nsgd requires a constant learning rate")
        })?;
        if let Problem::Kernel(_) = problem {
            return Err(Error::Unsupported("accelerated kernel descent"));
        }
        if matches!(reg, Regularizer::GeneralizedL2 { .. }) {
            return Err(Error::Unsupported("generalized l2 with nsgd"));
        }
        let alpha = cfg.alpha.ok_or_else(|| {
            Error::precondition("alpha_present", "nsgd needs the strong convexity alpha")
        })?;
        let lambda = reg.lambda();
        let rate = coupled(eta, lambda);
        let tau = momentum(rate, alpha + lambda)?;
        let source = cfg.source();
        let guard = Guard::new(problem);
        let mut state = NesterovState::new(problem.dim(), tau);
        let mut iterates = Vec::with_capacity(cfg.steps + 1);
        iterates.push(state.w.clone());
        if cfg.steps >= 1 {
            iterates.push(state.w.clone());
        }
        for k in 1..cfg.steps {
            let v = state.lookahead();
            let mut g = gradient(problem, reg, &v, &source, k)?;
            if let Some(noise) = injected_noise(&source, g.len(), k) {
                g += noise;
            }
            let next = v - g * rate;
            guard.check(k + 1, &next)?;
            iterates.push(next.clone());
            state.advance(next);
        }
        Ok(record(self.name(), problem, reg, schedule, cfg, iterates))
    }
}

pub fn sgd_run(
    problem: &Problem,
    reg: &Regularizer,
    schedule: &LrSchedule,
    cfg: &RunConfig,
) -> Result<PathRecord> {
    Sgd.run(problem, reg, schedule, cfg)
}

pub fn psgd_run(
    problem: &Problem,
    reg: &Regularizer,
    schedule: &LrSchedule,
    cfg: &RunConfig,
) -> Result<PathRecord> {
    Psgd.run(problem, reg, schedule, cfg)
}

pub fn nsgd_run(
    problem: &Problem,
    reg: &Regularizer,
    schedule: &LrSchedule,
    cfg: &RunConfig,
) -> Result<PathRecord> {
    Nsgd.run(problem, reg, schedule, cfg)
}
