use std::f64::consts::FRAC_PI_3;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use iteravg_core::averaging::{self, WeightScheme, Weights};
use iteravg_core::data_io::{self, Dataset, ReportRow};
use iteravg_core::linalg;
use iteravg_core::optimizers::{optimizer, GradientSource, LrSchedule, PathRecord, RunConfig};
use iteravg_core::oracles::{self, IdentityResidual};
use iteravg_core::problems::{
    make_synthetic_quadratic, Preconditioner, Problem, QuadraticProblem, Regularizer, Rotation,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::ExperimentConfig;

// the two-dimensional toy problem and its hyperparameters
pub const TOY_ETA: f64 = 0.1;
pub const TOY_LAMBDA: f64 = 0.1;
pub const TOY_STEPS: usize = 500;
pub const TOY_ALPHA: f64 = 0.05;
pub const TOY_THETA: f64 = FRAC_PI_3;

// MNIST runs
pub const MNIST_ETA: f64 = 0.01;
pub const MNIST_LAMBDA: f64 = 4.0;
pub const MNIST_BATCH: usize = 500;
pub const MNIST_ALPHA: f64 = 1.0;
pub const MNIST_LIMIT: usize = 2000;

/// `½(w − w*)ᵀΣ(w − w*)` with `w* = (1, 1)` and `Σ = U diag(0.1, 1) Uᵀ`.
pub fn toy_problem(theta: f64) -> iteravg_core::Result<QuadraticProblem> {
    make_synthetic_quadratic(
        2,
        0.1,
        1.0,
        Rotation::Angle(theta),
        &DVector::from_element(2, 1.0),
    )
}

pub fn load_mnist(cfg: &ExperimentConfig) -> anyhow::Result<Dataset> {
    let dir = cfg
        .data_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("data/mnist"));
    let (images, labels) = data_io::mnist_paths(&dir);
    let limit = cfg.limit.unwrap_or(MNIST_LIMIT);
    let ds = data_io::load_idx(&images, &labels, Some(limit))
        .with_context(|| format!("loading MNIST from {}", dir.display()))?;
    if ds.x.nrows() == 0 {
        anyhow::bail!("dataset is empty (limit = {limit})");
    }
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gd,
    Pgd,
    Ngd,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Gd, Method::Pgd, Method::Ngd];

    pub fn optimizer_name(self) -> &'static str {
        match self {
            Method::Gd => "sgd",
            Method::Pgd => "psgd",
            Method::Ngd => "nsgd",
        }
    }

    pub fn label(self, stochastic: bool) -> &'static str {
        match (self, stochastic) {
            (Method::Gd, false) => "gd",
            (Method::Gd, true) => "sgd",
            (Method::Pgd, false) => "pgd",
            (Method::Pgd, true) => "psgd",
            (Method::Ngd, false) => "ngd",
            (Method::Ngd, true) => "nsgd",
        }
    }
}

pub struct RunSpec<'a> {
    pub method: Method,
    pub problem: &'a Problem,
    pub lambda: f64,
    pub schedule: LrSchedule,
    pub steps: usize,
    /// Momentum curvature; NGD only.
    pub alpha: f64,
    /// Preconditioner; PGD only.
    pub q: Option<Arc<Preconditioner>>,
    pub gradient: GradientSource,
}

/// A plain path, the matching regularized path (same noise) and the
/// average of the plain path.
pub struct AveragedRun {
    pub label: String,
    pub plain: PathRecord,
    pub reg: PathRecord,
    pub scheme: WeightScheme,
    pub averaged: Vec<DVector<f64>>,
}

pub fn averaged_run(spec: RunSpec) -> anyhow::Result<AveragedRun> {
    let base = RunConfig::deterministic(spec.steps).with_gradient(spec.gradient);
    let (reg, cfg, scheme) = match spec.method {
        Method::Gd => (
            Regularizer::l2(spec.lambda)?,
            base,
            averaging::weights_sgd_adaptive(&spec.schedule, spec.lambda, spec.steps)?,
        ),
        Method::Pgd => {
            let q = spec.q.clone().context("PGD needs a preconditioner")?;
            (
                Regularizer::generalized(q.clone(), spec.lambda)?,
                base.with_preconditioner(q),
                averaging::weights_sgd_adaptive(&spec.schedule, spec.lambda, spec.steps)?,
            )
        }
        Method::Ngd => {
            let eta = spec
                .schedule
                .constant_eta()
                .context("NGD needs a constant learning rate")?;
            (
                Regularizer::l2(spec.lambda)?,
                base.with_alpha(spec.alpha),
                averaging::weights_nsgd(eta, spec.lambda, spec.alpha, spec.steps)?,
            )
        }
    };
    let opt = optimizer(spec.method.optimizer_name()).expect("registered optimizer");
    let plain = opt.run(spec.problem, &Regularizer::None, &spec.schedule, &cfg)?;
    let reg_path = opt.run(spec.problem, &reg, &spec.schedule, &cfg)?;
    let averaged = averaging::averaged_path(&scheme, &plain.iterates)?;
    Ok(AveragedRun {
        label: spec
            .method
            .label(spec.gradient != GradientSource::Full)
            .to_string(),
        plain,
        reg: reg_path,
        scheme,
        averaged,
    })
}

/// Mean of `P_k` over eigendirections for spectral schemes.
pub fn scalar_weight(scheme: &WeightScheme, k: usize, dim: usize) -> f64 {
    match &scheme.weights {
        Weights::Scalar(_) => scheme.cumulative(k),
        Weights::Spectral { .. } => scheme.cumulative_vec(k, dim).mean(),
    }
}

pub fn l1_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    linalg::l1_norm(&(a - b))
}

impl AveragedRun {
    pub fn steps(&self) -> usize {
        self.plain.len() - 1
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        let dim = self.plain.dim();
        (0..self.plain.len())
            .map(|k| ReportRow {
                iter: k,
                err_plain_vs_reg_l1: l1_dist(&self.plain.iterates[k], &self.reg.iterates[k]),
                err_avg_vs_reg_l1: l1_dist(&self.averaged[k], &self.reg.iterates[k]),
                p_k: scalar_weight(&self.scheme, k, dim),
            })
            .collect()
    }

    /// `‖w̃_k − ŵ_k‖₂` per step.
    pub fn avg_errors_l2(&self) -> Vec<f64> {
        self.averaged
            .iter()
            .zip(&self.reg.iterates)
            .map(|(a, r)| (a - r).norm())
            .collect()
    }

    pub fn identity(&self) -> iteravg_core::Result<IdentityResidual> {
        oracles::identity_check(&self.plain, &self.reg, &self.scheme)
    }

    pub fn final_avg(&self) -> &DVector<f64> {
        self.averaged.last().expect("nonempty path")
    }
}

/// `Σ + εI` with `ε` a small multiple of the largest eigenvalue, so that
/// sample second moments with empty pixels become positive definite.
pub fn jittered(sigma: &DMatrix<f64>, rel: f64) -> iteravg_core::Result<Preconditioner> {
    let d = sigma.nrows();
    let (_, top) = linalg::extreme_eigenvalues(sigma);
    Preconditioner::new(sigma + DMatrix::identity(d, d) * (rel * top))
}

pub fn inf_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    linalg::inf_norm(&(a - b))
}
