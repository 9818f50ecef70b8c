use std::sync::Arc;

use anyhow::Context;
use iteravg_core::averaging;
use iteravg_core::data_io::Report;
use iteravg_core::optimizers::{coupled, GradientSource, LrSchedule, RateKind};
use iteravg_core::oracles::CheckReport;
use iteravg_core::problems::{
    self, LogisticProblem, Preconditioner, Problem, QuadraticProblem, Regularizer,
};
use nalgebra::DMatrix;
use serde_json::json;

use super::common::*;
use super::Experiment;
use crate::config::ExperimentConfig;

pub struct MnistLinear;
pub struct MnistLogistic;

// Σ + εI with ε relative to λ_max(Σ); empty pixels make Σ singular
const JITTER: f64 = 1e-6;
const MNIST_STEPS: usize = 500;
const MONOTONE_FROM: usize = 10;

struct Setup {
    problem: Problem,
    q: Arc<Preconditioner>,
    eta: f64,
    lambda: f64,
    alpha: f64,
    steps: usize,
    gradient: GradientSource,
    echo: serde_json::Value,
}

fn setup(cfg: &ExperimentConfig, logistic: bool) -> anyhow::Result<Setup> {
    let ds = load_mnist(cfg)?;
    let rows = ds.len();
    let provenance = ds.provenance.clone();
    let samples = ds.into_samples()?;
    let eta = cfg.eta_or(MNIST_ETA);
    let lambda = cfg.lambda_or(MNIST_LAMBDA)?;
    let alpha = cfg.alpha_or(MNIST_ALPHA);
    let steps = cfg.steps_or(MNIST_STEPS);
    let seed = cfg.seed_or(0);
    let batch = cfg.batch.unwrap_or(MNIST_BATCH);
    let gradient = if cfg.deterministic() {
        GradientSource::Full
    } else {
        GradientSource::MiniBatch { batch, seed }
    };
    let sigma = samples.x.tr_mul(&samples.x) / rows as f64;
    let base_ridge = cfg.base_ridge.unwrap_or(1.0);
    // logistic: the base ridge is part of the loss, so Q carries it too; without
    // it Q⁻¹λ₀W explodes along the empty pixels
    let q = Arc::new(if logistic {
        Preconditioner::new(&sigma + DMatrix::identity(sigma.nrows(), sigma.nrows()) * base_ridge)?
    } else {
        jittered(&sigma, JITTER)?
    });
    let problem: Problem = if logistic {
        LogisticProblem::new(samples, base_ridge)?.into()
    } else {
        QuadraticProblem::from_samples(samples)?.into()
    };
    let mut echo = json!({
        "rows": rows, "data": provenance, "eta": eta, "lambda": lambda, "alpha": alpha, "steps": steps,
        "gradient": gradient,
        "q": if logistic { "sample second moment + base_ridge I" } else { "sample second moment + 1e-6 lambda_max I" },
    });
    if logistic {
        echo["base_ridge"] = json!(base_ridge);
    }
    Ok(Setup {
        problem,
        q,
        eta,
        lambda,
        alpha,
        steps,
        gradient,
        echo,
    })
}

fn run_method(s: &Setup, method: Method) -> anyhow::Result<AveragedRun> {
    let schedule = match &s.problem {
        // the quadratic window is only η < 1/β; the logistic one is not enforced
        Problem::Quadratic(_) => {
            let metric = match method {
                Method::Pgd => Regularizer::generalized(s.q.clone(), s.lambda)?,
                _ => Regularizer::None,
            };
            let beta = problems::smoothness(&s.problem, &metric)?;
            LrSchedule::new(RateKind::Constant(s.eta), s.lambda, beta)?
        }
        _ => LrSchedule::constant(s.eta),
    };
    let mut run = averaged_run(RunSpec {
        method,
        problem: &s.problem,
        lambda: s.lambda,
        schedule,
        steps: s.steps,
        alpha: s.alpha,
        q: Some(s.q.clone()),
        gradient: s.gradient,
    })
    .with_context(|| format!("{} run", method.label(s.gradient != GradientSource::Full)))?;
    // plain GD on the logistic loss uses the general strongly convex weights
    if method == Method::Gd && !matches!(s.problem, Problem::Quadratic(_)) {
        run.scheme = averaging::weights_general(s.eta, coupled(s.eta, s.lambda), s.steps)?;
        run.averaged = averaging::averaged_path(&run.scheme, &run.plain.iterates)?;
    }
    Ok(run)
}

fn final_ratio(run: &AveragedRun) -> (f64, f64) {
    let last = run.rows().pop().expect("nonempty");
    (last.err_avg_vs_reg_l1, last.err_plain_vs_reg_l1)
}

fn mnist_reports(
    name: &str,
    cfg: &ExperimentConfig,
    logistic: bool,
) -> anyhow::Result<Vec<Report>> {
    let s = setup(cfg, logistic)?;
    let deterministic = s.gradient == GradientSource::Full;
    let mut reports = Vec::new();
    for method in Method::ALL {
        let run = run_method(&s, method)?;
        let label = run.label.clone();
        let rows = run.rows();
        let mut checks = Vec::new();
        if deterministic && !logistic {
            let from = MONOTONE_FROM.min(rows.len().saturating_sub(1));
            let rise = rows[from..]
                .windows(2)
                .map(|w| w[1].err_avg_vs_reg_l1 - w[0].err_avg_vs_reg_l1)
                .fold(f64::NEG_INFINITY, f64::max);
            let scale = iteravg_core::linalg::l1_norm(run.reg.last());
            // rises below the float resolution of the l1 error count as ties
            checks.push(CheckReport::new(
                format!("{label}/monotone_after_{MONOTONE_FROM}"),
                json!({"max_increase": rise, "reg_l1": scale}),
                rise.max(0.0) / scale,
                cfg.tolerance("monotone", 1e-12),
            ));
            let last = rows.last().expect("nonempty").err_avg_vs_reg_l1;
            checks.push(CheckReport::new(
                format!("{label}/final_relative"),
                json!({"err_avg": last, "reg_l1": scale}),
                last / scale,
                cfg.tolerance("final_relative", 1e-4),
            ));
        } else {
            let (avg, plain) = final_ratio(&run);
            checks.push(CheckReport::new(
                format!("{label}/avg_below_plain"),
                json!({"err_avg": avg, "err_plain": plain}),
                avg / plain,
                cfg.tolerance("avg_below_plain", 1.0),
            ));
        }
        let mut rep = Report::new(format!("{name}/{label}"), s.echo.clone());
        rep.rows = rows;
        rep.checks = checks;
        reports.push(rep);
    }
    Ok(reports)
}

impl Experiment for MnistLinear {
    fn name(&self) -> &'static str {
        "mnist-linear"
    }

    fn about(&self) -> &'static str {
        "least squares on MNIST one-hot targets: averaged path vs the regularized path"
    }

    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<Vec<Report>> {
        mnist_reports(self.name(), cfg, false)
    }
}

impl Experiment for MnistLogistic {
    fn name(&self) -> &'static str {
        "mnist-logistic"
    }

    fn about(&self) -> &'static str {
        "softmax regression on MNIST: averaged path vs the regularized path"
    }

    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<Vec<Report>> {
        mnist_reports(self.name(), cfg, true)
    }
}
