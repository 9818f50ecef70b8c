use std::sync::Arc;

use iteravg_core::averaging;
use iteravg_core::data_io::Report;
use iteravg_core::optimizers::{coupled, GradientSource, LrSchedule};
use iteravg_core::oracles::{self, CheckReport};
use iteravg_core::problems::{Preconditioner, Problem, Regularizer};
use serde_json::json;

use super::common::*;
use super::Experiment;
use crate::config::ExperimentConfig;

pub struct Demo2d;

/// Resolved toy hyperparameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Toy {
    pub eta: f64,
    pub lambda: f64,
    pub steps: usize,
    pub alpha: f64,
    pub theta: f64,
}

impl Toy {
    pub fn from_config(cfg: &ExperimentConfig) -> anyhow::Result<Self> {
        Ok(Self {
            eta: cfg.eta_or(TOY_ETA),
            lambda: cfg.lambda_or(TOY_LAMBDA)?,
            steps: cfg.steps_or(TOY_STEPS),
            alpha: cfg.alpha_or(TOY_ALPHA),
            theta: cfg.theta.unwrap_or(TOY_THETA),
        })
    }

    pub fn echo(&self) -> serde_json::Value {
        json!({"eta": self.eta, "lambda": self.lambda, "steps": self.steps, "alpha": self.alpha, "theta": self.theta})
    }

    /// Runs one method on the toy problem; `schedule` defaults to the
    /// constant rate `eta`.
    pub fn run(
        &self,
        method: Method,
        schedule: Option<LrSchedule>,
    ) -> anyhow::Result<(Problem, AveragedRun)> {
        self.run_full(method, schedule, GradientSource::Full)
    }

    /// Constant-rate run with the given gradient source.
    pub fn run_with(
        &self,
        method: Method,
        gradient: GradientSource,
    ) -> anyhow::Result<(Problem, AveragedRun)> {
        self.run_full(method, None, gradient)
    }

    fn run_full(
        &self,
        method: Method,
        schedule: Option<LrSchedule>,
        gradient: GradientSource,
    ) -> anyhow::Result<(Problem, AveragedRun)> {
        let quad = toy_problem(self.theta)?;
        let bounds =
            iteravg_core::problems::convexity_bounds(&quad.clone().into(), &Regularizer::None)?;
        let schedule = match schedule {
            Some(s) => s,
            None => LrSchedule::new(
                iteravg_core::optimizers::RateKind::Constant(self.eta),
                self.lambda,
                bounds.beta,
            )?,
        };
        let q = Arc::new(Preconditioner::new(quad.sigma().clone())?);
        let problem: Problem = quad.into();
        let run = averaged_run(RunSpec {
            method,
            problem: &problem,
            lambda: self.lambda,
            schedule,
            steps: self.steps,
            alpha: self.alpha,
            q: Some(q),
            gradient,
        })?;
        Ok((problem, run))
    }

    /// Per-step contraction of `‖w̃_k − ŵ_k‖` predicted for each method.
    pub fn predicted_rate(&self, method: Method) -> f64 {
        match method {
            Method::Gd | Method::Pgd => 1.0 - self.lambda * coupled(self.eta, self.lambda),
            Method::Ngd => averaging::nsgd_ratio(self.eta, self.lambda, self.alpha),
        }
    }
}

/// `ŵ_∞` for the toy: the ridge solution, or the generalized one for PGD.
pub(crate) fn toy_limit(
    problem: &Problem,
    method: Method,
    lambda: f64,
) -> anyhow::Result<nalgebra::DVector<f64>> {
    let quad = problem.as_quadratic().expect("toy is quadratic");
    let reg = match method {
        Method::Pgd => {
            Regularizer::generalized(Arc::new(Preconditioner::new(quad.sigma().clone())?), lambda)?
        }
        _ => Regularizer::l2(lambda)?,
    };
    Ok(oracles::ridge_solution(quad, &reg)?.w_hat)
}

impl Experiment for Demo2d {
    fn name(&self) -> &'static str {
        "demo2d"
    }

    fn about(&self) -> &'static str {
        "GD, PGD and NGD on the 2-D quadratic: identity, decay rate and limit of the averaged path"
    }

    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<Vec<Report>> {
        let toy = Toy::from_config(cfg)?;
        let fit_from = 50.min(toy.steps);
        let mut reports = Vec::new();
        for method in Method::ALL {
            let (problem, run) = toy.run(method, None)?;
            let id = run.identity()?;
            let errs = run.avg_errors_l2();
            let predicted = toy.predicted_rate(method).ln();
            let slope = oracles::log_slope(&errs, fit_from..=toy.steps);
            let final_err = inf_dist(run.final_avg(), run.reg.last());
            let limit = toy_limit(&problem, method, toy.lambda)?;
            let limit_err = inf_dist(run.final_avg(), &limit);
            let label = run.label.clone();
            let mut rep = Report::new(format!("demo2d/{label}"), toy.echo());
            rep.rows = run.rows();
            rep.checks = vec![
                CheckReport::new(
                    format!("{label}/identity"),
                    json!({}),
                    id.max,
                    cfg.tolerance("identity", 1e-10),
                ),
                CheckReport::new(
                    format!("{label}/rate"),
                    json!({"slope": slope, "log_rate": predicted, "fit_from": fit_from}),
                    slope - predicted,
                    cfg.tolerance("rate", 1e-3),
                ),
                CheckReport::new(
                    format!("{label}/final_error"),
                    json!({"norm": "inf"}),
                    final_err,
                    cfg.tolerance("final_error", 1e-6),
                ),
                CheckReport::new(
                    format!("{label}/limit"),
                    json!({"norm": "inf", "limit": limit.as_slice()}),
                    limit_err,
                    cfg.tolerance("limit", 1e-6),
                ),
            ];
            reports.push(rep);
        }
        Ok(reports)
    }
}
