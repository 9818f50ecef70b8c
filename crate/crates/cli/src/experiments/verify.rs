use std::sync::Arc;

use iteravg_core::data_io::Report;
use iteravg_core::optimizers::{LrSchedule, RateKind};
use iteravg_core::oracles::CheckReport;
use iteravg_core::problems::{self, Preconditioner, Regularizer};
use serde_json::json;

use super::common::*;
use super::demo2d::Toy;
use super::kernel::{kernel_run, random_kernel, KERNEL_ETA, KERNEL_LAMBDA_HATS, KERNEL_N};
use super::Experiment;
use crate::config::ExperimentConfig;

pub struct VerifyIdentity;

/// Rates alternating between `lo/β` and `hi/β`, one per step plus the
/// extra rate the final weight needs.
pub(crate) fn alternating_rates(beta: f64, steps: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..=steps)
        .map(|k| if k % 2 == 0 { lo / beta } else { hi / beta })
        .collect()
}

impl Experiment for VerifyIdentity {
    fn name(&self) -> &'static str {
        "verify-identity"
    }

    fn about(&self) -> &'static str {
        "averaging identity for GD, PGD, NGD, kernel GD and alternating learning rates"
    }

    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<Vec<Report>> {
        let toy = Toy::from_config(cfg)?;
        let tol = cfg.tolerance("identity", 1e-10);
        let mut reports = Vec::new();
        let mut push =
            |label: String, echo: serde_json::Value, run: &AveragedRun| -> anyhow::Result<()> {
                let id = run.identity()?;
                let mut rep = Report::new(format!("verify-identity/{label}"), echo);
                rep.rows = run.rows();
                rep.checks = vec![CheckReport::new(
                    format!("{label}/identity"),
                    json!({}),
                    id.max,
                    tol,
                )];
                reports.push(rep);
                Ok(())
            };
        for method in Method::ALL {
            let (_, run) = toy.run(method, None)?;
            push(run.label.clone(), toy.echo(), &run)?;
        }
        // adaptive rates: β of the problem each method actually sees
        for method in [Method::Gd, Method::Pgd] {
            let quad = toy_problem(toy.theta)?;
            // PGD sees the whitened problem Q^{-1/2} Σ Q^{-1/2}
            let metric = match method {
                Method::Pgd => Regularizer::generalized(
                    Arc::new(Preconditioner::new(quad.sigma().clone())?),
                    toy.lambda,
                )?,
                _ => Regularizer::None,
            };
            let beta = problems::convexity_bounds(&quad.into(), &metric)?.beta;
            let rates = alternating_rates(beta, toy.steps, 0.5, 0.9);
            let schedule = LrSchedule::new(RateKind::Sequence(rates), toy.lambda, beta)?;
            let (_, run) = toy.run(method, Some(schedule))?;
            let label = format!("{}-adaptive", run.label);
            push(
                label,
                json!({"base": toy.echo(), "rates": "alternating 0.5/beta, 0.9/beta", "beta": beta}),
                &run,
            )?;
        }
        let kernel = random_kernel(KERNEL_N, cfg.seed_or(0))?;
        let lh = KERNEL_LAMBDA_HATS[1];
        let kr = kernel_run(&kernel, KERNEL_ETA, 0.0, lh, toy.steps)?;
        let id = iteravg_core::oracles::identity_check(&kr.plain, &kr.reg, &kr.scheme)?;
        let mut rep = Report::new(
            "verify-identity/kernel",
            json!({"n": KERNEL_N, "eta": KERNEL_ETA, "lambda": 0.0, "lambda_hat": lh, "steps": toy.steps}),
        );
        rep.rows = kr.rows();
        rep.checks = vec![CheckReport::new("kernel/identity", json!({}), id.max, tol)];
        reports.push(rep);
        Ok(reports)
    }
}
