use iteravg_core::data_io::Report;
use iteravg_core::optimizers::{sgd_run, LrSchedule, RunConfig};
use iteravg_core::oracles::{self, CheckReport};
use iteravg_core::problems::{Problem, Regularizer};
use serde_json::json;

use super::common::*;
use super::Experiment;
use crate::config::ExperimentConfig;

pub struct L1Hull;

const GRID: [f64; 6] = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0];

fn point(w: &nalgebra::DVector<f64>) -> [f64; 2] {
    [w[0], w[1]]
}

impl Experiment for L1Hull {
    fn name(&self) -> &'static str {
        "l1-hull"
    }

    fn about(&self) -> &'static str {
        "ridge solutions stay in the convex hull of the GD path, lasso solutions need not"
    }

    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<Vec<Report>> {
        let eta = cfg.eta_or(TOY_ETA);
        let steps = cfg.steps_or(TOY_STEPS);
        let theta = cfg.theta.unwrap_or(TOY_THETA);
        let grid = cfg.lambdas_or(&GRID);
        let quad = toy_problem(theta)?;
        let problem: Problem = quad.clone().into();
        let path = sgd_run(
            &problem,
            &Regularizer::None,
            &LrSchedule::constant(eta),
            &RunConfig::deterministic(steps),
        )?;
        let pts: Vec<[f64; 2]> = path.iterates.iter().map(point).collect();
        let mut ridge_out = Vec::new();
        let mut l1_out = Vec::new();
        let mut solutions = Vec::new();
        for &l in &grid {
            let ridge = oracles::ridge_solution(&quad, &Regularizer::l2(l)?)?.w_hat;
            let lasso = oracles::l1_prox_solution(&quad, l, 1e-12)?;
            let (ri, li) = (
                oracles::hull_contains(&pts, point(&ridge)),
                oracles::hull_contains(&pts, point(&lasso)),
            );
            if !ri {
                ridge_out.push(l);
            }
            if !li {
                l1_out.push(l);
            }
            solutions.push(json!({"lambda": l, "ridge": ridge.as_slice(), "ridge_inside": ri, "l1": lasso.as_slice(), "l1_inside": li}));
        }
        let echo = json!({"eta": eta, "steps": steps, "theta": theta, "lambdas": grid, "solutions": solutions,
                          "hull": oracles::convex_hull(&pts)});
        let mut rep = Report::new("l1-hull/gd", echo);
        rep.checks = vec![
            CheckReport::new(
                "ridge_inside_hull",
                json!({"outside": ridge_out}),
                ridge_out.len() as f64,
                0.0,
            ),
            CheckReport::new(
                "l1_outside_hull",
                json!({"outside": l1_out}),
                if l1_out.is_empty() { 1.0 } else { 0.0 },
                0.0,
            ),
        ];
        Ok(vec![rep])
    }
}
