use std::time::Instant;

use anyhow::Context;
use iteravg_core::averaging::{self, RunningAverage};
use iteravg_core::data_io::{Report, ReportRow};
use iteravg_core::optimizers::{sgd_run, LrSchedule, PathRecord, RunConfig};
use iteravg_core::oracles::{self, CheckReport};
use iteravg_core::problems::{self, Problem, Regularizer};
use rayon::prelude::*;
use serde_json::json;

use super::common::*;
use super::Experiment;
use crate::config::ExperimentConfig;

pub struct Sweep;

const GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
// the smallest λ needs (1 + λη)^-K below 1e-6
const SWEEP_STEPS: usize = 20_000;
pub const PATH_FILE: &str = "path.jsonl";

struct Point {
    lambda: f64,
    averaged: nalgebra::DVector<f64>,
    p_final: f64,
    secs: f64,
}

fn average_stored(path: &PathRecord, lambda: f64) -> anyhow::Result<Point> {
    let start = Instant::now();
    let k_max = path.len() - 1;
    let scheme = averaging::weights_sgd_adaptive(&path.schedule, lambda, k_max)?;
    let mut acc = RunningAverage::new(path.dim());
    for (k, w) in path.iterates.iter().enumerate() {
        acc.update(k, w, scheme.increment(k))?;
    }
    Ok(Point {
        lambda,
        averaged: acc.finalize()?,
        p_final: acc.cumulative(),
        secs: start.elapsed().as_secs_f64(),
    })
}

impl Experiment for Sweep {
    fn name(&self) -> &'static str {
        "sweep"
    }

    fn about(&self) -> &'static str {
        "one stored GD path on the toy problem, re-averaged for a grid of lambda without re-optimizing"
    }

    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<Vec<Report>> {
        let theta = cfg.theta.unwrap_or(TOY_THETA);
        let quad = toy_problem(theta)?;
        let problem: Problem = quad.clone().into();
        let grid = cfg.lambdas_or(&GRID);
        let tmp;
        let (file, optimize_secs) = match &cfg.input {
            Some(p) => (p.clone(), 0.0),
            None => {
                let dir = match &cfg.out {
                    Some(d) => {
                        std::fs::create_dir_all(d)
                            .with_context(|| format!("creating {}", d.display()))?;
                        d.clone()
                    }
                    None => {
                        tmp = tempfile::tempdir()?;
                        tmp.path().to_path_buf()
                    }
                };
                let eta = cfg.eta_or(TOY_ETA);
                let beta = problems::smoothness(&problem, &Regularizer::None)?;
                let schedule =
                    LrSchedule::new(iteravg_core::optimizers::RateKind::Constant(eta), 0.0, beta)?;
                let start = Instant::now();
                let path = sgd_run(
                    &problem,
                    &Regularizer::None,
                    &schedule,
                    &RunConfig::deterministic(cfg.steps_or(SWEEP_STEPS)),
                )?;
                let secs = start.elapsed().as_secs_f64();
                let file = dir.join(PATH_FILE);
                path.save(&file)?;
                (file, secs)
            }
        };
        let start = Instant::now();
        let path =
            PathRecord::load(&file).with_context(|| format!("loading path {}", file.display()))?;
        if path.fingerprint != problem.fingerprint() {
            anyhow::bail!(
                "{} was recorded on a different problem (fingerprint {})",
                file.display(),
                path.fingerprint
            );
        }
        if path.lambda != 0.0 {
            anyhow::bail!(
                "{} is a regularized path (lambda = {}); sweep needs the plain one",
                file.display(),
                path.lambda
            );
        }
        let load_secs = start.elapsed().as_secs_f64();
        let points: Vec<Point> = grid
            .par_iter()
            .map(|&l| average_stored(&path, l))
            .collect::<anyhow::Result<_>>()?;
        let last = path.last();
        let mut rows = Vec::new();
        let mut checks = Vec::new();
        let mut timings = Vec::new();
        for (i, pt) in points.iter().enumerate() {
            let ridge = oracles::ridge_solution(&quad, &Regularizer::l2(pt.lambda)?)?.w_hat;
            rows.push(ReportRow {
                iter: i,
                err_plain_vs_reg_l1: l1_dist(last, &ridge),
                err_avg_vs_reg_l1: l1_dist(&pt.averaged, &ridge),
                p_k: pt.p_final,
            });
            checks.push(CheckReport::new(
                format!("lambda={}/limit", pt.lambda),
                json!({"norm": "inf", "ridge": ridge.as_slice(), "averaged": pt.averaged.as_slice()}),
                inf_dist(&pt.averaged, &ridge),
                cfg.tolerance("limit", 1e-6),
            ));
            timings.push(json!({"lambda": pt.lambda, "average_secs": pt.secs}));
        }
        let echo = json!({
            "path": file.display().to_string(), "steps": path.len() - 1, "schedule": path.schedule, "lambdas": grid,
            "optimize_secs": optimize_secs, "load_secs": load_secs, "timings": timings,
            "rows": "iter is the lambda index; errors against the ridge solution",
        });
        let mut rep = Report::new("sweep/gd", echo);
        rep.rows = rows;
        rep.checks = checks;
        Ok(vec![rep])
    }
}
