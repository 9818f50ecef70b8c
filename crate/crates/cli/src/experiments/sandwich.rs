use iteravg_core::averaging;
use iteravg_core::data_io::{self, Report, ReportRow};
use iteravg_core::optimizers::{sgd_run, LrSchedule, RunConfig};
use iteravg_core::oracles::{self, CheckReport};
use iteravg_core::problems::{self, LogisticProblem, Problem, Regularizer, Samples};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use super::common::{l1_dist, TOY_STEPS};
use super::Experiment;
use crate::config::ExperimentConfig;

pub struct Sandwich;

const SAMPLES: usize = 200;
const FEATURES: usize = 5;
const CLASSES: usize = 2;
const BASE_RIDGE: f64 = 1.0;
// the envelope constant is fitted on the first steps only
const FIT_UNTIL: usize = 50;

/// Gaussian features with labels drawn from a random softmax teacher.
pub(crate) fn teacher_logistic(
    n: usize,
    d: usize,
    c: usize,
    base_ridge: f64,
    seed: u64,
) -> iteravg_core::Result<LogisticProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let teacher = DMatrix::from_fn(d, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let logits = &x * &teacher;
    let labels: Vec<usize> = logits
        .row_iter()
        .map(|row| {
            let m = row.max();
            let p: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let mut u = rng.random::<f64>() * p.iter().sum::<f64>();
            for (j, pj) in p.iter().enumerate() {
                if u < *pj {
                    return j;
                }
                u -= pj;
            }
            c - 1
        })
        .collect();
    LogisticProblem::new(Samples::new(x, data_io::one_hot(&labels, c)?)?, base_ridge)
}

impl Experiment for Sandwich {
    fn name(&self) -> &'static str {
        "sandwich"
    }

    fn about(&self) -> &'static str {
        "general strongly convex case: the averaged GD path between two regularized paths, and its limit box"
    }

    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<Vec<Report>> {
        let seed = cfg.seed_or(0);
        let steps = cfg.steps_or(TOY_STEPS);
        let base_ridge = cfg.base_ridge.unwrap_or(BASE_RIDGE);
        let problem: Problem =
            teacher_logistic(SAMPLES, FEATURES, CLASSES, base_ridge, seed)?.into();
        let bounds = problems::convexity_bounds(&problem, &Regularizer::None)?;
        let (a, b) = (bounds.alpha, bounds.beta);
        let eta = cfg.eta_or(0.5 * (1.0 / (2.0 * b - a) + 1.0 / b));
        let gamma = cfg.gamma.unwrap_or(0.5 * eta / (eta * (b - a) + 1.0));
        let (l1, l2) = oracles::lambda_pair(eta, gamma, &bounds)?;

        let scheme = averaging::weights_general(eta, gamma, steps)?;
        let run_cfg = RunConfig::deterministic(steps);
        let plain = sgd_run(
            &problem,
            &Regularizer::None,
            &LrSchedule::constant(eta),
            &run_cfg,
        )?;
        let averaged = averaging::averaged_path(&scheme, &plain.iterates)?;
        // regularized paths move at rate γ: η' = γ/(1 − λγ) couples to it
        let reg_path = |l: f64| -> anyhow::Result<Vec<DVector<f64>>> {
            let eta_r = gamma / (1.0 - l * gamma);
            Ok(sgd_run(
                &problem,
                &Regularizer::l2(l)?,
                &LrSchedule::constant(eta_r),
                &run_cfg,
            )?
            .iterates)
        };
        let (p1, p2) = (reg_path(l1)?, reg_path(l2)?);
        let mid = 0.5 * (l1 + l2);
        let pm = reg_path(mid)?;
        let bs = oracles::bounding_sequences(&problem, &bounds, eta, gamma, l1, l2, steps)?;
        let sw = oracles::sandwich_check(&averaged, &p1, &p2, &bs, &scheme)?;

        let c = (1.0 - gamma * (a + l1))
            .max(1.0 - gamma * (a + l2))
            .max(gamma / eta);
        let excess: Vec<f64> = averaged
            .iter()
            .map(|w| (w - &bs.m).norm() - bs.d.norm())
            .collect();
        let fit = (1..=FIT_UNTIL.min(steps))
            .map(|k| excess[k] / c.powi(k as i32))
            .fold(0.0, f64::max);
        let (env_resid, env_k) = (1..=steps)
            .map(|k| (excess[k] - fit * c.powi(k as i32), k))
            .fold(
                (f64::NEG_INFINITY, 0),
                |acc, x| if x.0 > acc.0 { x } else { acc },
            );

        let echo = json!({
            "samples": SAMPLES, "features": FEATURES, "classes": CLASSES, "parameters": FEATURES * CLASSES,
            "base_ridge": base_ridge, "seed": seed, "steps": steps, "alpha": a, "beta": b,
            "eta": eta, "gamma": gamma, "lambda1": l1, "lambda2": l2, "lambda_mid": mid,
            "excluded_coords": bs.excluded(), "rows": "regularized path at lambda_mid",
        });
        let mut rep = Report::new("sandwich/gd", echo);
        rep.rows = (0..=steps)
            .map(|k| ReportRow {
                iter: k,
                err_plain_vs_reg_l1: l1_dist(&plain.iterates[k], &pm[k]),
                err_avg_vs_reg_l1: l1_dist(&averaged[k], &pm[k]),
                p_k: scheme.cumulative(k),
            })
            .collect();
        rep.checks = vec![
            CheckReport::new(
                "sandwich/slack",
                json!({"worst_slack": sw.worst_slack, "k": sw.worst_k, "coord": sw.worst_coord}),
                -sw.worst_slack,
                cfg.tolerance("slack", 1e-8),
            ),
            CheckReport::new(
                "sandwich/envelope",
                json!({"C": c, "M": fit, "fit_until": FIT_UNTIL, "d_norm": bs.d.norm(), "worst_k": env_k}),
                env_resid,
                cfg.tolerance("envelope", 1e-8),
            ),
        ];
        Ok(vec![rep])
    }
}
