use iteravg_core::averaging;
use iteravg_core::data_io::{Report, ReportRow};
use iteravg_core::optimizers::{coupled, GradientSource};
use iteravg_core::oracles::{self, CheckReport, DeviationKind};
use rayon::prelude::*;
use serde_json::json;

use super::common::*;
use super::demo2d::Toy;
use super::Experiment;
use crate::config::ExperimentConfig;

pub struct VarianceMc;

const SIGMA: f64 = 0.5;
const DELTA: f64 = 0.1;
const SEEDS: usize = 200;
// spectrum of the toy covariance
const TOY_MIN_EIG: f64 = 0.1;
const TOY_MAX_EIG: f64 = 1.0;

/// `‖S_K − S_K^det‖₂` of one noisy run plus its error rows.
struct SeedOutcome {
    deviation: f64,
    rows: Vec<ReportRow>,
}

fn epsilon(
    method: Method,
    toy: &Toy,
    sigma: f64,
    delta: f64,
) -> anyhow::Result<oracles::DeviationBound> {
    let gamma = coupled(toy.eta, toy.lambda);
    let b = match method {
        Method::Gd => oracles::variance_epsilon(
            DeviationKind::Sgd,
            sigma,
            delta,
            gamma,
            toy.lambda,
            TOY_MIN_EIG,
            TOY_MAX_EIG,
        )?,
        // with Q = Σ the whitened curvature is 1 in every direction
        Method::Pgd => oracles::variance_epsilon(
            DeviationKind::Psgd {
                q_norm: TOY_MAX_EIG,
            },
            sigma,
            delta,
            gamma,
            toy.lambda,
            1.0,
            1.0,
        )?,
        Method::Ngd => oracles::variance_epsilon(
            DeviationKind::Nsgd {
                eta: toy.eta,
                lambda_min: TOY_MIN_EIG,
            },
            sigma,
            delta,
            gamma,
            toy.lambda,
            toy.alpha,
            TOY_MAX_EIG,
        )?,
    };
    Ok(b)
}

fn weighted_final(run: &AveragedRun) -> anyhow::Result<nalgebra::DVector<f64>> {
    let sums = averaging::weighted_sums(&run.scheme, &run.plain.iterates)?;
    Ok(sums.last().expect("nonempty").clone())
}

impl Experiment for VarianceMc {
    fn name(&self) -> &'static str {
        "variance-mc"
    }

    fn about(&self) -> &'static str {
        "Monte Carlo frequency of the averaged sum leaving the Chebyshev radius under spherical gradient noise"
    }

    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<Vec<Report>> {
        let toy = Toy::from_config(cfg)?;
        let sigma = cfg.sigma.unwrap_or(SIGMA);
        let delta = cfg.delta.unwrap_or(DELTA);
        let seeds = cfg.seeds.unwrap_or(SEEDS);
        let base_seed = cfg.seed_or(0);
        if seeds == 0 {
            anyhow::bail!("seeds must be positive");
        }
        let mut reports = Vec::new();
        for method in Method::ALL {
            let bound = epsilon(method, &toy, sigma, delta)?;
            let (_, det) = toy.run(method, None)?;
            let center = weighted_final(&det)?;
            let outcomes: Vec<SeedOutcome> = (0..seeds)
                .into_par_iter()
                .map(|i| -> anyhow::Result<SeedOutcome> {
                    let (_, run) = toy.run_with(
                        method,
                        GradientSource::Injected {
                            sigma,
                            seed: base_seed + i as u64,
                        },
                    )?;
                    Ok(SeedOutcome {
                        deviation: (weighted_final(&run)? - &center).norm(),
                        rows: run.rows(),
                    })
                })
                .collect::<anyhow::Result<_>>()?;
            let exceed = outcomes
                .iter()
                .filter(|o| o.deviation > bound.epsilon)
                .count();
            let freq = exceed as f64 / seeds as f64;
            let max_dev = outcomes.iter().map(|o| o.deviation).fold(0.0, f64::max);
            let n = seeds as f64;
            let rows = (0..outcomes[0].rows.len())
                .map(|k| ReportRow {
                    iter: k,
                    err_plain_vs_reg_l1: outcomes
                        .iter()
                        .map(|o| o.rows[k].err_plain_vs_reg_l1)
                        .sum::<f64>()
                        / n,
                    err_avg_vs_reg_l1: outcomes
                        .iter()
                        .map(|o| o.rows[k].err_avg_vs_reg_l1)
                        .sum::<f64>()
                        / n,
                    p_k: outcomes[0].rows[k].p_k,
                })
                .collect();
            let label = method.label(true);
            let echo = json!({"toy": toy.echo(), "sigma": sigma, "delta": delta, "seeds": seeds, "base_seed": base_seed,
                              "epsilon": bound.epsilon, "bound": bound, "rows": "mean over seeds"});
            let mut rep = Report::new(format!("variance-mc/{label}"), echo);
            rep.rows = rows;
            rep.checks = vec![CheckReport::new(
                format!("{label}/exceed_frequency"),
                json!({"epsilon": bound.epsilon, "exceed": exceed, "max_deviation": max_dev}),
                freq,
                cfg.tolerance("exceed_frequency", 0.15),
            )];
            reports.push(rep);
        }
        Ok(reports)
    }
}
