use iteravg_core::averaging::{self, WeightScheme};
use iteravg_core::data_io::{Report, ReportRow};
use iteravg_core::linalg;
use iteravg_core::optimizers::{sgd_run, LrSchedule, PathRecord, RateKind, RunConfig};
use iteravg_core::oracles::{self, CheckReport};
use iteravg_core::problems::{self, KernelProblem, Problem, Regularizer};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::common::{l1_dist, scalar_weight};
use super::Experiment;
use crate::config::ExperimentConfig;

pub struct KernelDemo;

pub(crate) const KERNEL_N: usize = 30;
pub(crate) const KERNEL_ETA: f64 = 0.2;
pub(crate) const KERNEL_STEPS: usize = 500;
pub(crate) const KERNEL_LAMBDA_HATS: [f64; 3] = [0.5, 1.0, 2.0];
// spectrum of the random Gram matrix
const MU_MIN: f64 = 0.5;
const MU_MAX: f64 = 2.0;

/// `K = U diag(μ) Uᵀ` with `U` Haar-random and `μ` evenly spaced, plus
/// uniform targets.
pub(crate) fn random_kernel(n: usize, seed: u64) -> iteravg_core::Result<KernelProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = linalg::random_orthogonal(n, &mut rng);
    let mu = DVector::from_fn(n, |i, _| {
        if n == 1 {
            MU_MAX
        } else {
            MU_MIN + (MU_MAX - MU_MIN) * i as f64 / (n - 1) as f64
        }
    });
    let k = &u * DMatrix::from_diagonal(&mu) * u.transpose();
    let k = (&k + k.transpose()) * 0.5;
    let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    KernelProblem::new(k, y)
}

pub(crate) struct KernelRun {
    pub lambda_hat: f64,
    pub plain: PathRecord,
    pub reg: PathRecord,
    pub scheme: WeightScheme,
    pub averaged: Vec<DVector<f64>>,
}

pub(crate) fn kernel_run(
    kernel: &KernelProblem,
    eta: f64,
    lambda: f64,
    lambda_hat: f64,
    steps: usize,
) -> anyhow::Result<KernelRun> {
    let problem: Problem = kernel.clone().into();
    let base_reg = if lambda > 0.0 {
        Regularizer::l2(lambda)?
    } else {
        Regularizer::None
    };
    let beta = problems::smoothness(&problem, &base_reg)?;
    let schedule = LrSchedule::new(RateKind::Constant(eta), lambda, beta)?;
    let cfg = RunConfig::deterministic(steps).with_kernel_reference(lambda);
    let plain = sgd_run(&problem, &base_reg, &schedule, &cfg)?;
    let reg = sgd_run(&problem, &Regularizer::l2(lambda_hat)?, &schedule, &cfg)?;
    let scheme = averaging::weights_kernel(kernel, &schedule, lambda, lambda_hat, steps)?;
    let averaged = averaging::averaged_path(&scheme, &plain.iterates)?;
    Ok(KernelRun {
        lambda_hat,
        plain,
        reg,
        scheme,
        averaged,
    })
}

impl KernelRun {
    pub fn rows(&self) -> Vec<ReportRow> {
        let n = self.plain.dim();
        (0..self.plain.len())
            .map(|k| ReportRow {
                iter: k,
                err_plain_vs_reg_l1: l1_dist(&self.plain.iterates[k], &self.reg.iterates[k]),
                err_avg_vs_reg_l1: l1_dist(&self.averaged[k], &self.reg.iterates[k]),
                p_k: scalar_weight(&self.scheme, k, n),
            })
            .collect()
    }

    /// Distance to `(K + λ̂I)⁻¹y` measured on the range of `K`.
    pub fn limit_error(&self, kernel: &KernelProblem) -> anyhow::Result<f64> {
        let target = oracles::kernel_solution(kernel, self.lambda_hat)?;
        let got = self.averaged.last().expect("nonempty");
        Ok(linalg::inf_norm(
            &(oracles::project_range(kernel, got) - oracles::project_range(kernel, &target)),
        ))
    }
}

impl Experiment for KernelDemo {
    fn name(&self) -> &'static str {
        "kernel-demo"
    }

    fn about(&self) -> &'static str {
        "kernel ridge regression: averaging one dual GD path with matrix weights for several lambda_hat"
    }

    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<Vec<Report>> {
        let eta = cfg.eta_or(KERNEL_ETA);
        let lambda = cfg.lambda_or(0.0)?;
        let steps = cfg.steps_or(KERNEL_STEPS);
        let seed = cfg.seed_or(0);
        let hats = cfg
            .lambda_hat
            .clone()
            .unwrap_or_else(|| KERNEL_LAMBDA_HATS.to_vec());
        let kernel = random_kernel(KERNEL_N, seed)?;
        let mut reports = Vec::new();
        for &lh in &hats {
            let run = kernel_run(&kernel, eta, lambda, lh, steps)?;
            let echo = json!({"n": KERNEL_N, "eta": eta, "lambda": lambda, "lambda_hat": lh, "steps": steps, "seed": seed,
                              "spectrum": [MU_MIN, MU_MAX], "P_k_column": "mean over eigendirections"});
            let mut rep = Report::new(format!("kernel-demo/lambda_hat={lh}"), echo);
            rep.rows = run.rows();
            let id = oracles::identity_check(&run.plain, &run.reg, &run.scheme)?;
            rep.checks = vec![
                CheckReport::new(
                    format!("kernel/lambda_hat={lh}/identity"),
                    json!({}),
                    id.max,
                    cfg.tolerance("identity", 1e-10),
                ),
                CheckReport::new(
                    format!("kernel/lambda_hat={lh}/limit"),
                    json!({"norm": "inf", "projected": true}),
                    run.limit_error(&kernel)?,
                    cfg.tolerance("limit", 1e-6),
                ),
            ];
            reports.push(rep);
        }
        Ok(reports)
    }
}
