//! Experiments, registered by subcommand name.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use iteravg_core::data_io::Report;

use crate::config::ExperimentConfig;

pub mod common;
mod demo2d;
mod geometric;
mod kernel;
mod l1_hull;
mod mnist;
mod sandwich;
mod sweep;
mod variance;
mod verify;

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;
    fn about(&self) -> &'static str;
    /// Runs to completion and returns one report per error curve; checks
    /// live inside the reports.
    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<Vec<Report>>;
}

fn registry() -> &'static BTreeMap<&'static str, Box<dyn Experiment>> {
    static REG: OnceLock<BTreeMap<&'static str, Box<dyn Experiment>>> = OnceLock::new();
    REG.get_or_init(|| {
        let all: Vec<Box<dyn Experiment>> = vec![
            Box::new(demo2d::Demo2d),
            Box::new(verify::VerifyIdentity),
            Box::new(mnist::MnistLinear),
            Box::new(mnist::MnistLogistic),
            Box::new(kernel::KernelDemo),
            Box::new(variance::VarianceMc),
            Box::new(sandwich::Sandwich),
            Box::new(l1_hull::L1Hull),
            Box::new(sweep::Sweep),
            Box::new(geometric::AvgGeometric),
        ];
        all.into_iter().map(|e| (e.name(), e)).collect()
    })
}

pub fn experiment(name: &str) -> Option<&'static dyn Experiment> {
    registry().get(name).map(|b| b.as_ref())
}

pub fn experiment_names() -> Vec<&'static str> {
    registry().keys().copied().collect()
}
