use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use iteravg_core::data_io::Format;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Everything an experiment may read. Unset fields fall back to the
/// experiment's own defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub lambda: Option<Vec<f64>>,
    pub eta: Option<f64>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub batch: Option<usize>,
    pub deterministic: Option<bool>,
    pub limit: Option<usize>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub theta: Option<f64>,
    pub sigma: Option<f64>,
    pub delta: Option<f64>,
    pub seeds: Option<usize>,
    pub p_success: Option<f64>,
    pub lambda_hat: Option<Vec<f64>>,
    pub base_ridge: Option<f64>,
    pub tolerances: BTreeMap<String, f64>,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for reports
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Comma-separated regularization strengths
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub lambda: Option<Vec<f64>>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Full gradients instead of mini-batches
    #[arg(long)]
    pub deterministic: bool,
    /// Number of MNIST rows to load
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<Format>,
    /// Directory holding the MNIST IDX files
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Stored path file (sweep) or checkpoint directory (avg-geometric)
    #[arg(long)]
    pub input: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!(
                "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                path.display(),
                cfg.schema_version
            );
        }
        Ok(cfg)
    }

    /// Config file (if any) with command-line flags layered on top.
    pub fn from_args(experiment: &str, args: &CommonArgs) -> anyhow::Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => Self::load(p)?,
            None => Self {
                schema_version: SCHEMA_VERSION,
                ..Default::default()
            },
        };
        if let Some(e) = &cfg.experiment {
            if e != experiment {
                bail!("config is for experiment `{e}`, not `{experiment}`");
            }
        }
        cfg.experiment = Some(experiment.to_string());
        macro_rules! layer {
            ($($field:ident <- $arg:expr),* $(,)?) => {
                $(if let Some(v) = $arg.clone() { cfg.$field = Some(v); })*
            };
        }
        layer!(
            seed <- args.seed,
            steps <- args.steps,
            lambda <- args.lambda,
            eta <- args.eta,
            alpha <- args.alpha,
            batch <- args.batch,
            limit <- args.limit,
            format <- args.format,
            out <- args.out,
            data_dir <- args.data,
            input <- args.input,
        );
        if args.deterministic {
            cfg.deterministic = Some(true);
        }
        Ok(cfg)
    }

    pub fn tolerance(&self, name: &str, default: f64) -> f64 {
        self.tolerances.get(name).copied().unwrap_or(default)
    }

    pub fn seed_or(&self, d: u64) -> u64 {
        self.seed.unwrap_or(d)
    }

    pub fn steps_or(&self, d: usize) -> usize {
        self.steps.unwrap_or(d)
    }

    pub fn eta_or(&self, d: f64) -> f64 {
        self.eta.unwrap_or(d)
    }

    pub fn alpha_or(&self, d: f64) -> f64 {
        self.alpha.unwrap_or(d)
    }

    pub fn lambdas_or(&self, d: &[f64]) -> Vec<f64> {
        self.lambda.clone().unwrap_or_else(|| d.to_vec())
    }

    /// The single λ of experiments that take one.
    pub fn lambda_or(&self, d: f64) -> anyhow::Result<f64> {
        match self.lambda.as_deref() {
            None => Ok(d),
            Some([l]) => Ok(*l),
            Some(ls) => bail!("this experiment takes one lambda, got {}", ls.len()),
        }
    }

    pub fn deterministic(&self) -> bool {
        self.deterministic.unwrap_or(false)
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or(Format::Csv)
    }
}
