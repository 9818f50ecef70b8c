use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use iteravg_core::averaging;
use iteravg_core::data_io::{Report, ReportRow};
use iteravg_core::optimizers::PathRecord;
use iteravg_core::oracles::CheckReport;
use nalgebra::DVector;
use serde_json::json;

use super::common::l1_dist;
use super::Experiment;
use crate::config::ExperimentConfig;
use crate::runner::SUMMARY_FILE;

pub struct AvgGeometric;

const P_SUCCESS: f64 = 0.1;
pub const OUTPUT_FILE: &str = "geometric_average.json";

fn read_vector(path: &Path) -> anyhow::Result<DVector<f64>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Vec<f64> = serde_json::from_str(&text)
        .with_context(|| format!("{}: expected a JSON array of numbers", path.display()))?;
    Ok(DVector::from_vec(v))
}

/// Iterates from a directory: a single stored path contributes all its
/// iterates, otherwise each file contributes its last vector, in name order.
fn collect_iterates(dir: &Path) -> anyhow::Result<(Vec<DVector<f64>>, Vec<PathBuf>)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| {
        matches!(
            p.extension().and_then(|e| e.to_str()),
            Some("jsonl" | "json")
        ) && p
            .file_name()
            .is_some_and(|n| n != OUTPUT_FILE && n != SUMMARY_FILE)
    });
    files.sort();
    if files.is_empty() {
        bail!("no .jsonl paths or .json vectors in {}", dir.display());
    }
    let load = |p: &PathBuf| -> anyhow::Result<Vec<DVector<f64>>> {
        if p.extension().is_some_and(|e| e == "jsonl") {
            Ok(PathRecord::load(p)
                .with_context(|| format!("loading {}", p.display()))?
                .iterates)
        } else {
            Ok(vec![read_vector(p)?])
        }
    };
    let iterates = if files.len() == 1 {
        load(&files[0])?
    } else {
        files
            .iter()
            .map(|p| Ok(load(p)?.pop().expect("nonempty")))
            .collect::<anyhow::Result<_>>()?
    };
    if let Some(bad) = iterates.iter().position(|w| w.len() != iterates[0].len()) {
        bail!(
            "checkpoint {bad} has dimension {} but the first has {}",
            iterates[bad].len(),
            iterates[0].len()
        );
    }
    Ok((iterates, files))
}

impl Experiment for AvgGeometric {
    fn name(&self) -> &'static str {
        "avg-geometric"
    }

    fn about(&self) -> &'static str {
        "geometric weights over a directory of stored paths or checkpoint vectors"
    }

    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<Vec<Report>> {
        let dir = cfg
            .input
            .clone()
            .context("avg-geometric needs --input <dir>")?;
        let p = cfg.p_success.unwrap_or(P_SUCCESS);
        let (iterates, files) = collect_iterates(&dir)?;
        let k_max = iterates.len() - 1;
        let scheme = averaging::weights_geometric(p, k_max)?;
        let averaged = averaging::averaged_path(&scheme, &iterates)?;
        let fin = averaged.last().expect("nonempty");
        if let Some(out) = &cfg.out {
            std::fs::create_dir_all(out)?;
            let file = out.join(OUTPUT_FILE);
            std::fs::write(&file, serde_json::to_string_pretty(&fin.as_slice())?)
                .with_context(|| format!("writing {}", file.display()))?;
        }
        let valid = scheme.validate().is_ok();
        let drift = (scheme.cumulative(k_max) - 1.0).abs();
        let mut rep = Report::new(
            "avg-geometric/checkpoints",
            json!({"input": dir.display().to_string(), "files": files.len(), "iterates": iterates.len(), "p_success": p,
                   "rows": "errors against the final geometric average"}),
        );
        rep.rows = (0..=k_max)
            .map(|k| ReportRow {
                iter: k,
                err_plain_vs_reg_l1: l1_dist(&iterates[k], fin),
                err_avg_vs_reg_l1: l1_dist(&averaged[k], fin),
                p_k: scheme.cumulative(k),
            })
            .collect();
        rep.checks = vec![CheckReport::new(
            "weights_valid",
            json!({"validates": valid, "P_K": scheme.cumulative(k_max)}),
            if valid { drift } else { f64::INFINITY },
            cfg.tolerance("weights", 1e-12),
        )];
        Ok(vec![rep])
    }
}
