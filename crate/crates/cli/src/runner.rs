//! Runs a registered experiment, times it and writes its reports.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use iteravg_core::data_io::{self, Report};
use iteravg_core::oracles::CheckReport;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::experiments;

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug)]
pub struct Outcome {
    pub experiment: String,
    pub reports: Vec<Report>,
    pub wall_clock_secs: f64,
    /// Files written under the output directory.
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn checks(&self) -> impl Iterator<Item = &CheckReport> {
        self.reports.iter().flat_map(|r| r.checks.iter())
    }

    pub fn passed(&self) -> bool {
        self.reports.iter().all(Report::passed)
    }

    pub fn failed(&self) -> Vec<&CheckReport> {
        self.checks().filter(|c| !c.pass).collect()
    }
}

/// File name for a report id such as `demo2d/gd`.
pub fn report_file_name(id: &str, format: data_io::Format) -> String {
    let stem: String = id
        .chars()
        .map(|c| if c == '/' || c == '\\' { '_' } else { c })
        .collect();
    format!("{stem}.{}", format.extension())
}

pub fn run_experiment(name: &str, cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let exp = experiments::experiment(name).with_context(|| {
        format!(
            "unknown experiment `{name}`; known: {}",
            experiments::experiment_names().join(", ")
        )
    })?;
    let start = Instant::now();
    let mut reports = exp.run(cfg)?;
    let secs = start.elapsed().as_secs_f64();
    for r in &mut reports {
        r.wall_clock_secs = secs;
    }
    let mut files = Vec::new();
    if let Some(out) = &cfg.out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let format = cfg.format();
        for r in &reports {
            let path = out.join(report_file_name(&r.experiment, format));
            data_io::write_report(r, &path, format)
                .with_context(|| format!("writing {}", path.display()))?;
            files.push(path);
        }
        let checks: Vec<&CheckReport> = reports.iter().flat_map(|r| r.checks.iter()).collect();
        let summary = json!({
            "experiment": name,
            "config": cfg,
            "wall_clock_secs": secs,
            "passed": checks.iter().all(|c| c.pass),
            "checks": checks,
        });
        let path = out.join(SUMMARY_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&summary)?)
            .with_context(|| format!("writing {}", path.display()))?;
        files.push(path);
    }
    Ok(Outcome {
        experiment: name.to_string(),
        reports,
        wall_clock_secs: secs,
        files,
    })
}

pub fn check_line(c: &CheckReport) -> String {
    format!(
        "{} {} residual={:e} threshold={:e}",
        if c.pass { "PASS" } else { "FAIL" },
        c.check,
        c.residual,
        c.threshold
    )
}
