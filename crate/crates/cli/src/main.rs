use std::process::ExitCode;

use clap::{Args, Command, FromArgMatches};
use iteravg_cli::config::{CommonArgs, ExperimentConfig};
use iteravg_cli::{experiments, runner};

fn cli() -> Command {
    let mut cmd = Command::new("iteravg")
        .about("Recover l2-regularized solutions from one optimization path, and check the claims")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for name in experiments::experiment_names() {
        let exp = experiments::experiment(name).expect("registered");
        cmd = cmd.subcommand(CommonArgs::augment_args(
            Command::new(name).about(exp.about()),
        ));
    }
    cmd
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let outcome = CommonArgs::from_arg_matches(sub)
        .map_err(anyhow::Error::from)
        .and_then(|args| ExperimentConfig::from_args(name, &args))
        .and_then(|cfg| runner::run_experiment(name, &cfg));
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    for c in outcome.checks() {
        println!("{}", runner::check_line(c));
    }
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    println!("{}: {:.3} s", outcome.experiment, outcome.wall_clock_secs);
    let failed = outcome.failed();
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        let diag = serde_json::json!({"experiment": outcome.experiment, "failed": failed});
        eprintln!(
            "{}",
            serde_json::to_string_pretty(&diag).unwrap_or_default()
        );
        ExitCode::from(1)
    }
}
