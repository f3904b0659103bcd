//! `herds`: run a simulation or estimator and write `manifest.json`,
//! `results.csv` and `report.json` into the output directory.
//!
//! Exit status: 0 on success, 2 on invalid input, 3 when `--check` is set
//! and a check fails, 1 on any other error. Errors are printed to stderr as
//! one JSON object.

mod experiment;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use experiment::Experiment;
use output::{write_all, Manifest, ValidationError};

#[derive(Parser, Debug)]
#[command(name = "herds", version, about = "Herds process and dynamic-graph contact process experiments")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "HERDS_OUT_DIR", default_value = "herds-out")]
    out: PathBuf,
    /// Master seed; every replica stream is derived from it.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Exit with status 3 if any check in the report fails.
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    #[command(flatten)]
    Run(Experiment),
    /// Rerun the experiment recorded in a manifest, with its seed.
    Replay {
        manifest: PathBuf,
    },
}

fn fail(code: u8, body: serde_json::Value) -> ExitCode {
    eprintln!("{body}");
    ExitCode::from(code)
}

fn classify(e: &anyhow::Error) -> Option<ValidationError> {
    if let Some(v) = e.downcast_ref::<ValidationError>() {
        return Some(v.clone());
    }
    match e.downcast_ref::<herds_core::Error>()? {
        herds_core::Error::InvalidParameter { field, reason } => Some(ValidationError {
            field: field.to_string(),
            message: reason.clone(),
        }),
        herds_core::Error::OddHalfEdges(nd) => Some(ValidationError {
            field: "n".into(),
            message: format!("n*d = {nd} is odd"),
        }),
        _ => None,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            return fail(2, json!({ "error": "usage", "message": e.to_string().trim_end() }));
        }
    };
    let manifest = match cli.command {
        Command::Run(exp) => Manifest::new(exp, cli.seed),
        Command::Replay { manifest } => match Manifest::load(&manifest) {
            Ok(m) => m,
            Err(e) => return report_error(&e),
        },
    };
    let outcome = match manifest.config.run(manifest.master_seed) {
        Ok(o) => o,
        Err(e) => return report_error(&e),
    };
    if let Err(e) = write_all(&cli.out, &manifest, &outcome) {
        return report_error(&e);
    }
    for c in &outcome.checks {
        println!("{:<40} {}", c.name, if c.passed { "pass" } else { "FAIL" });
    }
    println!("wrote {}", cli.out.display());
    if cli.check && !outcome.passed() {
        let failed: Vec<&str> = outcome.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return fail(3, json!({ "error": "check_failed", "failed": failed }));
    }
    ExitCode::SUCCESS
}

fn report_error(e: &anyhow::Error) -> ExitCode {
    match classify(e) {
        Some(v) => fail(2, json!({ "error": "validation", "field": v.field, "message": v.message })),
        None => fail(1, json!({ "error": "runtime", "message": format!("{e:#}") })),
    }
}
