use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::experiment::Experiment;

pub const SCHEMA_VERSION: u32 = 1;

/// A bad configuration value, reported with the field it came from.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ValidationError {}

pub fn reject(field: &str, message: impl Into<String>) -> anyhow::Error {
    ValidationError {
        field: field.to_string(),
        message: message.into(),
    }
    .into()
}

/// Everything needed to rerun an experiment byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub master_seed: u64,
    pub config: Experiment,
}

impl Manifest {
    pub fn new(config: Experiment, master_seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            config,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| reject("manifest", e.to_string()))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(reject(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", m.schema_version),
            ));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
}

/// What a subcommand hands back: CSV bytes, a JSON result and its checks.
pub struct Outcome {
    pub csv: Vec<u8>,
    pub result: Value,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn new<T: Serialize, S: Serialize>(rows: &[T], result: &S) -> Result<Self> {
        Ok(Self {
            csv: csv_bytes(rows)?,
            result: serde_json::to_value(result)?,
            checks: Vec::new(),
        })
    }

    pub fn check(mut self, name: &str, passed: bool) -> Self {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
        });
        self
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Serializes flat rows with a header line taken from the field names.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    anyhow::ensure!(!rows.is_empty(), "no rows to write");
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

#[derive(Serialize)]
struct Report<'a> {
    schema_version: u32,
    subcommand: &'a str,
    estimates: &'a str,
    checks_feed: &'a str,
    master_seed: u64,
    passed: bool,
    checks: &'a [Check],
    result: &'a Value,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_all(dir: &Path, manifest: &Manifest, outcome: &Outcome) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("manifest.json"), manifest)?;
    fs::write(dir.join("results.csv"), &outcome.csv).context("writing results.csv")?;
    let (estimates, checks_feed) = manifest.config.describe();
    let report = Report {
        schema_version: SCHEMA_VERSION,
        subcommand: manifest.config.name(),
        estimates,
        checks_feed,
        master_seed: manifest.master_seed,
        passed: outcome.passed(),
        checks: &outcome.checks,
        result: &outcome.result,
    };
    write_json(&dir.join("report.json"), &report)
}
