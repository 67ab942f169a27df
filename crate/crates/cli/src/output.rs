//! Result emission: one JSON record and one CSV table per run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

/// Columnar table; rows are written in the order given.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub headers: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&'static str]) -> Self {
        Self {
            headers: headers.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }
}

/// Renders a number in the shortest form that round-trips.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// What a subcommand produced.
#[derive(Debug)]
pub struct Outcome {
    pub result: Value,
    pub table: Table,
    /// Invariant or inequality violations; non-empty means exit status 2.
    pub violations: Vec<String>,
}

impl Outcome {
    pub fn new(result: impl Serialize, table: Table) -> Result<Self> {
        Ok(Self {
            result: serde_json::to_value(result)?,
            table,
            violations: Vec::new(),
        })
    }

    pub fn check(&mut self, ok: bool, message: impl Into<String>) {
        if !ok {
            self.violations.push(message.into());
        }
    }
}

pub struct Written {
    pub json: PathBuf,
    pub csv: PathBuf,
}

pub fn write(
    dir: &Path,
    subcommand: &str,
    config: &ExperimentConfig,
    outcome: &Outcome,
    wall: Duration,
) -> Result<Written> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let record = json!({
        "subcommand": subcommand,
        "status": if outcome.violations.is_empty() { "ok" } else { "violation" },
        "violations": outcome.violations,
        "config": config,
        "result": outcome.result,
        "metadata": {
            "version": env!("CARGO_PKG_VERSION"),
            "wall_time_s": wall.as_secs_f64(),
            "unix_time": unix,
        },
    });
    let json_path = dir.join(format!("{subcommand}.json"));
    let mut text = serde_json::to_string_pretty(&record)?;
    text.push('\n');
    fs::write(&json_path, text).with_context(|| format!("cannot write {}", json_path.display()))?;

    let csv_path = dir.join(format!("{subcommand}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)
        .with_context(|| format!("cannot write {}", csv_path.display()))?;
    w.write_record(&outcome.table.headers)?;
    for row in &outcome.table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(Written {
        json: json_path,
        csv: csv_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1e-300, 16.0, -2.5e7] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }
}
