use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use crate::stats::RateFit;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Plot-ready numeric table. Written as `series.csv` and embedded in the
/// JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|x| x.to_string())).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// One pass/fail claim with the tolerance it was judged against and every
/// number needed to recompute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub claim: String,
    pub pass: bool,
    pub tolerance: String,
    pub values: BTreeMap<String, f64>,
}

impl Verdict {
    pub fn new(claim: &str, pass: bool, tolerance: impl Into<String>) -> Self {
        Self {
            claim: claim.to_string(),
            pass,
            tolerance: tolerance.into(),
            values: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.values.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub wall_clock_seconds: f64,
    pub events: u64,
    pub replicas: u64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    pub table: Table,
    pub rate_fit: Option<RateFit>,
    pub verdicts: Vec<Verdict>,
    pub telemetry: Telemetry,
    pub pass: bool,
}

impl ExperimentReport {
    pub fn verdict(&self, claim: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.claim == claim)
    }

    pub fn summary_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .verdicts
            .iter()
            .map(|v| format!("[{}] {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.claim, v.tolerance))
            .collect();
        if let Some(fit) = &self.rate_fit {
            let theory = fit.lambda_theory.map(|l| format!(", theory {l:.6}")).unwrap_or_default();
            lines.push(format!("rate fit: {:.6} ± {:.6}{theory}", fit.lambda_hat, fit.stderr));
        }
        lines.push(format!(
            "{} replicas, {} events, {:.2}s on {} threads",
            self.telemetry.replicas, self.telemetry.events, self.telemetry.wall_clock_seconds, self.telemetry.threads
        ));
        lines
    }
}
