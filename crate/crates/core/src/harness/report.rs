//! Experiment records, per-cell summaries and their CSV/JSON emission.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::stats::Summary;
use crate::error::{invalid, Error, Result};
use crate::report::{round6, sig6};
use crate::services::StrategyMode;

pub const FORMAT_VERSION: u32 = 1;

pub const SCALING_HEADER: [&str; 7] = ["size", "mode", "trial", "seed", "evaluations", "wall_time_s", "xi"];
pub const STRATEGY_HEADER: [&str; 12] = [
    "size",
    "mode",
    "trial",
    "seed",
    "evaluations",
    "cst_dbm",
    "tpc_dbm",
    "cs_a",
    "cs_b",
    "cs_c",
    "cs_d",
    "xi",
];
pub const TWINNING_HEADER: [&str; 11] = [
    "interval_s",
    "regime",
    "trial",
    "seed",
    "decisions",
    "switches",
    "t_mbps",
    "l_ms",
    "pl",
    "c",
    "realized_xi",
];
pub const SUMMARY_HEADER: [&str; 10] = [
    "size", "mode", "interval_s", "regime", "metric", "n", "min", "max", "mean", "stddev",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Scaling,
    Strategy,
    Twinning,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Strategy => "strategy",
            ExperimentKind::Twinning => "twinning",
        }
    }

    /// Stem of the per-trial CSV.
    pub fn records_stem(self) -> &'static str {
        match self {
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Strategy => "strategy_xi",
            ExperimentKind::Twinning => "twinning",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaling" => Ok(ExperimentKind::Scaling),
            "strategy" => Ok(ExperimentKind::Strategy),
            "twinning" => Ok(ExperimentKind::Twinning),
            _ => Err(invalid(format!("unknown experiment {s:?}"))),
        }
    }
}

/// Configuration-selection regime of the twinning experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Scenario A only.
    AOnly,
    /// Every configured scenario with the configured weights.
    All,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::AOnly => "a-only",
            Regime::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub size: usize,
    pub mode: StrategyMode,
    pub trial: usize,
    pub seed: u64,
    pub evaluations: usize,
    pub wall_time_s: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRecord {
    pub size: usize,
    pub mode: StrategyMode,
    pub trial: usize,
    pub seed: u64,
    pub evaluations: usize,
    pub cst_dbm: f64,
    pub tpc_dbm: f64,
    pub cs_a: Option<f64>,
    pub cs_b: Option<f64>,
    pub cs_c: Option<f64>,
    pub cs_d: Option<f64>,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinningRecord {
    pub interval_s: f64,
    pub regime: Regime,
    pub trial: usize,
    pub seed: u64,
    /// Batches the twin acted on.
    pub decisions: usize,
    /// Radio changes pushed to the network.
    pub switches: usize,
    pub t_mbps: f64,
    pub l_ms: f64,
    pub pl: f64,
    pub c: f64,
    pub realized_xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub size: Option<usize>,
    pub mode: Option<StrategyMode>,
    pub interval_s: Option<f64>,
    pub regime: Option<Regime>,
    pub metric: String,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Outcome of one directional comparison over the trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalCheck {
    pub name: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub experiment: ExperimentKind,
    pub incomplete: bool,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scaling: Vec<ScalingRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strategy: Vec<StrategyRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub twinning: Vec<TwinningRecord>,
    pub cells: Vec<CellSummary>,
    pub checks: Vec<DirectionalCheck>,
}

impl ExperimentReport {
    pub fn new(experiment: ExperimentKind, master_seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            experiment,
            incomplete: false,
            master_seed,
            scaling: Vec::new(),
            strategy: Vec::new(),
            twinning: Vec::new(),
            cells: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn record_count(&self) -> usize {
        self.scaling.len() + self.strategy.len() + self.twinning.len()
    }

    pub fn check(&self, name: &str) -> Option<&DirectionalCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn records_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let opt = |v: Option<f64>| v.map(sig6).unwrap_or_default();
        match self.experiment {
            ExperimentKind::Scaling => {
                w.write_record(SCALING_HEADER)?;
                for r in &self.scaling {
                    w.write_record([
                        r.size.to_string(),
                        r.mode.to_string(),
                        r.trial.to_string(),
                        r.seed.to_string(),
                        r.evaluations.to_string(),
                        sig6(r.wall_time_s),
                        sig6(r.xi),
                    ])?;
                }
            }
            ExperimentKind::Strategy => {
                w.write_record(STRATEGY_HEADER)?;
                for r in &self.strategy {
                    w.write_record([
                        r.size.to_string(),
                        r.mode.to_string(),
                        r.trial.to_string(),
                        r.seed.to_string(),
                        r.evaluations.to_string(),
                        sig6(r.cst_dbm),
                        sig6(r.tpc_dbm),
                        opt(r.cs_a),
                        opt(r.cs_b),
                        opt(r.cs_c),
                        opt(r.cs_d),
                        sig6(r.xi),
                    ])?;
                }
            }
            ExperimentKind::Twinning => {
                w.write_record(TWINNING_HEADER)?;
                for r in &self.twinning {
                    w.write_record([
                        sig6(r.interval_s),
                        r.regime.to_string(),
                        r.trial.to_string(),
                        r.seed.to_string(),
                        r.decisions.to_string(),
                        r.switches.to_string(),
                        sig6(r.t_mbps),
                        sig6(r.l_ms),
                        sig6(r.pl),
                        sig6(r.c),
                        sig6(r.realized_xi),
                    ])?;
                }
            }
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn summary_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SUMMARY_HEADER)?;
        for c in &self.cells {
            let s = &c.summary;
            w.write_record([
                c.size.map(|v| v.to_string()).unwrap_or_default(),
                c.mode.map(|m| m.to_string()).unwrap_or_default(),
                c.interval_s.map(sig6).unwrap_or_default(),
                c.regime.map(|r| r.to_string()).unwrap_or_default(),
                c.metric.clone(),
                s.n.to_string(),
                sig6(s.min),
                sig6(s.max),
                sig6(s.mean),
                sig6(s.stddev),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    /// Pretty JSON with every float at 6 significant digits.
    pub fn to_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        round_floats(&mut v);
        let mut s = serde_json::to_string_pretty(&v)?;
        s.push('\n');
        Ok(s)
    }
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64().and_then(|x| serde_json::Number::from_f64(round6(x))) {
                *n = x;
            }
        }
        Value::Array(xs) => xs.iter_mut().for_each(round_floats),
        Value::Object(m) => m.values_mut().for_each(round_floats),
        _ => {}
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Write the report into `dir`: `<records>.csv` plus `<records>_summary.csv`
/// for CSV, `<experiment>.json` for JSON.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let stem = report.experiment.records_stem();
    let files: Vec<(PathBuf, Vec<u8>)> = match format {
        ReportFormat::Csv => vec![
            (dir.join(format!("{stem}.csv")), report.records_csv()?),
            (dir.join(format!("{stem}_summary.csv")), report.summary_csv()?),
        ],
        ReportFormat::Json => vec![(
            dir.join(format!("{}.json", report.experiment.name())),
            report.to_json()?.into_bytes(),
        )],
    };
    let mut out = Vec::new();
    for (path, bytes) in files {
        std::fs::write(&path, bytes)?;
        out.push(path);
    }
    Ok(out)
}
