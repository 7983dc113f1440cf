use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use bilevel::benchmarks::GradCheckReport;
use bilevel::{ConvergenceFlag, ValidationReport};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
    AllEliminated,
    CheckFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Named {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermRecord {
    /// 1-based, as in the parameter names.
    pub rate: usize,
    pub term: usize,
    pub label: String,
    pub k: f64,
    pub energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundSummary {
    pub round: usize,
    pub n_active: usize,
    pub eliminated: usize,
    pub loss: f64,
    pub iterations: usize,
    pub convergence_flag: ConvergenceFlag,
    pub terms: Vec<TermRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckSummary {
    pub max_gradient_error: f64,
    pub max_jvp_error: f64,
    pub max_design_error: f64,
    pub gradient_tolerance: f64,
    pub jvp_tolerance: f64,
    pub passed: bool,
}

impl From<&GradCheckReport> for GradCheckSummary {
    fn from(r: &GradCheckReport) -> Self {
        Self {
            max_gradient_error: r.max_gradient_error,
            max_jvp_error: r.max_jvp_error,
            max_design_error: r.max_design_error,
            gradient_tolerance: r.gradient_tolerance,
            jvp_tolerance: r.jvp_tolerance,
            passed: r.passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

/// Everything a run produced. Field order is the JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub command: String,
    pub problem: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub convergence_flag: Option<ConvergenceFlag>,
    pub loss: Option<f64>,
    pub iterations: Option<usize>,
    pub linear: Vec<Named>,
    pub nonlinear: Vec<Named>,
    pub loss_trace: Vec<f64>,
    pub rounds: Vec<RoundSummary>,
    pub validation: Option<ValidationReport>,
    pub gradcheck: Option<GradCheckSummary>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// SHA-256 of the resolved configuration's JSON form.
pub fn config_hash(config: &RunConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

impl ResultRecord {
    pub fn new(config: &RunConfig, problem: &str) -> Self {
        Self {
            command: config.command.as_str().into(),
            problem: problem.into(),
            status: RunStatus::Ok,
            error: None,
            convergence_flag: None,
            loss: None,
            iterations: None,
            linear: Vec::new(),
            nonlinear: Vec::new(),
            loss_trace: Vec::new(),
            rounds: Vec::new(),
            validation: None,
            gradcheck: None,
            warnings: Vec::new(),
            provenance: Provenance {
                config_hash: config_hash(config),
                seed: config.seed,
                version: env!("CARGO_PKG_VERSION").into(),
                started_unix_ms: now_ms(),
                finished_unix_ms: 0,
            },
        }
    }

    pub fn write(&mut self, path: &Path) -> Result<(), CliError> {
        self.provenance.finished_unix_ms = now_ms();
        let json = serde_json::to_string_pretty(self).expect("record serializes");
        std::fs::write(path, json + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

pub fn named(names: &[String], values: impl IntoIterator<Item = f64>) -> Vec<Named> {
    names
        .iter()
        .zip(values)
        .map(|(n, v)| Named { name: n.clone(), value: v })
        .collect()
}
