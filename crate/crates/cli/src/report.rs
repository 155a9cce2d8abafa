//! Report records and the exit codes derived from them.

use serde::{Deserialize, Serialize};

use syncnet_core::metrics::SynchronyReport;
use syncnet_core::passivity::{AnalysisMode, GainSet};
use syncnet_core::stability::{SynchronizationVerdict, VerdictStatus};

use crate::config::ScenarioConfig;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Check,
    Simulate,
}

/// The observer's injection link read two ways: reduced-Laplacian connectivity
/// `q`, and the doubled value `2q` behind the closed-form condition
/// `0.5 + 2q > c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverReport {
    pub q: f64,
    pub c: f64,
    pub lambda_reduced: f64,
    pub q_threshold_reduced: f64,
    pub verdict_reduced: VerdictStatus,
    pub lambda_doubled: f64,
    pub q_threshold_doubled: f64,
    pub verdict_doubled: VerdictStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub t: f64,
    /// 1-based.
    pub species: usize,
    /// 1-based.
    pub compartment: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub command: Command,
    pub config: ScenarioConfig,
    pub analysis_mode: AnalysisMode,
    pub gains: GainSet,
    /// Per-species algebraic connectivity.
    pub lambda: Vec<f64>,
    pub balanced: bool,
    pub verdict: SynchronizationVerdict,
    /// The condition already holds with every `λ_k = 0`.
    pub isolated_stable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observer: Option<ObserverReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synchrony: Option<SynchronyReport>,
    /// Peak-to-peak range over the tail window, for single compartments.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oscillation_amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence: Option<DivergenceReport>,
    pub notes: Vec<String>,
}

impl ReportRecord {
    /// 0 pass, 1 condition or synchrony fails, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self.command {
            Command::Check => {
                if self.verdict.synchronizes() {
                    EXIT_PASS
                } else {
                    EXIT_FAIL
                }
            }
            Command::Simulate => {
                if self.divergence.is_some() {
                    EXIT_DIVERGENCE
                } else {
                    match &self.synchrony {
                        Some(s) if !s.synchronized => EXIT_FAIL,
                        _ => EXIT_PASS,
                    }
                }
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
