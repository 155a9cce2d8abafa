//! Closed-form synchronization conditions for Goodwin networks on the
//! named topologies.
//!
//! With gains `γ = (0.5, 1, 1, γ₄)` and the cyclic secant bound
//! `sec(π/4)⁴ = 4`, diffusing species 1 with connectivity `λ` synchronizes
//! when `0.5 + λ > c`, and diffusing species 1 and 2 when
//! `(0.5 + λ)(1 + λ) > c`, where `c = 1/(γ₄ sec(π/4)⁴)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use syncnet_core::graph::TopologyKind;
use syncnet_core::passivity::gain_hill;
use syncnet_core::stability::sec;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpeciesSelection {
    #[serde(rename = "1")]
    First,
    #[serde(rename = "1+2")]
    FirstAndSecond,
}

impl SpeciesSelection {
    pub const ALL: [Self; 2] = [Self::First, Self::FirstAndSecond];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::First => "1",
            Self::FirstAndSecond => "1+2",
        }
    }
}

impl fmt::Display for SpeciesSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpeciesSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(Self::First),
            "1+2" | "both" => Ok(Self::FirstAndSecond),
            other => Err(format!("unknown species selection `{other}` (expected 1, 1+2 or both)")),
        }
    }
}

/// `c = 1/(γ₄(p)·sec(π/4)⁴)`.
pub fn secant_constant(p: f64) -> Result<f64, CliError> {
    let g4 = gain_hill(p).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(1.0 / (g4 * sec(PI / 4.0).powi(4)))
}

/// Smallest connectivity that satisfies the condition.
pub fn lambda_threshold(sel: SpeciesSelection, c: f64) -> f64 {
    match sel {
        SpeciesSelection::First => c - 0.5,
        // positive root of λ² + 1.5λ + 0.5 − c
        SpeciesSelection::FirstAndSecond => (-3.0 + (1.0 + 16.0 * c).sqrt()) / 4.0,
    }
}

/// The commonly quoted two-species threshold `(√(9+8c) − 3)/4`, which is not
/// the root of the two-species quadratic.
pub fn lambda_threshold_printed(c: f64) -> f64 {
    (-3.0 + (9.0 + 8.0 * c).sqrt()) / 4.0
}

pub fn condition_holds(sel: SpeciesSelection, lambda: f64, c: f64) -> bool {
    match sel {
        SpeciesSelection::First => 0.5 + lambda > c,
        SpeciesSelection::FirstAndSecond => (0.5 + lambda) * (1.0 + lambda) > c,
    }
}

pub fn topology_lambda(kind: TopologyKind, n: usize, q: f64) -> f64 {
    let nf = n as f64;
    match kind {
        TopologyKind::Complete => nf * q,
        TopologyKind::Star if n == 2 => 2.0 * q,
        TopologyKind::Star => q,
        TopologyKind::Ring => 4.0 * q * (PI / nf).sin().powi(2),
        TopologyKind::Line => 2.0 * q * (1.0 - (PI / nf).cos()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub lambda: f64,
    /// Lower bound on `q` (`None` when any `q > 0` works for large `n`).
    pub q_min: Option<f64>,
    /// Bound on `n` for the requested `q`: lower for complete graphs,
    /// upper for rings and lines.
    pub n_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub topology: TopologyKind,
    pub species: SpeciesSelection,
    pub condition: String,
    pub exact: Thresholds,
    /// Only for the two-species rows, whose printed threshold differs.
    pub printed: Option<Thresholds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionTable {
    pub p: f64,
    pub gamma4: f64,
    pub c: f64,
    pub q: Option<f64>,
    pub rows: Vec<TableRow>,
}

fn thresholds(kind: TopologyKind, lambda: f64, q: Option<f64>) -> Thresholds {
    let (q_min, n_bound) = match kind {
        TopologyKind::Complete => (None, q.map(|q| lambda / q)),
        TopologyKind::Star => (Some(lambda), None),
        TopologyKind::Ring => (
            Some(lambda / 4.0),
            q.and_then(|q| {
                let s = lambda / (4.0 * q);
                (s < 1.0).then(|| PI / s.sqrt().asin())
            }),
        ),
        TopologyKind::Line => (
            Some(lambda / 2.0),
            q.and_then(|q| {
                let s = 1.0 - lambda / (2.0 * q);
                (s > -1.0).then(|| PI / s.acos())
            }),
        ),
    };
    Thresholds { lambda, q_min, n_bound }
}

fn condition_text(kind: TopologyKind, sel: SpeciesSelection) -> String {
    let lam = match sel {
        SpeciesSelection::First => "(c - 0.5)",
        SpeciesSelection::FirstAndSecond => "L",
    };
    let body = match kind {
        TopologyKind::Complete => format!("n > {lam}/q"),
        TopologyKind::Star => format!("q > {lam}"),
        TopologyKind::Ring => format!("q > {lam}/4 and n < pi/arcsin(sqrt({lam}/(4q)))"),
        TopologyKind::Line => format!("q > {lam}/2 and n < pi/arccos(1 - {lam}/(2q))"),
    };
    match sel {
        SpeciesSelection::First => body,
        SpeciesSelection::FirstAndSecond => format!("{body}, L = (sqrt(1 + 16c) - 3)/4"),
    }
}

pub fn condition_table(p: f64, selection: Option<SpeciesSelection>, q: Option<f64>) -> Result<ConditionTable, CliError> {
    if let Some(q) = q {
        if !(q > 0.0) || !q.is_finite() {
            return Err(CliError::Usage(format!("--q must be > 0, got {q}")));
        }
    }
    let gamma4 = gain_hill(p).map_err(|e| CliError::Usage(e.to_string()))?;
    let c = secant_constant(p)?;
    let selections: Vec<SpeciesSelection> = match selection {
        Some(s) => vec![s],
        None => SpeciesSelection::ALL.to_vec(),
    };
    let mut rows = Vec::new();
    for kind in TopologyKind::ALL {
        for &sel in &selections {
            let exact = thresholds(kind, lambda_threshold(sel, c), q);
            let printed = (sel == SpeciesSelection::FirstAndSecond).then(|| thresholds(kind, lambda_threshold_printed(c), q));
            rows.push(TableRow {
                topology: kind,
                species: sel,
                condition: condition_text(kind, sel),
                exact,
                printed,
            });
        }
    }
    Ok(ConditionTable { p, gamma4, c, q, rows })
}
