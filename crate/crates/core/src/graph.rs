//! Weighted compartmental-coupling graphs, their Laplacians and the
//! (directed) algebraic connectivity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{build_projection_q, symmetric_eigen_min, DenseMatrix};

/// Tolerance on Laplacian row and column sums.
pub const SUM_TOL: f64 = 1e-12;

/// Nonnegative edge weights; `weights[(j, z)]` is the weight with which
/// compartment `z` enters compartment `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    weights: DenseMatrix,
}

impl WeightedDigraph {
    pub fn new(weights: DenseMatrix) -> Result<Self> {
        if !weights.is_square() {
            return Err(invalid(format!(
                "weight matrix must be square, got {}x{}",
                weights.rows(),
                weights.cols()
            )));
        }
        let n = weights.rows();
        for j in 0..n {
            if weights[(j, j)] != 0.0 {
                return Err(invalid(format!(
                    "self-loop weight at node {} must be 0",
                    j + 1
                )));
            }
            for z in 0..n {
                let w = weights[(j, z)];
                if !(w >= 0.0) || !w.is_finite() {
                    return Err(invalid(format!(
                        "weight ({}, {}) = {w} must be finite and nonnegative",
                        j + 1,
                        z + 1
                    )));
                }
            }
        }
        Ok(Self { weights })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            weights: DenseMatrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }
}

/// Row-sum-zero matrix with nonpositive off-diagonal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix {
    matrix: DenseMatrix,
}

impl LaplacianMatrix {
    /// Accepts an explicit Laplacian after checking its sign pattern and
    /// zero row sums.
    pub fn from_matrix(matrix: DenseMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(invalid("Laplacian must be square"));
        }
        let n = matrix.rows();
        let scale = matrix.max_abs().max(1.0);
        for i in 0..n {
            for j in 0..n {
                let v = matrix[(i, j)];
                if i == j && v < 0.0 {
                    return Err(invalid(format!("Laplacian diagonal ({0}, {0}) is negative", i + 1)));
                }
                if i != j && v > 0.0 {
                    return Err(invalid(format!(
                        "Laplacian off-diagonal ({}, {}) is positive",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        for (i, s) in matrix.row_sums().iter().enumerate() {
            if s.abs() > SUM_TOL * scale {
                return Err(invalid(format!("Laplacian row {} sums to {s:e}, not 0", i + 1)));
            }
        }
        Ok(Self { matrix })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            matrix: DenseMatrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.as_slice().iter().all(|&v| v == 0.0)
    }

    /// Back to edge weights (negated off-diagonals).
    pub fn to_digraph(&self) -> WeightedDigraph {
        let n = self.n();
        let mut w = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    w[(i, j)] = -self.matrix[(i, j)];
                }
            }
        }
        WeightedDigraph { weights: w }
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            matrix: self.matrix.permuted(perm),
        }
    }
}

pub fn laplacian(g: &WeightedDigraph) -> LaplacianMatrix {
    let n = g.n();
    let w = g.weights();
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let mut deg = 0.0;
        for j in 0..n {
            if i != j {
                l[(i, j)] = -w[(i, j)];
                deg += w[(i, j)];
            }
        }
        l[(i, i)] = deg;
    }
    LaplacianMatrix { matrix: l }
}

/// Minimum of `zᵀ L z` over unit vectors orthogonal to `1_n`, evaluated as
/// the smallest eigenvalue of `½ Q (L + Lᵀ) Qᵀ`. Negative values are
/// possible for unbalanced directed graphs.
pub fn algebraic_connectivity(l: &LaplacianMatrix) -> Result<f64> {
    let n = l.n();
    if n < 2 {
        return Err(invalid(format!("algebraic connectivity needs n >= 2, got {n}")));
    }
    let q = build_projection_q(n)?;
    let reduced = q.reduce(&l.matrix().symmetric_part()?)?;
    symmetric_eigen_min(&reduced.symmetric_part()?)
}

/// `1ᵀ L = 0` within [`SUM_TOL`] (relative to the largest entry).
pub fn is_balanced(l: &LaplacianMatrix) -> bool {
    let scale = l.matrix().max_abs().max(1.0);
    l.matrix().col_sums().iter().all(|s| s.abs() <= SUM_TOL * scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Complete,
    Star,
    Ring,
    Line,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 4] = [Self::Complete, Self::Star, Self::Ring, Self::Line];

    pub fn min_nodes(self) -> usize {
        match self {
            Self::Ring => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Complete => "complete",
            Self::Star => "star",
            Self::Ring => "ring",
            Self::Line => "line",
        })
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "complete" => Ok(Self::Complete),
            "star" => Ok(Self::Star),
            "ring" => Ok(Self::Ring),
            "line" => Ok(Self::Line),
            other => Err(invalid(format!(
                "unknown topology kind '{other}' (expected complete, star, ring or line)"
            ))),
        }
    }
}

/// A named uniform-weight topology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub kind: TopologyKind,
    pub n: usize,
    pub q: f64,
}

impl Topology {
    pub fn new(kind: TopologyKind, n: usize, q: f64) -> Self {
        Self { kind, n, q }
    }

    /// Closed-form connectivity of the named topology. Only used as an
    /// independent check; [`algebraic_connectivity`] never calls it.
    pub fn closed_form_connectivity(&self) -> f64 {
        use std::f64::consts::PI;
        let (n, q) = (self.n as f64, self.q);
        match self.kind {
            TopologyKind::Complete => n * q,
            TopologyKind::Star if self.n == 2 => 2.0 * q,
            TopologyKind::Star => q,
            TopologyKind::Ring => 4.0 * q * (PI / n).sin().powi(2),
            TopologyKind::Line => 2.0 * q * (1.0 - (PI / n).cos()),
        }
    }
}

/// Star graphs use node 1 as the hub; all edges are bidirectional with
/// weight `q`.
pub fn make_topology(t: &Topology) -> Result<WeightedDigraph> {
    if !(t.q >= 0.0) || !t.q.is_finite() {
        return Err(invalid(format!("edge weight q = {} must be finite and >= 0", t.q)));
    }
    if t.n < t.kind.min_nodes() {
        return Err(invalid(format!(
            "{} topology needs n >= {}, got {}",
            t.kind,
            t.kind.min_nodes(),
            t.n
        )));
    }
    let n = t.n;
    let mut w = DenseMatrix::zeros(n, n);
    let mut link = |a: usize, b: usize| {
        w[(a, b)] = t.q;
        w[(b, a)] = t.q;
    };
    match t.kind {
        TopologyKind::Complete => {
            for a in 0..n {
                for b in (a + 1)..n {
                    link(a, b);
                }
            }
        }
        TopologyKind::Star => (1..n).for_each(|b| link(0, b)),
        TopologyKind::Ring => (0..n).for_each(|a| link(a, (a + 1) % n)),
        TopologyKind::Line => (0..n - 1).for_each(|a| link(a, a + 1)),
    }
    WeightedDigraph::new(w)
}
