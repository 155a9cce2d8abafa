//! Dissipativity matrices, diagonal stability and the synchronization
//! conditions built from them.
//!
//! A network synchronizes when every effective gain `γ̃_k` is positive and
//! `E = Σ − diag(γ̃)` is diagonally stable: some positive diagonal `D`
//! makes `DE + EᵀD` negative definite. Three interconnection patterns have
//! closed-form tests (the cyclic secant criterion and two branched
//! variants); every pattern goes through a numerical search for `D` whose
//! results are re-verified with the eigen-solver.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{symmetric_eigen, DenseMatrix};
use crate::passivity::{AnalysisMode, GainSet};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITERS: usize = 5000;
pub const DEFAULT_RESTARTS: usize = 20;
/// A restart stops once its best value is within this of the lower bound.
const GAP_TOL: f64 = 1e-12;
/// A restart stops early once `−λ_max` of the normalized form exceeds this.
const EARLY_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesInterconnection {
    sigma: DenseMatrix,
}

impl SpeciesInterconnection {
    pub fn new(sigma: DenseMatrix) -> Result<Self> {
        if !sigma.is_square() || sigma.rows() == 0 {
            return Err(invalid(format!(
                "species interconnection must be square and non-empty, got {}x{}",
                sigma.rows(),
                sigma.cols()
            )));
        }
        Ok(Self { sigma })
    }

    /// `σ_{k+1,k} = 1` and `σ_{1,N} = −1`: a negative-feedback loop.
    pub fn cyclic(n_species: usize) -> Result<Self> {
        if n_species < 2 {
            return Err(invalid("cyclic interconnection needs at least 2 species"));
        }
        let mut s = DenseMatrix::zeros(n_species, n_species);
        for k in 1..n_species {
            s[(k, k - 1)] = 1.0;
        }
        s[(0, n_species - 1)] = -1.0;
        Self::new(s)
    }

    /// Two three-block branches fed by block 1 and both feeding back into it.
    pub fn branched_b1() -> Self {
        let mut s = DenseMatrix::zeros(7, 7);
        s[(0, 3)] = -1.0;
        s[(0, 6)] = -1.0;
        s[(1, 0)] = 1.0;
        s[(2, 1)] = 1.0;
        s[(3, 2)] = 1.0;
        s[(4, 0)] = 1.0;
        s[(5, 4)] = 1.0;
        s[(6, 5)] = 1.0;
        Self { sigma: s }
    }

    pub fn branched_b2() -> Self {
        let rows = [
            [0.0, 0.0, 0.0, 1.0, 0.0],
            [1.0, 0.0, -1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 1.0],
            [0.0, 1.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 0.0, 1.0, 0.0],
        ];
        let data = rows.iter().flatten().copied().collect();
        Self {
            sigma: DenseMatrix::from_row_major(5, 5, data).expect("static shape"),
        }
    }

    pub fn n_species(&self) -> usize {
        self.sigma.rows()
    }

    pub fn sigma(&self) -> &DenseMatrix {
        &self.sigma
    }

    /// Exact pattern match against the structures with analytic tests.
    pub fn structure(&self) -> Option<Structure> {
        let n = self.n_species();
        if n >= 2 && self.sigma == Self::cyclic(n).ok()?.sigma {
            Some(Structure::Cyclic)
        } else if self.sigma == Self::branched_b1().sigma {
            Some(Structure::BranchedB1)
        } else if self.sigma == Self::branched_b2().sigma {
            Some(Structure::BranchedB2)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Cyclic,
    BranchedB1,
    BranchedB2,
}

/// `E = Σ − diag(γ̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DissipativityMatrix {
    e: DenseMatrix,
}

impl DissipativityMatrix {
    pub fn from_matrix(e: DenseMatrix) -> Result<Self> {
        if !e.is_square() || e.rows() == 0 {
            return Err(invalid("dissipativity matrix must be square and non-empty"));
        }
        Ok(Self { e })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.e
    }

    pub fn n(&self) -> usize {
        self.e.rows()
    }

    /// `DE + EᵀD` for `D = diag(d)`.
    pub fn lyapunov_form(&self, d: &[f64]) -> DenseMatrix {
        let n = self.n();
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = d[i] * self.e[(i, j)] + self.e[(j, i)] * d[j];
            }
        }
        m
    }

    /// `−λ_max(DE + EᵀD)`; positive iff `d` certifies diagonal stability.
    pub fn margin(&self, d: &[f64]) -> Result<f64> {
        Ok(-symmetric_eigen(&self.lyapunov_form(d))?.max())
    }

    /// `E − diag(extra)`.
    pub fn shifted(&self, extra: &[f64]) -> Result<Self> {
        if extra.len() != self.n() {
            return Err(invalid("shift length must match matrix size"));
        }
        self.e.sub(&DenseMatrix::from_diagonal(extra)).map(|e| Self { e })
    }
}

pub fn dissipativity_matrix(
    sigma: &SpeciesInterconnection,
    gains: &GainSet,
) -> Result<DissipativityMatrix> {
    if gains.len() != sigma.n_species() {
        return Err(invalid(format!(
            "gain set has {} species but the interconnection has {}",
            gains.len(),
            sigma.n_species()
        )));
    }
    let e = sigma.sigma().sub(&DenseMatrix::from_diagonal(&gains.gamma_tilde))?;
    Ok(DissipativityMatrix { e })
}

/// Outcome of one closed-form test: `pass ⇔ lhs < rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticTest {
    pub name: String,
    pub pass: bool,
    pub lhs: f64,
    pub rhs: f64,
}

impl AnalyticTest {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.to_string(),
            pass: lhs < rhs,
            lhs,
            rhs,
        }
    }
}

fn require_positive(gamma_tilde: &[f64], expected: Option<usize>) -> Result<()> {
    if let Some(n) = expected {
        if gamma_tilde.len() != n {
            return Err(invalid(format!(
                "expected {n} effective gains, got {}",
                gamma_tilde.len()
            )));
        }
    }
    if let Some((k, g)) = gamma_tilde.iter().enumerate().find(|(_, &g)| !(g > 0.0)) {
        return Err(Error::PreconditionViolation(format!(
            "effective gain of species {} is {g}, not positive",
            k + 1
        )));
    }
    Ok(())
}

pub fn sec(x: f64) -> f64 {
    1.0 / x.cos()
}

/// `Π 1/γ̃_k < sec(π/N)^N`, necessary and sufficient for the cyclic
/// structure.
pub fn secant_condition_cyclic(gamma_tilde: &[f64]) -> Result<AnalyticTest> {
    let n = gamma_tilde.len();
    if n < 2 {
        return Err(invalid("secant condition needs at least 2 species"));
    }
    require_positive(gamma_tilde, None)?;
    let lhs = gamma_tilde.iter().map(|g| 1.0 / g).product();
    let rhs = sec(PI / n as f64).powi(n as i32);
    Ok(AnalyticTest::new("secant_cyclic", lhs, rhs))
}

pub fn branched_condition_b1(gamma_tilde: &[f64]) -> Result<AnalyticTest> {
    require_positive(gamma_tilde, Some(7))?;
    let inv: Vec<f64> = gamma_tilde.iter().map(|g| 1.0 / g).collect();
    let lhs = inv[0] * (inv[1] * inv[2] * inv[3] + inv[4] * inv[5] * inv[6]);
    Ok(AnalyticTest::new("branched_b1", lhs, sec(PI / 4.0).powi(4)))
}

/// Sufficient only.
pub fn branched_condition_b2(gamma_tilde: &[f64]) -> Result<AnalyticTest> {
    require_positive(gamma_tilde, Some(5))?;
    let g = gamma_tilde;
    let lhs = 1.0 / (g[0] * g[1] * g[3]) + 1.0 / (g[3] * g[4]);
    Ok(AnalyticTest::new("branched_b2", lhs, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateOptions {
    pub max_iters: usize,
    pub restarts: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            restarts: DEFAULT_RESTARTS,
            tol: DEFAULT_TOL,
            seed: 0,
        }
    }
}

/// Positive diagonal `D = diag(d)` with `λ_max(DE + EᵀD) = −margin < 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalCertificate {
    pub d: Vec<f64>,
    pub margin: f64,
}

impl DiagonalCertificate {
    /// Recomputes the margin from scratch.
    pub fn verify(&self, e: &DissipativityMatrix) -> Result<bool> {
        if self.d.len() != e.n() || self.d.iter().any(|&v| !(v > 0.0)) {
            return Ok(false);
        }
        Ok(e.margin(&self.d)? > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Found,
    /// Best margin within `tol` of zero.
    Marginal,
    /// Budget exhausted; this is not a proof of infeasibility.
    NotFound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSearch {
    pub status: SearchStatus,
    pub certificate: Option<DiagonalCertificate>,
    /// Best `−λ_max(DE + EᵀD)` seen, for `d` normalized to sum to `N`.
    pub best_margin: f64,
    pub best_d: Vec<f64>,
    /// Upper bound on the margin any `d` with `Σ d = N` can reach, from the
    /// search's lower bound on `λ_max`; `None` when no bound was obtained.
    pub margin_bound: Option<f64>,
    pub restarts: usize,
    pub best_restart: usize,
}

struct RestartResult {
    value: f64,
    d: Vec<f64>,
    /// Lower bound on `min λ_max` over the simplex.
    lower: f64,
}

/// Central-cut ellipsoid method for `f(d) = λ_max(DÊ + ÊᵀD)` over the
/// simplex `{d ≥ 0, Σ d = 1}`, with `Ê` scaled to unit max-entry.
///
/// `f` is convex in `d` with subgradient `2 v_k (Ê v)_k` from the top
/// eigenvector `v`. Points outside the simplex get the cut `−e_k`. Stops at
/// `max_iters`, once the margin exceeds `EARLY_MARGIN`, or once the gap to
/// the running lower bound drops below `GAP_TOL`.
fn run_restart(e: &DissipativityMatrix, start: Vec<f64>, opts: &CertificateOptions) -> Result<RestartResult> {
    let n = e.n();
    let sum: f64 = start.iter().sum();
    let mut x: Vec<f64> = start.iter().map(|v| v / sum).collect();
    if n == 1 {
        let value = 2.0 * e.matrix()[(0, 0)];
        return Ok(RestartResult { value, d: x, lower: value });
    }
    let m = (n - 1) as f64;
    // the ball through the farthest vertex, restricted to the plane Σ d = 1
    let radius2 = (0..n)
        .map(|k| (0..n).map(|i| (x[i] - if i == k { 1.0 } else { 0.0 }).powi(2)).sum::<f64>())
        .fold(0.0, f64::max)
        * 1.01;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = radius2 * (if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64);
        }
    }
    let mut best = RestartResult {
        value: f64::INFINITY,
        d: x.clone(),
        lower: f64::NEG_INFINITY,
    };
    let mut g = vec![0.0; n];
    let mut pg = vec![0.0; n];
    for _ in 0..opts.max_iters {
        let outside = (0..n).filter(|&k| x[k] < 0.0).min_by(|&a, &b| x[a].total_cmp(&x[b]));
        let value = match outside {
            Some(k) => {
                g.iter_mut().for_each(|v| *v = 0.0);
                g[k] = -1.0;
                None
            }
            None => {
                let eig = symmetric_eigen(&e.lyapunov_form(&x))?;
                let v = eig.max_vector();
                let ev = e.matrix().matvec(&v)?;
                for k in 0..n {
                    g[k] = 2.0 * v[k] * ev[k];
                }
                Some(eig.max())
            }
        };
        let mean = g.iter().sum::<f64>() / n as f64;
        g.iter_mut().for_each(|v| *v -= mean);
        for i in 0..n {
            pg[i] = (0..n).map(|j| p[i * n + j] * g[j]).sum();
        }
        let gpg: f64 = g.iter().zip(&pg).map(|(a, b)| a * b).sum();
        if let Some(value) = value {
            if value < best.value {
                best.value = value;
                best.d = x.clone();
            }
            if gpg > 0.0 {
                best.lower = best.lower.max(value - gpg.sqrt());
            }
        }
        if -best.value > EARLY_MARGIN || best.value - best.lower < GAP_TOL || !(gpg > 1e-300) {
            break;
        }
        let w = gpg.sqrt();
        pg.iter_mut().for_each(|v| *v /= w);
        if n == 2 {
            // one free dimension: plain bisection
            for i in 0..n {
                x[i] -= 0.5 * pg[i];
            }
            p.iter_mut().for_each(|v| *v *= 0.25);
        } else {
            for i in 0..n {
                x[i] -= pg[i] / (m + 1.0);
            }
            let c = m * m / (m * m - 1.0);
            for i in 0..n {
                for j in 0..n {
                    p[i * n + j] = c * (p[i * n + j] - 2.0 / (m + 1.0) * pg[i] * pg[j]);
                }
            }
            for i in 0..n {
                for j in 0..i {
                    let avg = 0.5 * (p[i * n + j] + p[j * n + i]);
                    p[i * n + j] = avg;
                    p[j * n + i] = avg;
                }
            }
        }
    }
    Ok(best)
}

/// Searches for a diagonal Lyapunov certificate of `E`.
///
/// Restart 0 starts from `D = I`; the others start from seeded random
/// points of the simplex. Restarts run in parallel and are merged by
/// (margin, restart index), so the result does not depend on scheduling.
/// Returned certificates have been re-verified on the unscaled `E`.
pub fn find_diagonal_certificate(
    e: &DissipativityMatrix,
    opts: &CertificateOptions,
) -> Result<CertificateSearch> {
    let n = e.n();
    if e.matrix().as_slice().iter().any(|v| !v.is_finite()) {
        return Err(invalid("dissipativity matrix has non-finite entries"));
    }
    let scale = e.matrix().max_abs();
    let restarts = opts.restarts.max(1);
    if scale == 0.0 {
        return Ok(CertificateSearch {
            status: SearchStatus::Marginal,
            certificate: None,
            best_margin: 0.0,
            best_d: vec![1.0; n],
            margin_bound: Some(0.0),
            restarts,
            best_restart: 0,
        });
    }
    let normalized = DissipativityMatrix {
        e: e.matrix().scale(1.0 / scale),
    };
    let starts: Vec<Vec<f64>> = (0..restarts)
        .map(|r| {
            if r == 0 {
                vec![1.0; n]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (r as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
                let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0f64..2.0).exp()).collect();
                let sum: f64 = raw.iter().sum();
                raw.iter().map(|x| x * n as f64 / sum).collect()
            }
        })
        .collect();

    let results: Vec<(usize, RestartResult)> = starts
        .into_par_iter()
        .enumerate()
        .map(|(r, start)| run_restart(&normalized, start, opts).map(|res| (r, res)))
        .collect::<Result<_>>()?;

    let results_lower = results.iter().map(|(_, r)| r.lower).fold(f64::NEG_INFINITY, f64::max);
    let (best_restart, best) = results
        .into_iter()
        .min_by(|(ra, a), (rb, b)| a.value.total_cmp(&b.value).then(ra.cmp(rb)))
        .expect("at least one restart");

    let best_d: Vec<f64> = best.d.iter().map(|v| v * n as f64).collect();
    let lower = results_lower * scale * n as f64;
    let margin_bound = lower.is_finite().then_some(-lower);
    let margin = e.margin(&best_d)?;
    let status = if margin > opts.tol {
        SearchStatus::Found
    } else if margin.abs() <= opts.tol {
        SearchStatus::Marginal
    } else {
        SearchStatus::NotFound
    };
    let certificate = (status == SearchStatus::Found).then(|| DiagonalCertificate {
        d: best_d.clone(),
        margin,
    });
    if let Some(c) = &certificate {
        if !c.verify(e)? {
            return Err(invalid("certificate failed independent verification"));
        }
    }
    Ok(CertificateSearch {
        status,
        certificate,
        best_margin: margin,
        best_d,
        margin_bound,
        restarts,
        best_restart,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Synchronizes,
    /// All assumptions checkable, but no certificate was found.
    ConditionFails,
    /// The best margin is within tolerance of zero.
    Marginal,
    /// A nonpositive effective gain, or an unbalanced Laplacian under state
    /// coupling.
    NotApplicable,
}

impl VerdictStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Synchronizes => "synchronizes",
            Self::ConditionFails => "condition_fails",
            Self::Marginal => "marginal",
            Self::NotApplicable => "not_applicable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynchronizationVerdict {
    pub mode: AnalysisMode,
    pub status: VerdictStatus,
    pub assumption_positivity: bool,
    /// Only evaluated under state coupling.
    pub assumption_balanced: Option<bool>,
    pub structure: Option<Structure>,
    pub analytic_tests: Vec<AnalyticTest>,
    pub certificate: Option<DiagonalCertificate>,
    pub search: Option<CertificateSearch>,
}

impl SynchronizationVerdict {
    pub fn synchronizes(&self) -> bool {
        self.status == VerdictStatus::Synchronizes
    }
}

pub fn analytic_tests_for(structure: Structure, gamma_tilde: &[f64]) -> Result<AnalyticTest> {
    match structure {
        Structure::Cyclic => secant_condition_cyclic(gamma_tilde),
        Structure::BranchedB1 => branched_condition_b1(gamma_tilde),
        Structure::BranchedB2 => branched_condition_b2(gamma_tilde),
    }
}

pub fn evaluate_synchronization(
    sigma: &SpeciesInterconnection,
    gains: &GainSet,
    mode: AnalysisMode,
    laplacian_balanced: bool,
    opts: &CertificateOptions,
) -> Result<SynchronizationVerdict> {
    if gains.mode != mode {
        return Err(invalid(format!(
            "gain set was assembled for {} but {} was requested",
            gains.mode.as_str(),
            mode.as_str()
        )));
    }
    let e = dissipativity_matrix(sigma, gains)?;
    let positivity = gains.all_positive();
    let balanced = (mode == AnalysisMode::StateCoupling).then_some(laplacian_balanced);
    let structure = sigma.structure();
    let mut verdict = SynchronizationVerdict {
        mode,
        status: VerdictStatus::NotApplicable,
        assumption_positivity: positivity,
        assumption_balanced: balanced,
        structure,
        analytic_tests: Vec::new(),
        certificate: None,
        search: None,
    };
    if !positivity {
        return Ok(verdict);
    }
    if let Some(s) = structure {
        verdict.analytic_tests.push(analytic_tests_for(s, &gains.gamma_tilde)?);
    }
    let search = find_diagonal_certificate(&e, opts)?;
    verdict.certificate = search.certificate.clone();
    verdict.status = if balanced == Some(false) {
        VerdictStatus::NotApplicable
    } else {
        match search.status {
            SearchStatus::Found => VerdictStatus::Synchronizes,
            SearchStatus::Marginal => VerdictStatus::Marginal,
            SearchStatus::NotFound => VerdictStatus::ConditionFails,
        }
    };
    verdict.search = Some(search);
    Ok(verdict)
}
