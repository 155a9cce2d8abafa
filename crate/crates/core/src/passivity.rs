//! Relaxed-cocoercivity gains for the block classes used in the networks:
//! first-order linear lags, monotone Lipschitz static maps and the Hill
//! repression nonlinearity, plus sampled estimates for arbitrary scalar maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Which coupling variable the gains are assembled for.
///
/// `OutputCoupling` diffuses outputs and uses `γ̃ = γ + λ`; `StateCoupling`
/// diffuses states and uses `γ̃ = γ + ξ·λ`, which additionally requires
/// balanced Laplacians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnalysisMode {
    #[serde(rename = "theorem1")]
    OutputCoupling,
    #[serde(rename = "theorem2")]
    StateCoupling,
}

impl AnalysisMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::OutputCoupling => "theorem1",
            Self::StateCoupling => "theorem2",
        }
    }
}

impl std::str::FromStr for AnalysisMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theorem1" => Ok(Self::OutputCoupling),
            "theorem2" => Ok(Self::StateCoupling),
            other => Err(invalid(format!(
                "unknown analysis mode '{other}' (expected theorem1 or theorem2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockDescriptor {
    /// `ẋ = −decay·x + gain·u, y = x`.
    LinearFirstOrder { decay: f64, gain: f64 },
    StaticNonlinearity { lipschitz: f64, monotone: bool },
    /// `y = −1 / (σ^p + 1)` on `σ ≥ 0`.
    HillRepression { p: f64 },
}

impl BlockDescriptor {
    pub fn validate(&self) -> Result<()> {
        self.gain().map(|_| ())
    }

    /// Cocoercivity gain of the block's input-output operator.
    pub fn gain(&self) -> Result<f64> {
        match *self {
            Self::LinearFirstOrder { decay, gain } => gain_linear_first_order(decay, gain),
            Self::StaticNonlinearity { lipschitz, monotone } => {
                if !monotone {
                    return Err(invalid(
                        "static nonlinearity must be monotone increasing to carry a gain",
                    ));
                }
                gain_static_monotone(lipschitz)
            }
            Self::HillRepression { p } => gain_hill(p),
        }
    }
}

/// `γ = a / b` for `ẋ = −a·x + b·u`.
pub fn gain_linear_first_order(decay: f64, gain: f64) -> Result<f64> {
    if !(decay > 0.0 && decay.is_finite()) || !(gain > 0.0 && gain.is_finite()) {
        return Err(invalid(format!(
            "first-order block needs decay > 0 and gain > 0, got ({decay}, {gain})"
        )));
    }
    Ok(decay / gain)
}

/// A monotone map with Lipschitz constant `L` is `1/L`-cocoercive.
pub fn gain_static_monotone(lipschitz: f64) -> Result<f64> {
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(invalid(format!("Lipschitz constant must be > 0, got {lipschitz}")));
    }
    Ok(1.0 / lipschitz)
}

fn check_hill_exponent(p: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(invalid(format!("Hill exponent must be > 1, got {p}")));
    }
    Ok(())
}

/// Inverse of the maximal slope of `σ ↦ −1/(σ^p + 1)` over `σ ≥ 0`.
///
/// The slope peaks where `σ^p = r = (p−1)/(p+1)`, giving
/// `γ = 4p / ((p+1)² · r^((p−1)/p))`.
pub fn gain_hill(p: f64) -> Result<f64> {
    check_hill_exponent(p)?;
    let r_ln = ((p - 1.0) / (p + 1.0)).ln();
    Ok(4.0 * p / ((p + 1.0).powi(2) * ((p - 1.0) / p * r_ln).exp()))
}

/// The commonly quoted closed form
/// `(((p−1)/(p+1))^(p/(p−1)) + 1)² (p+1) / (p(p−1))`.
///
/// It tracks [`gain_hill`] closely for large `p` but overstates the gain
/// for small `p` (1.85 vs 1.54 at `p = 2`), so it is not used for
/// certification.
pub fn gain_hill_printed(p: f64) -> Result<f64> {
    check_hill_exponent(p)?;
    let r_ln = ((p - 1.0) / (p + 1.0)).ln();
    let root = (p / (p - 1.0) * r_ln).exp();
    Ok((root + 1.0).powi(2) * (p + 1.0) / (p * (p - 1.0)))
}

/// The Hill repression map `σ ↦ −1/(max(σ,0)^p + 1)`.
pub fn hill_repression(p: f64, sigma: f64) -> f64 {
    -1.0 / (sigma.max(0.0).powf(p) + 1.0)
}

fn sample_points(
    f: &dyn Fn(f64) -> f64,
    domain: (f64, f64),
    samples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let (lo, hi) = domain;
    if samples < 2 {
        return Err(invalid(format!("need at least 2 samples, got {samples}")));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(invalid(format!("bad sampling domain [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (hi - lo) / samples as f64;
    let mut xs: Vec<f64> = (0..samples)
        .map(|i| lo + width * (i as f64 + rng.gen::<f64>()))
        .collect();
    xs.push(lo);
    xs.push(hi);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs.into_iter()
        .map(|x| {
            let y = f(x);
            if y.is_finite() {
                Ok((x, y))
            } else {
                Err(Error::Evaluation { sigma: x, value: y })
            }
        })
        .collect()
}

fn sampled_infimum(
    points: &[(f64, f64)],
    seed: u64,
    ratio: impl Fn((f64, f64), (f64, f64)) -> Option<f64>,
) -> f64 {
    let mut best = f64::INFINITY;
    for w in points.windows(2) {
        if let Some(r) = ratio(w[0], w[1]) {
            best = best.min(r);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
    for _ in 0..points.len() {
        let a = points[rng.gen_range(0..points.len())];
        let b = points[rng.gen_range(0..points.len())];
        if let Some(r) = ratio(a, b) {
            best = best.min(r);
        }
    }
    best
}

/// Sampled estimate of the largest `γ` with
/// `(σ₁−σ₂)(f(σ₁)−f(σ₂)) ≥ γ(σ₁−σ₂)²`, i.e. the gain of `ẋ = −f(x) + u`.
///
/// The infimum is taken over stratified uniform samples (plus the domain
/// endpoints), all adjacent pairs and as many random pairs. It only looks
/// at sampled pairs, so it can overestimate the true gain.
pub fn estimate_gain_empirical(
    f: &dyn Fn(f64) -> f64,
    domain: (f64, f64),
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let pts = sample_points(f, domain, samples, seed)?;
    Ok(sampled_infimum(&pts, seed, |(s1, f1), (s2, f2)| {
        let ds = s1 - s2;
        (ds != 0.0).then(|| ds * (f1 - f2) / (ds * ds))
    }))
}

/// Sampled estimate of the cocoercivity gain of the static map `y = h(σ)`:
/// the largest `ξ` with `ξ(h(σ₁)−h(σ₂))² ≤ (σ₁−σ₂)(h(σ₁)−h(σ₂))`.
/// Pairs with equal images impose no constraint; a constant map yields `+∞`.
pub fn estimate_static_gain_empirical(
    h: &dyn Fn(f64) -> f64,
    domain: (f64, f64),
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let pts = sample_points(h, domain, samples, seed)?;
    Ok(sampled_infimum(&pts, seed, |(s1, h1), (s2, h2)| {
        let dh = h1 - h2;
        (dh != 0.0).then(|| (s1 - s2) * dh / (dh * dh))
    }))
}

/// Per-species gains and connectivities, with the effective gains `γ̃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub mode: AnalysisMode,
    pub gamma: Vec<f64>,
    pub xi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub gamma_tilde: Vec<f64>,
}

impl GainSet {
    pub fn new(mode: AnalysisMode, gamma: Vec<f64>, xi: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        let n = gamma.len();
        if xi.len() != n || lambda.len() != n {
            return Err(invalid(format!(
                "gain vectors disagree in length: gamma {n}, xi {}, lambda {}",
                xi.len(),
                lambda.len()
            )));
        }
        if gamma.iter().chain(&xi).chain(&lambda).any(|v| !v.is_finite()) {
            return Err(invalid("gain vectors must be finite"));
        }
        let gamma_tilde = match mode {
            AnalysisMode::OutputCoupling => gamma.iter().zip(&lambda).map(|(g, l)| g + l).collect(),
            AnalysisMode::StateCoupling => gamma
                .iter()
                .zip(&xi)
                .zip(&lambda)
                .map(|((g, x), l)| g + x * l)
                .collect(),
        };
        Ok(Self {
            mode,
            gamma,
            xi,
            lambda,
            gamma_tilde,
        })
    }

    /// Output-coupling gains with unit `ξ`.
    pub fn output_coupling(gamma: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        let xi = vec![1.0; gamma.len()];
        Self::new(AnalysisMode::OutputCoupling, gamma, xi, lambda)
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn all_positive(&self) -> bool {
        self.gamma_tilde.iter().all(|&g| g > 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gains() {
        assert_eq!(gain_linear_first_order(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(gain_linear_first_order(0.5, 1.0).unwrap(), 0.5);
        assert_eq!(gain_linear_first_order(3.0, 3.0).unwrap(), 1.0);
        assert!(gain_linear_first_order(0.0, 1.0).is_err());
        assert!(gain_linear_first_order(1.0, -1.0).is_err());
    }

    #[test]
    fn static_gains() {
        assert_eq!(gain_static_monotone(1.0).unwrap(), 1.0);
        assert_eq!(gain_static_monotone(4.0).unwrap(), 0.25);
        let g = gain_hill(17.0).unwrap();
        assert!((gain_static_monotone(1.0 / g).unwrap() - g).abs() < 1e-15);
        assert!(gain_static_monotone(0.0).is_err());
        assert!(BlockDescriptor::StaticNonlinearity { lipschitz: 2.0, monotone: false }
            .gain()
            .is_err());
    }

    /// Brute-force maximum slope of the Hill map on a dense grid of [0, 100].
    fn hill_gain_by_sampling(p: f64) -> f64 {
        let steps = 2_000_000;
        let h = 100.0 / steps as f64;
        let mut max_slope: f64 = 0.0;
        for i in 0..=steps {
            let s = i as f64 * h;
            max_slope = max_slope.max(p * s.powf(p - 1.0) / (s.powf(p) + 1.0).powi(2));
        }
        1.0 / max_slope
    }

    #[test]
    fn hill_gain_matches_brute_force() {
        for p in [1.5, 2.0, 3.0, 17.0] {
            let oracle = hill_gain_by_sampling(p);
            let g = gain_hill(p).unwrap();
            assert!((g - oracle).abs() < 1e-8 * oracle, "p={p}: {g} vs {oracle}");
        }
        assert!((gain_hill(2.0).unwrap() - 1.539_600_717_839).abs() < 1e-9);
    }

    #[test]
    fn hill_gain_at_seventeen() {
        let g = gain_hill(17.0).unwrap();
        assert!((g - 0.234_480_889_6).abs() < 1e-9, "{g}");
        let printed = gain_hill_printed(17.0).unwrap();
        assert!((printed - 0.234_484_054_8).abs() < 1e-9, "{printed}");
    }

    #[test]
    fn printed_form_tracks_exact_for_large_p() {
        let mut prev = f64::INFINITY;
        for p in [3.0, 5.0, 10.0, 15.0, 17.0, 25.0, 50.0] {
            let a = gain_hill(p).unwrap();
            let b = gain_hill_printed(p).unwrap();
            let rel = (b - a) / a;
            assert!(rel < prev);
            prev = rel;
            if p >= 15.0 {
                assert!(rel < 1e-4);
            }
            assert!(b >= a);
        }
        assert!(gain_hill_printed(2.0).unwrap() > 1.85);
    }

    #[test]
    fn hill_gain_tends_to_one_near_linear() {
        // p → 1 approaches σ ↦ −1/(σ+1), whose steepest slope is 1
        let g: Vec<f64> = [1.1, 1.01, 1.001].iter().map(|&p| gain_hill(p).unwrap()).collect();
        assert!(g[0] > g[1] && g[1] > g[2]);
        assert!((g[2] - 1.0).abs() < 1e-2);
        assert!(gain_hill(1.0).is_err());
        assert!(gain_hill(0.5).is_err());
    }

    #[test]
    fn hill_gain_positive_on_range() {
        let mut p = 1.05;
        while p <= 50.0 {
            assert!(gain_hill(p).unwrap() > 0.0);
            p += 0.05;
        }
    }

    #[test]
    fn empirical_gain_of_linear_maps() {
        let id = |s: f64| s;
        assert!((estimate_gain_empirical(&id, (-1.0, 1.0), 50, 1).unwrap() - 1.0).abs() < 1e-12);
        let lin = |s: f64| 2.5 * s;
        assert!((estimate_gain_empirical(&lin, (-3.0, 3.0), 50, 7).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn empirical_gain_of_hill_map() {
        let h = |s: f64| hill_repression(17.0, s);
        let est = estimate_static_gain_empirical(&h, (0.0, 10.0), 20_000, 3).unwrap();
        let exact = gain_hill(17.0).unwrap();
        assert!((est - exact).abs() < 0.05 * exact, "{est} vs {exact}");
        assert!(est >= exact * (1.0 - 1e-9));
    }

    #[test]
    fn empirical_gain_monotone_maps_nonnegative() {
        let maps: Vec<Box<dyn Fn(f64) -> f64>> = vec![
            Box::new(|s: f64| s.tanh()),
            Box::new(|s: f64| s.atan() * 3.0),
            Box::new(|s: f64| if s > 0.0 { s } else { 0.1 * s }),
        ];
        for f in &maps {
            assert!(estimate_gain_empirical(f.as_ref(), (-5.0, 5.0), 500, 11).unwrap() >= 0.0);
        }
    }

    #[test]
    fn empirical_gain_reports_bad_values() {
        let f = |s: f64| 1.0 / s;
        match estimate_gain_empirical(&f, (0.0, 1.0), 10, 0) {
            Err(Error::Evaluation { sigma, .. }) => assert_eq!(sigma, 0.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(estimate_gain_empirical(&|s| s, (0.0, 1.0), 1, 0).is_err());
    }

    #[test]
    fn gain_set_modes() {
        let g = GainSet::output_coupling(vec![0.5, 1.0], vec![0.2, 0.0]).unwrap();
        assert_eq!(g.gamma_tilde, vec![0.7, 1.0]);
        let g = GainSet::new(AnalysisMode::StateCoupling, vec![0.5, 1.0], vec![2.0, 1.0], vec![0.2, 0.3])
            .unwrap();
        assert!((g.gamma_tilde[0] - 0.9).abs() < 1e-15);
        assert!((g.gamma_tilde[1] - 1.3).abs() < 1e-15);
        assert!(GainSet::output_coupling(vec![1.0], vec![]).is_err());
    }

    /// RK4 response of `ẋ = −a x + b u` from rest, sampled every step.
    fn respond(a: f64, b: f64, u: &dyn Fn(f64) -> f64, dt: f64, steps: usize) -> Vec<f64> {
        let mut x = 0.0;
        let mut out = vec![x];
        for i in 0..steps {
            let t = i as f64 * dt;
            let f = |t: f64, x: f64| -a * x + b * u(t);
            let k1 = f(t, x);
            let k2 = f(t + dt / 2.0, x + dt / 2.0 * k1);
            let k3 = f(t + dt / 2.0, x + dt / 2.0 * k2);
            let k4 = f(t + dt, x + dt * k3);
            x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            out.push(x);
        }
        out
    }

    #[test]
    fn first_order_block_is_cocoercive_along_trajectories() {
        let (a, b) = (1.3, 0.7);
        let gamma = gain_linear_first_order(a, b).unwrap();
        let u1 = |t: f64| (1.7 * t).sin() + 0.3 * (0.4 * t).cos();
        let u2 = |t: f64| 0.5 * (1.0 - (4.0 * (t - 3.0)).tanh()) - 0.5 * (2.0 * t).sin();
        let dt = 1e-3;
        let steps = 10_000;
        let x1 = respond(a, b, &u1, dt, steps);
        let x2 = respond(a, b, &u2, dt, steps);
        let (mut yy, mut yu) = (0.0, 0.0);
        for i in 1..=steps {
            let t0 = (i - 1) as f64 * dt;
            let t1 = i as f64 * dt;
            let d0 = x2[i - 1] - x1[i - 1];
            let d1 = x2[i] - x1[i];
            yy += 0.5 * dt * (d0 * d0 + d1 * d1);
            yu += 0.5 * dt * (d0 * (u2(t0) - u1(t0)) + d1 * (u2(t1) - u1(t1)));
            assert!(gamma * yy <= yu + 1e-5 * (1.0 + yu.abs()), "T={t1}");
        }
    }
}
