//! Synchrony measures on simulated trajectories: deviations from the
//! across-compartment mean, finite-horizon L2 norms, tail verdicts and the
//! empirical gain ratio `ρ̂ = ‖ΔY‖_T / ‖ΔW‖_T`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::build_projection_q;
use crate::sim::{input_matrix, InputSignal, Trajectory};

pub const DEFAULT_TAIL_FRACTION: f64 = 0.1;
pub const DEFAULT_THRESHOLD: f64 = 1e-3;

/// A vector-valued signal sampled on a nondecreasing time grid.
pub trait SampledSeries {
    fn times(&self) -> &[f64];
    /// Squared Euclidean norm of the sample.
    fn squared_norm(&self, sample: usize) -> f64;
}

/// Plain sampled signal, `values[sample * dim + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub times: Vec<f64>,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Signal {
    pub fn new(times: Vec<f64>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != times.len() * dim {
            return Err(invalid("signal buffer does not match times x dim"));
        }
        Ok(Self { times, dim, values })
    }

    pub fn scalar(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(times, 1, values)
    }
}

impl SampledSeries for Signal {
    fn times(&self) -> &[f64] {
        &self.times
    }

    fn squared_norm(&self, sample: usize) -> f64 {
        self.values[sample * self.dim..(sample + 1) * self.dim]
            .iter()
            .map(|v| v * v)
            .sum()
    }
}

/// `ΔY_{k,j}(t) = y_{k,j}(t) − (1/n) Σ_i y_{k,i}(t)` on the trajectory grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationSeries {
    pub times: Vec<f64>,
    n: usize,
    n_species: usize,
    /// `[sample][species][compartment]`.
    values: Vec<f64>,
}

impl DeviationSeries {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn species(&self, sample: usize, species: usize) -> &[f64] {
        let start = (sample * self.n_species + species) * self.n;
        &self.values[start..start + self.n]
    }

    pub fn value(&self, sample: usize, species: usize, compartment: usize) -> f64 {
        self.species(sample, species)[compartment]
    }

    /// Largest `|ΔY_{k,j}|` over species and compartments at one sample.
    pub fn max_abs(&self, sample: usize) -> f64 {
        let stride = self.n_species * self.n;
        self.values[sample * stride..(sample + 1) * stride]
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// The deviation of a single species as a plain signal.
    pub fn species_signal(&self, species: usize) -> Signal {
        let values = (0..self.len()).flat_map(|s| self.species(s, species).to_vec()).collect();
        Signal {
            times: self.times.clone(),
            dim: self.n,
            values,
        }
    }

    fn from_stacked(times: Vec<f64>, n: usize, n_species: usize, mut values: Vec<f64>) -> Self {
        for chunk in values.chunks_mut(n) {
            let mean = chunk.iter().sum::<f64>() / n as f64;
            chunk.iter_mut().for_each(|v| *v -= mean);
        }
        Self {
            times,
            n,
            n_species,
            values,
        }
    }
}

impl SampledSeries for DeviationSeries {
    fn times(&self) -> &[f64] {
        &self.times
    }

    fn squared_norm(&self, sample: usize) -> f64 {
        let stride = self.n_species * self.n;
        self.values[sample * stride..(sample + 1) * stride]
            .iter()
            .map(|v| v * v)
            .sum()
    }
}

pub fn deviation(traj: &Trajectory) -> DeviationSeries {
    let (n, big_n) = (traj.n(), traj.n_species());
    let mut values = Vec::with_capacity(traj.len() * n * big_n);
    for s in 0..traj.len() {
        for k in 0..big_n {
            values.extend_from_slice(traj.species_outputs(s, k));
        }
    }
    DeviationSeries::from_stacked(traj.times.clone(), n, big_n, values)
}

/// `ΔW` sampled on the trajectory grid.
pub fn input_deviation(traj: &Trajectory, inputs: &[InputSignal]) -> Result<DeviationSeries> {
    let (n, big_n) = (traj.n(), traj.n_species());
    for s in inputs {
        if s.species >= big_n || s.compartment >= n {
            return Err(invalid(format!(
                "input targets species {} compartment {}, outside the trajectory",
                s.species + 1,
                s.compartment + 1
            )));
        }
    }
    let mut values = vec![0.0; traj.len() * n * big_n];
    for (s, chunk) in values.chunks_mut(n * big_n).enumerate() {
        input_matrix(inputs, n, traj.times[s], chunk);
    }
    Ok(DeviationSeries::from_stacked(traj.times.clone(), n, big_n, values))
}

fn raw_inputs(traj: &Trajectory, inputs: &[InputSignal]) -> Signal {
    let (n, big_n) = (traj.n(), traj.n_species());
    let mut values = vec![0.0; traj.len() * n * big_n];
    for (s, chunk) in values.chunks_mut(n * big_n).enumerate() {
        input_matrix(inputs, n, traj.times[s], chunk);
    }
    Signal {
        times: traj.times.clone(),
        dim: n * big_n,
        values,
    }
}

/// `(∫₀ᵀ |s(t)|² dt)^{1/2}` by the trapezoidal rule; a final partial interval
/// interpolates `|s|²` linearly.
pub fn l2_norm_on_horizon<S: SampledSeries + ?Sized>(series: &S, t: f64) -> Result<f64> {
    let times = series.times();
    let (Some(&t0), Some(&t_last)) = (times.first(), times.last()) else {
        return Err(invalid("cannot integrate an empty series"));
    };
    if !t.is_finite() || t < t0 || t > t_last * (1.0 + 1e-12) + 1e-12 {
        return Err(invalid(format!("horizon {t} outside the sampled range [{t0}, {t_last}]")));
    }
    let mut acc = 0.0;
    let mut prev = series.squared_norm(0);
    for i in 1..times.len() {
        let (a, b) = (times[i - 1], times[i]);
        if a >= t {
            break;
        }
        let cur = series.squared_norm(i);
        if b <= t {
            acc += 0.5 * (b - a) * (prev + cur);
        } else {
            let theta = (t - a) / (b - a);
            let mid = prev + theta * (cur - prev);
            acc += 0.5 * (t - a) * (prev + mid);
        }
        prev = cur;
    }
    Ok(acc.max(0.0).sqrt())
}

/// `‖ΔY‖_T / ‖ΔW‖_T`. Fails with [`Error::UndefinedRatio`] when `ΔW` vanishes.
pub fn gain_ratio(traj: &Trajectory, inputs: &[InputSignal], t: f64) -> Result<f64> {
    let dw_series = input_deviation(traj, inputs)?;
    let dw = l2_norm_on_horizon(&dw_series, t)?;
    // mean removal of identical entries leaves rounding residue
    let w = l2_norm_on_horizon(&raw_inputs(traj, inputs), t)?;
    if dw <= 1e-12 * w || dw <= f64::MIN_POSITIVE {
        return Err(Error::UndefinedRatio);
    }
    Ok(l2_norm_on_horizon(&deviation(traj), t)? / dw)
}

fn check_tail_args(fraction: f64, threshold: Option<f64>) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid(format!("tail fraction must lie in (0, 1), got {fraction}")));
    }
    if let Some(th) = threshold {
        if !(th > 0.0) || !th.is_finite() {
            return Err(invalid(format!("threshold must be > 0, got {th}")));
        }
    }
    Ok(())
}

/// `max_{t ≥ (1−fraction)·T} max_{k,j} |ΔY_{k,j}(t)|`.
pub fn tail_metric(dev: &DeviationSeries, fraction: f64) -> Result<f64> {
    check_tail_args(fraction, None)?;
    let Some(&end) = dev.times.last() else {
        return Ok(0.0);
    };
    let start = dev.times[0] + (1.0 - fraction) * (end - dev.times[0]);
    Ok((0..dev.len())
        .filter(|&s| dev.times[s] >= start)
        .map(|s| dev.max_abs(s))
        .fold(0.0, f64::max))
}

pub fn tail_synchrony(dev: &DeviationSeries, fraction: f64, threshold: f64) -> Result<bool> {
    check_tail_args(fraction, Some(threshold))?;
    Ok(tail_metric(dev, fraction)? < threshold)
}

/// `‖Q·Y_k‖_T` for one species: equals `‖ΔY_k‖_T` since `QᵀQ` is the
/// centering projection.
pub fn projected_norm(traj: &Trajectory, species: usize, t: f64) -> Result<f64> {
    if species >= traj.n_species() {
        return Err(invalid(format!("species {} out of range", species + 1)));
    }
    let q = build_projection_q(traj.n())?;
    let mut values = Vec::with_capacity(traj.len() * (traj.n() - 1));
    for s in 0..traj.len() {
        values.extend(q.apply(traj.species_outputs(s, species))?);
    }
    l2_norm_on_horizon(&Signal::new(traj.times.clone(), traj.n() - 1, values)?, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynchronyReport {
    pub horizon: f64,
    pub species_norms: Vec<f64>,
    pub total_norm: f64,
    pub tail_fraction: f64,
    pub threshold: f64,
    pub tail_metric: f64,
    pub synchronized: bool,
    pub gain_ratio: Option<f64>,
}

/// Norms over the full horizon, the tail verdict, and `ρ̂` when `ΔW ≠ 0`.
pub fn synchrony_report(
    traj: &Trajectory,
    inputs: &[InputSignal],
    fraction: f64,
    threshold: f64,
) -> Result<SynchronyReport> {
    check_tail_args(fraction, Some(threshold))?;
    let dev = deviation(traj);
    let horizon = traj.horizon();
    let species_norms = (0..dev.n_species())
        .map(|k| l2_norm_on_horizon(&dev.species_signal(k), horizon))
        .collect::<Result<Vec<_>>>()?;
    let total_norm = l2_norm_on_horizon(&dev, horizon)?;
    let tail = tail_metric(&dev, fraction)?;
    let gain_ratio = match gain_ratio(traj, inputs, horizon) {
        Ok(r) => Some(r),
        Err(Error::UndefinedRatio) => None,
        Err(e) => return Err(e),
    };
    Ok(SynchronyReport {
        horizon,
        species_norms,
        total_norm,
        tail_fraction: fraction,
        threshold,
        tail_metric: tail,
        synchronized: tail < threshold,
        gain_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SignalKind;
    use proptest::prelude::*;

    fn grid(t_end: f64, steps: usize) -> Vec<f64> {
        (0..=steps).map(|i| t_end * i as f64 / steps as f64).collect()
    }

    fn traj_from(n: usize, n_species: usize, times: Vec<f64>, f: impl Fn(f64, usize, usize) -> f64) -> Trajectory {
        let mut out = Vec::new();
        for &t in &times {
            for k in 0..n_species {
                for j in 0..n {
                    out.push(f(t, k, j));
                }
            }
        }
        Trajectory::from_parts(times, n, vec![true; n_species], out).unwrap()
    }

    #[test]
    fn quadrature_examples() {
        let t = grid(4.0, 40);
        let ones = Signal::scalar(t.clone(), vec![1.0; 41]).unwrap();
        assert!((l2_norm_on_horizon(&ones, 4.0).unwrap() - 2.0).abs() < 1e-14);
        let zeros = Signal::scalar(t.clone(), vec![0.0; 41]).unwrap();
        assert_eq!(l2_norm_on_horizon(&zeros, 4.0).unwrap(), 0.0);

        let tau = std::f64::consts::TAU;
        let t = grid(tau, 20000);
        let sin = Signal::scalar(t.clone(), t.iter().map(|x| x.sin()).collect()).unwrap();
        let got = l2_norm_on_horizon(&sin, tau).unwrap();
        assert!((got - std::f64::consts::PI.sqrt()).abs() < 1e-8, "{got}");

        assert!(l2_norm_on_horizon(&ones, 4.5).is_err());
        assert!(l2_norm_on_horizon(&ones, -1.0).is_err());
        assert!(l2_norm_on_horizon(&ones, f64::NAN).is_err());
    }

    #[test]
    fn partial_interval_is_interpolated() {
        let ones = Signal::scalar(vec![0.0, 1.0, 2.0], vec![1.0; 3]).unwrap();
        assert!((l2_norm_on_horizon(&ones, 1.5).unwrap() - 1.5f64.sqrt()).abs() < 1e-15);
        let ramp = Signal::scalar(vec![0.0, 2.0], vec![0.0, 2.0]).unwrap();
        // |s|² is interpolated linearly between 0 and 4: ∫₀¹ 2t dt = 1
        assert!((l2_norm_on_horizon(&ramp, 1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn deviation_examples() {
        let tr = traj_from(2, 1, vec![0.0, 1.0], |_, _, j| [1.0, 3.0][j]);
        let d = deviation(&tr);
        assert_eq!(d.species(0, 0), &[-1.0, 1.0]);
        let same = traj_from(4, 2, grid(1.0, 10), |t, k, _| t.sin() + k as f64);
        let d = deviation(&same);
        assert!((0..d.len()).all(|s| d.max_abs(s) == 0.0));
        assert!(tail_synchrony(&d, 0.1, 1e-300).unwrap());
    }

    #[test]
    fn tail_window_and_verdict() {
        let t = grid(100.0, 100);
        // compartments differ by 0.5 until t=85, then by 1e-4
        let tr = traj_from(2, 1, t, |t, _, j| if t < 85.0 { 0.5 * j as f64 } else { 1e-4 * j as f64 });
        let d = deviation(&tr);
        assert!((tail_metric(&d, 0.1).unwrap() - 5e-5).abs() < 1e-15);
        assert!(tail_synchrony(&d, 0.1, 1e-3).unwrap());
        assert!(!tail_synchrony(&d, 0.2, 1e-3).unwrap());
        assert!(!tail_synchrony(&d, 0.1, 4e-5).unwrap());
        assert!(tail_synchrony(&d, 0.0, 1.0).is_err());
        assert!(tail_synchrony(&d, 1.0, 1.0).is_err());
        assert!(tail_synchrony(&d, 0.1, 0.0).is_err());
    }

    #[test]
    fn symmetric_inputs_give_undefined_ratio() {
        let tr = traj_from(3, 2, grid(10.0, 100), |t, _, j| t * j as f64);
        let inputs: Vec<InputSignal> = (0..3)
            .map(|j| InputSignal::new(SignalKind::Sinusoid { amplitude: 1.0, frequency: 0.3, phase: 0.0 }, 1, j).unwrap())
            .collect();
        assert!(matches!(gain_ratio(&tr, &inputs, 10.0), Err(Error::UndefinedRatio)));
        assert!(matches!(gain_ratio(&tr, &[], 10.0), Err(Error::UndefinedRatio)));
        let report = synchrony_report(&tr, &inputs, 0.1, 1e-3).unwrap();
        assert_eq!(report.gain_ratio, None);
        assert!(!report.synchronized);
    }

    #[test]
    fn gain_ratio_of_known_signals() {
        // ΔY = ±1 on two compartments, ΔW = ±0.5 from a step on compartment 1
        let tr = traj_from(2, 1, grid(10.0, 100), |_, _, j| 2.0 * j as f64);
        let w = InputSignal::new(SignalKind::Step { value: 1.0, t_on: 0.0, t_off: None }, 0, 0).unwrap();
        let rho = gain_ratio(&tr, &[w.clone()], 10.0).unwrap();
        assert!((rho - 2.0).abs() < 1e-12, "{rho}");
        let report = synchrony_report(&tr, &[w], 0.1, 1e-3).unwrap();
        assert!((report.gain_ratio.unwrap() - 2.0).abs() < 1e-12);
        assert!((report.total_norm - 20f64.sqrt()).abs() < 1e-12);
        let bad = InputSignal::new(SignalKind::Zero, 1, 0).unwrap();
        assert!(gain_ratio(&tr, &[bad], 10.0).is_err());
    }

    #[test]
    fn projection_route_matches_direct_norm() {
        for n in [2, 3, 7, 12] {
            let tr = traj_from(n, 2, grid(20.0, 400), |t, k, j| ((1 + j) as f64 * 0.3 * t + k as f64).sin() + 0.1 * j as f64);
            let d = deviation(&tr);
            for k in 0..2 {
                for horizon in [3.3, 10.0, 20.0] {
                    let direct = l2_norm_on_horizon(&d.species_signal(k), horizon).unwrap();
                    let via_q = projected_norm(&tr, k, horizon).unwrap();
                    assert!((direct - via_q).abs() < 1e-10, "n={n} k={k}: {direct} vs {via_q}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn deviation_sums_to_zero_and_ignores_common_signal(
            n in 2usize..8,
            vals in prop::collection::vec(-100.0f64..100.0, 2 * 8 * 5),
            shift in prop::collection::vec(-50.0f64..50.0, 2 * 5),
        ) {
            let times = grid(1.0, 4);
            let a = traj_from(n, 2, times.clone(), |t, k, j| vals[((t * 4.0).round() as usize * 2 + k) * 8 + j]);
            let b = traj_from(n, 2, times, |t, k, j| vals[((t * 4.0).round() as usize * 2 + k) * 8 + j] + shift[(t * 4.0).round() as usize * 2 + k]);
            let (da, db) = (deviation(&a), deviation(&b));
            for s in 0..da.len() {
                for k in 0..2 {
                    prop_assert!(da.species(s, k).iter().sum::<f64>().abs() < 1e-10);
                    for j in 0..n {
                        prop_assert!((da.value(s, k, j) - db.value(s, k, j)).abs() < 1e-10);
                    }
                }
            }
        }

        #[test]
        fn norm_is_monotone_in_horizon(
            vals in prop::collection::vec(-10.0f64..10.0, 50),
            t1 in 0.0f64..49.0,
            dt in 0.0f64..49.0,
        ) {
            let sig = Signal::scalar((0..50).map(|i| i as f64).collect(), vals).unwrap();
            let t2 = (t1 + dt).min(49.0);
            let (a, b) = (l2_norm_on_horizon(&sig, t1).unwrap(), l2_norm_on_horizon(&sig, t2).unwrap());
            prop_assert!(a >= 0.0);
            prop_assert!(b >= a - 1e-12);
        }
    }
}
