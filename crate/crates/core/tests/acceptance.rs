//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test -p syncnet-core --test
//! acceptance -- 4 6`.
//!
//! Criteria listed in `KNOWN_UNATTAINABLE` still run and still print FAIL;
//! they do not fail the process, but a surprise PASS is reported so the list
//! can be pruned.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use syncnet_core::graph::{algebraic_connectivity, laplacian, make_topology, Topology, TopologyKind};
use syncnet_core::metrics::{deviation, gain_ratio, tail_synchrony};
use syncnet_core::numerics::{build_projection_q, DenseMatrix};
use syncnet_core::passivity::{gain_hill, gain_linear_first_order, GainSet};
use syncnet_core::sim::{
    build_goodwin, build_observer_pair, perturbed_initial_state, simulate, CouplingMode, GoodwinParams, InputSignal,
    NetworkModel, SignalKind, SimOptions, SpeciesBlock, Trajectory,
};
use syncnet_core::stability::{
    dissipativity_matrix, find_diagonal_certificate, sec, secant_condition_cyclic, CertificateOptions, SearchStatus,
    SpeciesInterconnection,
};
use syncnet_core::graph::LaplacianMatrix;

/// With b=(0.5,1,1), c=(1,1,1) the isolated loop's Hopf point is p=18, so
/// it does not oscillate at p=17.
const KNOWN_UNATTAINABLE: &[&str] = &["5"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (&'static str, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("1", "Q identities n=2..50", Duration::from_secs(1), c1_q_identities),
        ("2", "connectivity closed forms", Duration::from_secs(1), c2_connectivity),
        ("3", "Hill gain and secant constant at p=17", Duration::from_secs(1), c3_hill_gain),
        ("4", "secant vs certificate on 200 cyclic systems", Duration::from_secs(30), c4_secant_certificate),
        ("5", "isolated Goodwin bifurcation, b=(0.5,1,1) c=(1,1,1)", Duration::from_secs(10), c5_bifurcation),
        ("5b", "isolated Goodwin bifurcation, b=(0.5,0.5,0.5) c=(1,0.5,0.5)", Duration::from_secs(10), c5b_bifurcation_oscillatory),
        ("6", "ring n=4 q=0.15 synchronizes", Duration::from_secs(30), c6_ring_four),
        ("7", "ring n=45 q=0.15 does not synchronize", Duration::from_secs(120), c7_ring_forty_five),
        ("8", "observer converges for q=1, not for q=0", Duration::from_secs(10), c8_observer),
        ("9", "uniform gain ratio on certified complete graph", Duration::from_secs(60), c9_gain_ratio),
        ("10", "first-order cocoercivity along trajectories", Duration::from_secs(10), c10_cocoercivity),
        ("fig5", "complete q=0.003 n=180 synchronizes", Duration::from_secs(120), fig5_complete),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    for (id, name, budget, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = result.pass && in_time;
        let known = KNOWN_UNATTAINABLE.contains(&id);
        let tag = match (pass, known) {
            (true, false) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (known unattainable)",
            (true, true) => "PASS (listed as unattainable)",
        };
        println!(
            "{tag} [{id}] {name}: {} ({:.2}s of {}s{})",
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
        if pass == known {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criterion outcome(s) differ from expectation");
        std::process::exit(1);
    }
}

fn c1_q_identities() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in 2..=50 {
        let q = build_projection_q(n).unwrap();
        let m = q.matrix();
        let qqt = m.matmul(&m.transpose()).unwrap();
        let e1 = qqt.sub(&DenseMatrix::identity(n - 1)).unwrap().max_abs();
        let e2 = m.matvec(&vec![1.0; n]).unwrap().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut centering = DenseMatrix::identity(n);
        for i in 0..n {
            for j in 0..n {
                centering[(i, j)] -= 1.0 / n as f64;
            }
        }
        let e3 = m.transpose().matmul(m).unwrap().sub(&centering).unwrap().max_abs();
        worst = worst.max(e1).max(e2).max(e3);
    }
    outcome(worst < 1e-12, format!("max residual {worst:.2e}"))
}

fn c2_connectivity() -> Outcome {
    use std::f64::consts::PI;
    let mut worst: f64 = 0.0;
    for kind in TopologyKind::ALL {
        for n in 3..=30 {
            for q in [0.1, 1.0, 10.0] {
                let l = laplacian(&make_topology(&Topology::new(kind, n, q)).unwrap());
                let lam = algebraic_connectivity(&l).unwrap();
                let nf = n as f64;
                let expected = match kind {
                    TopologyKind::Complete => nf * q,
                    TopologyKind::Star => q,
                    TopologyKind::Ring => 4.0 * q * (PI / nf).sin().powi(2),
                    TopologyKind::Line => 2.0 * q * (1.0 - (PI / nf).cos()),
                };
                worst = worst.max((lam - expected).abs());
            }
        }
    }
    outcome(worst < 1e-9, format!("max error {worst:.2e}"))
}

fn c3_hill_gain() -> Outcome {
    let g4 = gain_hill(17.0).unwrap();
    let c = 1.0 / (g4 * sec(std::f64::consts::PI / 4.0).powi(4));
    let pass = (0.225..=0.24).contains(&g4) && (1.05..=1.08).contains(&c);
    outcome(pass, format!("gamma4={g4:.6}, c={c:.4}"))
}

/// Independent negative-definiteness check: Cholesky of `−(DE + EᵀD)`.
fn negative_definite(e: &DenseMatrix, d: &[f64]) -> bool {
    let n = d.len();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = -(d[i] * e[(i, j)] + e[(j, i)] * d[j]);
        }
    }
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = a[i][i] - s;
                if !(v > 0.0) {
                    return false;
                }
                l[i][i] = v.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    true
}

fn c4_secant_certificate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202_404);
    let opts = CertificateOptions::default();
    let (mut agree, mut total, mut feasible, mut bad_cert) = (0, 0, 0, 0);
    let mut disagreements = Vec::new();
    while total < 200 {
        let n = rng.gen_range(3..=5);
        let gamma: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.gen_range(-1.0..1.0))).collect();
        let secant = secant_condition_cyclic(&gamma).unwrap();
        if (secant.lhs / secant.rhs - 1.0).abs() <= 0.05 {
            continue;
        }
        total += 1;
        let sigma = SpeciesInterconnection::cyclic(n).unwrap();
        let gains = GainSet::output_coupling(gamma.clone(), vec![0.0; n]).unwrap();
        let e = dissipativity_matrix(&sigma, &gains).unwrap();
        let search = find_diagonal_certificate(&e, &opts).unwrap();
        let found = search.status == SearchStatus::Found;
        if let Some(cert) = &search.certificate {
            if !negative_definite(e.matrix(), &cert.d) {
                bad_cert += 1;
            }
        }
        feasible += secant.pass as usize;
        if found == secant.pass {
            agree += 1;
        } else {
            disagreements.push(format!("{gamma:?}"));
        }
    }
    let mut detail = format!("{agree}/{total} agree ({feasible} secant-feasible), {bad_cert} certificates failed re-verification");
    if !disagreements.is_empty() {
        detail.push_str(&format!("; first disagreement {}", disagreements[0]));
    }
    outcome(agree == total && bad_cert == 0, detail)
}

fn isolated_tail_amplitude(params: GoodwinParams) -> f64 {
    let zero = || LaplacianMatrix::zero(1);
    let model = build_goodwin(1, &params, [zero(), zero(), zero()], CouplingMode::State).unwrap();
    let opts = SimOptions {
        dt: 0.01,
        t_end: 2000.0,
        sample_every: 10,
    };
    let tr = simulate(&model, &[], &[0.1, 0.1, 0.1], &opts).unwrap();
    tr.tail_amplitude(0.9 * 2000.0)
}

fn bifurcation(make: fn(f64) -> GoodwinParams) -> Outcome {
    let a15 = isolated_tail_amplitude(make(15.0));
    let a17 = isolated_tail_amplitude(make(17.0));
    outcome(
        a15 < 1e-4 && a17 > 0.01,
        format!("tail amplitude p=15: {a15:.3e} (< 1e-4), p=17: {a17:.3e} (> 0.01)"),
    )
}

fn c5_bifurcation() -> Outcome {
    bifurcation(GoodwinParams::stated)
}

fn c5b_bifurcation_oscillatory() -> Outcome {
    bifurcation(GoodwinParams::oscillatory)
}

fn topology(kind: TopologyKind, n: usize, q: f64) -> LaplacianMatrix {
    laplacian(&make_topology(&Topology::new(kind, n, q)).unwrap())
}

fn goodwin_tail(n: usize, couplings: [LaplacianMatrix; 3], seed: u64) -> (bool, f64) {
    let params = GoodwinParams::oscillatory(17.0);
    let model = build_goodwin(n, &params, couplings, CouplingMode::State).unwrap();
    let x0 = perturbed_initial_state(&params.equilibrium(), n, 0.1, seed);
    let opts = SimOptions {
        dt: 0.01,
        t_end: 2000.0,
        sample_every: 10,
    };
    let tr = simulate(&model, &[], &x0, &opts).unwrap();
    let dev = deviation(&tr);
    let metric = syncnet_core::metrics::tail_metric(&dev, 0.1).unwrap();
    (tail_synchrony(&dev, 0.1, 1e-3).unwrap(), metric)
}

fn c6_ring_four() -> Outcome {
    let l = topology(TopologyKind::Ring, 4, 0.15);
    let (sync, metric) = goodwin_tail(4, [l.clone(), l, LaplacianMatrix::zero(4)], 0);
    outcome(sync, format!("tail deviation {metric:.3e} (< 1e-3)"))
}

fn c7_ring_forty_five() -> Outcome {
    let l = topology(TopologyKind::Ring, 45, 0.15);
    let (sync, metric) = goodwin_tail(45, [l.clone(), l, LaplacianMatrix::zero(45)], 0);
    outcome(!sync, format!("tail deviation {metric:.3e} (>= 1e-3)"))
}

fn fig5_complete() -> Outcome {
    let n = 180;
    let l = topology(TopologyKind::Complete, n, 0.003);
    let (sync, metric) = goodwin_tail(n, [l, LaplacianMatrix::zero(n), LaplacianMatrix::zero(n)], 0);
    outcome(sync, format!("tail deviation {metric:.3e} (< 1e-3)"))
}

fn observer_tail_error(q: f64) -> f64 {
    let model = build_observer_pair(17.0, q).unwrap();
    let x0 = perturbed_initial_state(&[1.0, 1.0, 1.0], 2, 0.1, 0);
    let opts = SimOptions {
        dt: 0.01,
        t_end: 2000.0,
        sample_every: 10,
    };
    let tr = simulate(&model, &[], &x0, &opts).unwrap();
    let start = tr.times.iter().position(|&t| t >= 1800.0).unwrap();
    (start..tr.len())
        .flat_map(|s| (0..3).map(move |k| (s, k)))
        .map(|(s, k)| (tr.output(s, k, 0) - tr.output(s, k, 1)).abs())
        .fold(0.0, f64::max)
}

fn c8_observer() -> Outcome {
    let e1 = observer_tail_error(1.0);
    let e0 = observer_tail_error(0.0);
    outcome(
        e1 < 1e-3 && e0 >= 1e-3,
        format!("tail state error q=1: {e1:.3e} (< 1e-3), q=0: {e0:.3e} (>= 1e-3)"),
    )
}

/// Antisymmetric pulses: `+w` on one compartment, `−w` on another, same
/// species, switched off well before the first horizon.
fn antisymmetric_inputs(rng: &mut ChaCha8Rng, n: usize) -> Vec<InputSignal> {
    let mut inputs = Vec::new();
    for _ in 0..rng.gen_range(1..=3) {
        let species = rng.gen_range(0..3);
        let a = rng.gen_range(0..n);
        let b = (a + rng.gen_range(1..n)) % n;
        let value = rng.gen_range(0.05..0.5) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let t_on = rng.gen_range(0.0..100.0);
        let t_off = t_on + rng.gen_range(5.0..100.0);
        for (j, v) in [(a, value), (b, -value)] {
            let kind = SignalKind::Step {
                value: v,
                t_on,
                t_off: Some(t_off),
            };
            inputs.push(InputSignal::new(kind, species, j).unwrap());
        }
    }
    inputs
}

fn c9_gain_ratio() -> Outcome {
    let n = 5;
    let params = GoodwinParams::oscillatory(17.0);
    let l = topology(TopologyKind::Complete, n, 0.3);
    let model = build_goodwin(n, &params, [l.clone(), l, LaplacianMatrix::zero(n)], CouplingMode::State).unwrap();
    let certified = certified(&model);
    let x0 = perturbed_initial_state(&params.equilibrium(), n, 0.0, 0);
    let opts = SimOptions {
        dt: 0.01,
        t_end: 2000.0,
        sample_every: 10,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut growth = 0;
    let mut finite = true;
    for _ in 0..20 {
        let inputs = antisymmetric_inputs(&mut rng, n);
        let tr: Trajectory = simulate(&model, &inputs, &x0, &opts).unwrap();
        let rho: Vec<f64> = [500.0, 1000.0, 2000.0]
            .iter()
            .map(|&t| gain_ratio(&tr, &inputs, t).unwrap())
            .collect();
        finite &= rho.iter().all(|r| r.is_finite());
        if rho[2] > 1.01 * rho[0] || rho[1] > 1.01 * rho[0] {
            growth += 1;
        }
        lo = lo.min(rho[2]);
        hi = hi.max(rho[2]);
    }
    let ratio = hi / lo;
    outcome(
        certified && finite && ratio < 100.0 && growth == 0,
        format!("certified={certified}, rho in [{lo:.4}, {hi:.4}], max/min {ratio:.2} (< 100), runs growing with T: {growth}"),
    )
}

fn certified(model: &NetworkModel) -> bool {
    use syncnet_core::passivity::AnalysisMode;
    use syncnet_core::stability::evaluate_synchronization;
    let gains = model.gain_set(AnalysisMode::StateCoupling).unwrap();
    evaluate_synchronization(
        model.sigma(),
        &gains,
        AnalysisMode::StateCoupling,
        model.all_balanced(),
        &CertificateOptions::default(),
    )
    .unwrap()
    .synchronizes()
}

/// Composite Simpson on the uniform grid up to sample `2m`.
fn c10_cocoercivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dt = 0.01;
    let t_end = 20.0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let a = 10f64.powf(rng.gen_range(-0.7..0.7));
        let b = 10f64.powf(rng.gen_range(-0.7..0.7));
        let gamma = gain_linear_first_order(a, b).unwrap();
        let model = NetworkModel::new(
            1,
            vec![SpeciesBlock::Dynamic { decay: a, gain: b }],
            SpeciesInterconnection::new(DenseMatrix::zeros(1, 1)).unwrap(),
            vec![LaplacianMatrix::zero(1)],
            CouplingMode::Output,
        )
        .unwrap();
        let signal = |rng: &mut ChaCha8Rng| {
            let kind = if rng.gen::<bool>() {
                SignalKind::Sinusoid {
                    amplitude: rng.gen_range(0.1..2.0),
                    frequency: rng.gen_range(0.01..0.3),
                    phase: rng.gen_range(0.0..6.3),
                }
            } else {
                SignalKind::Noise {
                    amplitude: rng.gen_range(0.1..2.0),
                    bandwidth: 0.3,
                    seed: rng.gen(),
                }
            };
            InputSignal::new(kind, 0, 0).unwrap()
        };
        let (u1, u2) = (signal(&mut rng), signal(&mut rng));
        let x0 = rng.gen_range(-1.0..1.0);
        let opts = SimOptions {
            dt,
            t_end,
            sample_every: 1,
        };
        let y1 = simulate(&model, &[u1.clone()], &[x0], &opts).unwrap();
        let y2 = simulate(&model, &[u2.clone()], &[x0], &opts).unwrap();
        let f_yy: Vec<f64> = (0..y1.len()).map(|s| (y2.output(s, 0, 0) - y1.output(s, 0, 0)).powi(2)).collect();
        let f_yu: Vec<f64> = (0..y1.len())
            .map(|s| {
                let t = y1.times[s];
                (y2.output(s, 0, 0) - y1.output(s, 0, 0)) * (u2.value(t) - u1.value(t))
            })
            .collect();
        let (mut yy, mut yu) = (0.0, 0.0);
        for m in 1..=(y1.len() - 1) / 2 {
            let (i0, i1, i2) = (2 * m - 2, 2 * m - 1, 2 * m);
            yy += dt / 3.0 * (f_yy[i0] + 4.0 * f_yy[i1] + f_yy[i2]);
            yu += dt / 3.0 * (f_yu[i0] + 4.0 * f_yu[i1] + f_yu[i2]);
            worst = worst.max(gamma * yy - yu);
        }
    }
    outcome(worst <= 1e-6, format!("max of gamma*|dy|^2 - <dy,du> over all sampled T: {worst:.3e} (<= 1e-6)"))
}
