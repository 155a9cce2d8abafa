//! Subcommand implementations. Each returns data; printing and exit codes
//! live in the caller.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use syncnet_core::graph::{algebraic_connectivity, is_balanced, TopologyKind};
use syncnet_core::metrics::{deviation, synchrony_report, DeviationSeries, SynchronyReport};
use syncnet_core::passivity::{AnalysisMode, GainSet};
use syncnet_core::sim::{perturbed_initial_state, run_parallel, simulate, GoodwinParams, NetworkModel, SimOptions, Trajectory};
use syncnet_core::stability::{evaluate_synchronization, VerdictStatus};
use syncnet_core::Error as CoreError;

use crate::config::{graph_laplacian, GraphSpec, ModelSpec, ScenarioConfig};
use crate::report::{Command, DivergenceReport, ObserverReport, ReportRecord};
use crate::table::secant_constant;
use crate::CliError;

struct Analysis {
    mode: AnalysisMode,
    gains: GainSet,
    lambda: Vec<f64>,
    balanced: bool,
    verdict: syncnet_core::stability::SynchronizationVerdict,
    isolated_stable: bool,
    observer: Option<ObserverReport>,
    notes: Vec<String>,
}

fn core_err(e: CoreError) -> CliError {
    CliError::Config(e.to_string())
}

fn analyze(cfg: &ScenarioConfig, model: &NetworkModel) -> Result<Analysis, CliError> {
    let (mode, defaulted) = cfg.analysis_mode(model);
    let opts = cfg.certificate_options();
    let gains = model.gain_set(mode).map_err(core_err)?;
    let balanced = model.all_balanced();
    let verdict = evaluate_synchronization(model.sigma(), &gains, mode, balanced, &opts).map_err(core_err)?;
    let mut notes = Vec::new();

    let isolated = GainSet::new(mode, gains.gamma.clone(), gains.xi.clone(), vec![0.0; gains.len()]).map_err(core_err)?;
    let isolated_stable = evaluate_synchronization(model.sigma(), &isolated, mode, true, &opts)
        .map_err(core_err)?
        .synchronizes();
    if isolated_stable {
        notes.push("isolated stable, coupling unnecessary: the condition holds with every lambda_k = 0".into());
    }
    if defaulted && mode == AnalysisMode::OutputCoupling && cfg.coupling_mode() == syncnet_core::sim::CouplingMode::State {
        notes.push("state coupling acts only on species whose output is their state, so it coincides with output coupling; analysed under theorem1".into());
    }
    if verdict.status == VerdictStatus::ConditionFails {
        if verdict.structure == Some(syncnet_core::stability::Structure::Cyclic) {
            notes.push("cyclic secant condition fails; for a cyclic interconnection it is also necessary, so no diagonal certificate exists".into());
        } else {
            notes.push("no certificate found; this is not a proof that none exists".into());
        }
    }
    if let Some(params) = cfg.goodwin_params() {
        notes.push(goodwin_note(&params));
    }

    let observer = match &cfg.model {
        ModelSpec::Observer { q, p } => {
            let c = secant_constant(*p)?;
            let doubled = {
                let mut lambda = gains.lambda.clone();
                lambda[0] = 2.0 * q;
                let g = GainSet::new(mode, gains.gamma.clone(), gains.xi.clone(), lambda).map_err(core_err)?;
                evaluate_synchronization(model.sigma(), &g, mode, balanced, &opts).map_err(core_err)?
            };
            notes.push(
                "observer link: the reduced-Laplacian connectivity of [[0,0],[-q,q]] is q; the closed-form condition 0.5 + 2q > c reads it as 2q. The verdict uses q; both are reported".into(),
            );
            notes.push("observer equations use decay 0.5 and gain 0.5 on species 2 and 3; their gains (1, 1) equal those of b = c = 1".into());
            Some(ObserverReport {
                q: *q,
                c,
                lambda_reduced: gains.lambda[0],
                q_threshold_reduced: c - 0.5,
                verdict_reduced: verdict.status,
                lambda_doubled: 2.0 * q,
                q_threshold_doubled: (c - 0.5) / 2.0,
                verdict_doubled: doubled.status,
            })
        }
        _ => None,
    };

    Ok(Analysis {
        mode,
        lambda: gains.lambda.clone(),
        gains,
        balanced,
        verdict,
        isolated_stable,
        observer,
        notes,
    })
}

fn goodwin_note(p: &GoodwinParams) -> String {
    let set = if p.b == GoodwinParams::oscillatory(p.p).b && p.c == GoodwinParams::oscillatory(p.p).c {
        "; isolated loop loses stability at p = 16"
    } else if p.b == GoodwinParams::stated(p.p).b && p.c == GoodwinParams::stated(p.p).c {
        "; isolated loop loses stability only at p = 18"
    } else {
        ""
    };
    format!("Goodwin parameters b = {:?}, c = {:?}, p = {}{set}", p.b, p.c, p.p)
}

fn record(cfg: &ScenarioConfig, command: Command, a: Analysis) -> ReportRecord {
    ReportRecord {
        command,
        config: cfg.clone(),
        analysis_mode: a.mode,
        gains: a.gains,
        lambda: a.lambda,
        balanced: a.balanced,
        verdict: a.verdict,
        isolated_stable: a.isolated_stable,
        observer: a.observer,
        synchrony: None,
        oscillation_amplitude: None,
        divergence: None,
        notes: a.notes,
    }
}

pub fn cmd_check(cfg: &ScenarioConfig) -> Result<ReportRecord, CliError> {
    let model = cfg.build_model()?;
    let a = analyze(cfg, &model)?;
    Ok(record(cfg, Command::Check, a))
}

pub fn sim_options(cfg: &ScenarioConfig) -> SimOptions {
    SimOptions {
        dt: cfg.run.dt,
        t_end: cfg.run.t_end,
        sample_every: cfg.run.sample_every,
    }
}

/// Runs the analysis and the simulation. The trajectory is `None` only
/// when the run diverged.
pub fn cmd_simulate(cfg: &ScenarioConfig) -> Result<(ReportRecord, Option<Trajectory>), CliError> {
    let model = cfg.build_model()?;
    let a = analyze(cfg, &model)?;
    let mut rec = record(cfg, Command::Simulate, a);
    let inputs = cfg.input_signals()?;
    let x0 = perturbed_initial_state(&cfg.x0_base(&model), model.n(), cfg.run.perturbation, cfg.run.seed);
    match simulate(&model, &inputs, &x0, &sim_options(cfg)) {
        Ok(tr) => {
            let tr = tr.rounded_for_export();
            score(cfg, &mut rec, &tr)?;
            Ok((rec, Some(tr)))
        }
        Err(CoreError::Divergence { t, species, compartment }) => {
            rec.divergence = Some(DivergenceReport { t, species, compartment });
            rec.notes.push(format!(
                "simulation diverged at t = {t}, species {species}, compartment {compartment}"
            ));
            Ok((rec, None))
        }
        Err(e) => Err(core_err(e)),
    }
}

fn score(cfg: &ScenarioConfig, rec: &mut ReportRecord, tr: &Trajectory) -> Result<(), CliError> {
    if tr.n() == 1 {
        let from = tr.horizon() * (1.0 - cfg.run.tail_fraction);
        rec.oscillation_amplitude = Some(tr.tail_amplitude(from));
    } else {
        rec.synchrony = Some(rescore(cfg, tr)?);
    }
    Ok(())
}

/// The synchrony section recomputed from a trajectory.
pub fn rescore(cfg: &ScenarioConfig, tr: &Trajectory) -> Result<SynchronyReport, CliError> {
    let inputs = cfg.input_signals()?;
    synchrony_report(tr, &inputs, cfg.run.tail_fraction, cfg.run.threshold).map_err(core_err)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Trajectory::read_csv(BufReader::new(f)).map_err(core_err)
}

pub fn write_deviation_csv<W: Write>(dev: &DeviationSeries, mut w: W) -> std::io::Result<()> {
    let mut header = vec!["t".to_string()];
    for k in 0..dev.n_species() {
        header.extend((0..dev.n()).map(|j| format!("dy_k{}_j{}", k + 1, j + 1)));
    }
    writeln!(w, "{}", header.join(","))?;
    for s in 0..dev.len() {
        let mut line = format!("{:.11e}", dev.times[s]);
        for k in 0..dev.n_species() {
            for v in dev.species(s, k) {
                line.push_str(&format!(",{v:.11e}"));
            }
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Writes `trajectory.csv`, `deviation.csv` and `report.json` into `dir`.
pub fn write_outputs(dir: &Path, rec: &ReportRecord, tr: Option<&Trajectory>) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    if let Some(tr) = tr {
        let f = fs::File::create(dir.join("trajectory.csv")).map_err(io)?;
        let mut w = BufWriter::new(f);
        tr.write_csv(&mut w).map_err(io)?;
        w.flush().map_err(io)?;
        if tr.n() > 1 {
            let f = fs::File::create(dir.join("deviation.csv")).map_err(io)?;
            let mut w = BufWriter::new(f);
            write_deviation_csv(&deviation(tr), &mut w).map_err(io)?;
            w.flush().map_err(io)?;
        }
    }
    fs::write(dir.join("report.json"), rec.to_json()).map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub n: usize,
    pub lambda: f64,
    pub balanced: bool,
    pub positive: bool,
}

pub fn cmd_connectivity(spec: &GraphSpec) -> Result<ConnectivityReport, CliError> {
    let l = graph_laplacian(spec, None)?;
    let lambda = if l.n() < 2 { 0.0 } else { algebraic_connectivity(&l).map_err(core_err)? };
    Ok(ConnectivityReport {
        n: l.n(),
        lambda,
        balanced: is_balanced(&l),
        positive: lambda > 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    N,
    Q,
    P,
    Kind,
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n" => Ok(Self::N),
            "q" => Ok(Self::Q),
            "p" => Ok(Self::P),
            "kind" => Ok(Self::Kind),
            other => Err(format!("unknown sweep parameter `{other}` (expected n, q, p or kind)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: String,
    pub lambda: Option<Vec<f64>>,
    pub verdict: Option<VerdictStatus>,
    pub synchronized: Option<bool>,
    pub tail_metric: Option<f64>,
    pub oscillation_amplitude: Option<f64>,
    pub exit_code: i32,
    pub error: Option<String>,
}

/// Copy of `base` with one parameter replaced.
pub fn sweep_variant(base: &ScenarioConfig, param: SweepParam, value: &str) -> Result<ScenarioConfig, CliError> {
    let mut cfg = base.clone();
    let bad = |what: &str| CliError::Usage(format!("sweep value `{value}` is not a valid {what}"));
    let mut touched = false;
    match param {
        SweepParam::N => {
            let v: usize = value.parse().map_err(|_| bad("node count"))?;
            match &mut cfg.model {
                ModelSpec::Goodwin { n, .. } | ModelSpec::Generic { n, .. } => {
                    *n = v;
                    touched = true;
                }
                ModelSpec::Observer { .. } => {}
            }
            for_each_topology(&mut cfg, |_, _, n| *n = None);
        }
        SweepParam::Q => {
            let v: f64 = value.parse().map_err(|_| bad("weight"))?;
            if let ModelSpec::Observer { q, .. } = &mut cfg.model {
                *q = v;
                touched = true;
            }
            touched |= for_each_topology(&mut cfg, |_, q, _| *q = v);
        }
        SweepParam::P => {
            let v: f64 = value.parse().map_err(|_| bad("Hill exponent"))?;
            match &mut cfg.model {
                ModelSpec::Goodwin { p, .. } | ModelSpec::Observer { p, .. } => {
                    *p = v;
                    touched = true;
                }
                ModelSpec::Generic { .. } => {}
            }
        }
        SweepParam::Kind => {
            let v: TopologyKind = value.parse().map_err(|_| bad("topology kind"))?;
            touched = for_each_topology(&mut cfg, |k, _, _| *k = v);
        }
    }
    if !touched {
        return Err(CliError::Usage(format!("sweep parameter {param:?} does not apply to this config")));
    }
    Ok(cfg)
}

fn for_each_topology(cfg: &mut ScenarioConfig, mut f: impl FnMut(&mut TopologyKind, &mut f64, &mut Option<usize>)) -> bool {
    let mut any = false;
    if let Some(c) = cfg.coupling.as_mut() {
        for s in &mut c.species {
            if let GraphSpec::Topology { kind, q, n } = &mut s.graph {
                f(kind, q, n);
                any = true;
            }
        }
    }
    any
}

pub fn cmd_sweep(
    base: &ScenarioConfig,
    param: SweepParam,
    values: &[String],
    run_sim: bool,
    threads: Option<usize>,
) -> Result<Vec<SweepEntry>, CliError> {
    let variants = values
        .iter()
        .map(|v| sweep_variant(base, param, v).map(|c| (v.clone(), c)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(run_parallel(variants, threads, |_, (value, cfg)| {
        let result = if run_sim {
            cmd_simulate(&cfg).map(|(r, _)| r)
        } else {
            cmd_check(&cfg)
        };
        match result {
            Ok(rec) => SweepEntry {
                value,
                lambda: Some(rec.lambda.clone()),
                verdict: Some(rec.verdict.status),
                synchronized: rec.synchrony.as_ref().map(|s| s.synchronized),
                tail_metric: rec.synchrony.as_ref().map(|s| s.tail_metric),
                oscillation_amplitude: rec.oscillation_amplitude,
                exit_code: rec.exit_code(),
                error: None,
            },
            Err(e) => SweepEntry {
                value,
                lambda: None,
                verdict: None,
                synchronized: None,
                tail_metric: None,
                oscillation_amplitude: None,
                exit_code: e.exit_code(),
                error: Some(e.to_string()),
            },
        }
    }))
}
