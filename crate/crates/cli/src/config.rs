//! Scenario configuration: JSON in, validated network model out.

use std::path::Path;

use serde::{Deserialize, Serialize};

use syncnet_core::graph::{laplacian, make_topology, LaplacianMatrix, Topology, TopologyKind, WeightedDigraph};
use syncnet_core::numerics::DenseMatrix;
use syncnet_core::passivity::AnalysisMode;
use syncnet_core::sim::{
    build_goodwin, build_observer_pair, CouplingMode, GoodwinParams, InputSignal, NetworkModel, SignalKind,
    SpeciesBlock, StaticMap, DEFAULT_DT, DEFAULT_SAMPLE_EVERY, DEFAULT_T_END,
};
use syncnet_core::stability::{CertificateOptions, SpeciesInterconnection, DEFAULT_MAX_ITERS, DEFAULT_RESTARTS, DEFAULT_TOL};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub coupling: Option<CouplingSpec>,
    #[serde(default)]
    pub inputs: Vec<InputSpec>,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `b` and `c` default to `(0.5, 0.5, 0.5)` and `(1, 0.5, 0.5)`.
    Goodwin {
        n: usize,
        p: f64,
        #[serde(default)]
        b: Option<[f64; 3]>,
        #[serde(default)]
        c: Option<[f64; 3]>,
    },
    Observer { p: f64, q: f64 },
    Generic {
        n: usize,
        sigma: Vec<Vec<f64>>,
        blocks: Vec<BlockSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BlockSpec {
    Dynamic { decay: f64, gain: f64 },
    Hill { p: f64 },
    Linear { slope: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    #[serde(default)]
    pub mode: CouplingMode,
    #[serde(default)]
    pub species: Vec<SpeciesCoupling>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesCoupling {
    /// 1-based species index.
    pub species: usize,
    pub graph: GraphSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Topology {
        kind: TopologyKind,
        q: f64,
        #[serde(default)]
        n: Option<usize>,
    },
    /// Adjacency weights `a_{i,j}` (row `i` receives from column `j`).
    Weights(Vec<Vec<f64>>),
    Laplacian(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    /// 1-based species index.
    pub species: usize,
    /// 1-based compartment index.
    pub compartment: usize,
    pub signal: SignalKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub tail_fraction: f64,
    pub threshold: f64,
    pub sample_every: usize,
    /// Compartment `j` starts at `base + perturbation·j`.
    pub perturbation: f64,
    /// Per dynamic species; defaults to the Goodwin equilibrium, or 0.
    pub x0_base: Option<Vec<f64>>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            t_end: DEFAULT_T_END,
            seed: 0,
            tail_fraction: syncnet_core::metrics::DEFAULT_TAIL_FRACTION,
            threshold: syncnet_core::metrics::DEFAULT_THRESHOLD,
            sample_every: DEFAULT_SAMPLE_EVERY,
            perturbation: 0.1,
            x0_base: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSpec {
    /// Defaults to theorem1 when output coupling is used or every diffused
    /// species outputs its state, theorem2 otherwise.
    pub mode: Option<AnalysisMode>,
    pub max_iters: usize,
    pub restarts: usize,
    pub tol: f64,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            mode: None,
            max_iters: DEFAULT_MAX_ITERS,
            restarts: DEFAULT_RESTARTS,
            tol: DEFAULT_TOL,
        }
    }
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub mode: Option<AnalysisMode>,
}

fn cfg_err(field: impl AsRef<str>, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {msg}", field.as_ref()))
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let field = if path == "." { "config".to_string() } else { path };
        CliError::Config(format!("{field}: {inner}"))
    })
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

impl ScenarioConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.run.seed = seed;
        }
        if let Some(dt) = o.dt {
            self.run.dt = dt;
        }
        if let Some(t) = o.t_end {
            self.run.t_end = t;
        }
        if let Some(mode) = o.mode {
            self.analysis.mode = Some(mode);
        }
    }

    pub fn certificate_options(&self) -> CertificateOptions {
        CertificateOptions {
            max_iters: self.analysis.max_iters,
            restarts: self.analysis.restarts,
            tol: self.analysis.tol,
            seed: self.run.seed,
        }
    }

    pub fn goodwin_params(&self) -> Option<GoodwinParams> {
        match &self.model {
            ModelSpec::Goodwin { p, b, c, .. } => {
                let default = GoodwinParams::oscillatory(*p);
                Some(GoodwinParams {
                    p: *p,
                    b: b.unwrap_or(default.b),
                    c: c.unwrap_or(default.c),
                })
            }
            ModelSpec::Observer { p, .. } => Some(GoodwinParams::oscillatory(*p)),
            ModelSpec::Generic { .. } => None,
        }
    }

    pub fn n(&self) -> usize {
        match &self.model {
            ModelSpec::Goodwin { n, .. } | ModelSpec::Generic { n, .. } => *n,
            ModelSpec::Observer { .. } => 2,
        }
    }

    /// Builds and validates the network. Errors name the offending field.
    pub fn build_model(&self) -> Result<NetworkModel, CliError> {
        self.validate_run()?;
        let n = self.n();
        if n == 0 {
            return Err(cfg_err("model.n", "must be >= 1"));
        }
        let model = match &self.model {
            ModelSpec::Observer { p, q } => {
                if self.coupling.is_some() {
                    return Err(cfg_err("coupling", "the observer model fixes its own coupling"));
                }
                build_observer_pair(*p, *q).map_err(|e| cfg_err("model", e))?
            }
            ModelSpec::Goodwin { .. } => {
                let params = self.goodwin_params().expect("goodwin");
                let mut ls = self.laplacians(n, 4)?;
                if !ls[3].is_zero() {
                    return Err(cfg_err("coupling.species", "species 4 (Hill repression) is static and cannot be diffused"));
                }
                ls.truncate(3);
                let [l1, l2, l3]: [LaplacianMatrix; 3] = ls.try_into().expect("three species");
                build_goodwin(n, &params, [l1, l2, l3], self.coupling_mode()).map_err(|e| cfg_err("model", e))?
            }
            ModelSpec::Generic { sigma, blocks, .. } => {
                let big_n = blocks.len();
                if big_n == 0 {
                    return Err(cfg_err("model.blocks", "at least one block is required"));
                }
                if sigma.len() != big_n || sigma.iter().any(|r| r.len() != big_n) {
                    return Err(cfg_err("model.sigma", format!("must be {big_n}x{big_n} to match model.blocks")));
                }
                let sigma = DenseMatrix::from_rows(sigma)
                    .and_then(SpeciesInterconnection::new)
                    .map_err(|e| cfg_err("model.sigma", e))?;
                let species = blocks
                    .iter()
                    .map(|b| match *b {
                        BlockSpec::Dynamic { decay, gain } => SpeciesBlock::Dynamic { decay, gain },
                        BlockSpec::Hill { p } => SpeciesBlock::Static(StaticMap::Hill { p }),
                        BlockSpec::Linear { slope } => SpeciesBlock::Static(StaticMap::Linear { slope }),
                    })
                    .collect();
                let ls = self.laplacians(n, big_n)?;
                NetworkModel::new(n, species, sigma, ls, self.coupling_mode()).map_err(|e| cfg_err("model", e))?
            }
        };
        self.check_inputs(&model)?;
        Ok(model)
    }

    pub fn coupling_mode(&self) -> CouplingMode {
        match &self.model {
            ModelSpec::Observer { .. } => CouplingMode::State,
            _ => self.coupling.as_ref().map(|c| c.mode).unwrap_or_default(),
        }
    }

    fn laplacians(&self, n: usize, big_n: usize) -> Result<Vec<LaplacianMatrix>, CliError> {
        let mut out = vec![LaplacianMatrix::zero(n); big_n];
        let Some(coupling) = &self.coupling else {
            return Ok(out);
        };
        let mut seen = vec![false; big_n];
        for (i, sc) in coupling.species.iter().enumerate() {
            let field = format!("coupling.species[{i}]");
            if sc.species == 0 || sc.species > big_n {
                return Err(cfg_err(format!("{field}.species"), format!("{} out of range 1..={big_n}", sc.species)));
            }
            if std::mem::replace(&mut seen[sc.species - 1], true) {
                return Err(cfg_err(format!("{field}.species"), format!("species {} listed twice", sc.species)));
            }
            out[sc.species - 1] = graph_laplacian(&sc.graph, Some(n)).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{field}.graph.{m}")),
                other => other,
            })?;
        }
        Ok(out)
    }

    fn validate_run(&self) -> Result<(), CliError> {
        let r = &self.run;
        if !(r.dt > 0.0) || !r.dt.is_finite() {
            return Err(cfg_err("run.dt", format!("must be > 0, got {}", r.dt)));
        }
        if !(r.t_end >= r.dt) || !r.t_end.is_finite() {
            return Err(cfg_err("run.t_end", format!("must be >= dt, got {}", r.t_end)));
        }
        if !(r.tail_fraction > 0.0 && r.tail_fraction < 1.0) {
            return Err(cfg_err("run.tail_fraction", format!("must lie in (0, 1), got {}", r.tail_fraction)));
        }
        if !(r.threshold > 0.0) || !r.threshold.is_finite() {
            return Err(cfg_err("run.threshold", format!("must be > 0, got {}", r.threshold)));
        }
        if r.sample_every == 0 {
            return Err(cfg_err("run.sample_every", "must be >= 1"));
        }
        if !r.perturbation.is_finite() {
            return Err(cfg_err("run.perturbation", "must be finite"));
        }
        if self.analysis.restarts == 0 || self.analysis.max_iters == 0 {
            return Err(cfg_err("analysis", "max_iters and restarts must be >= 1"));
        }
        if !(self.analysis.tol >= 0.0) {
            return Err(cfg_err("analysis.tol", "must be >= 0"));
        }
        Ok(())
    }

    fn check_inputs(&self, model: &NetworkModel) -> Result<(), CliError> {
        for (i, s) in self.inputs.iter().enumerate() {
            if s.species == 0 || s.species > model.n_species() {
                return Err(cfg_err(format!("inputs[{i}].species"), format!("{} out of range 1..={}", s.species, model.n_species())));
            }
            if s.compartment == 0 || s.compartment > model.n() {
                return Err(cfg_err(
                    format!("inputs[{i}].compartment"),
                    format!("{} out of range 1..={}", s.compartment, model.n()),
                ));
            }
            InputSignal::new(s.signal.clone(), 0, 0).map_err(|e| cfg_err(format!("inputs[{i}].signal"), e))?;
        }
        if let Some(base) = &self.run.x0_base {
            if base.len() != model.n_dynamic() {
                return Err(cfg_err("run.x0_base", format!("needs {} entries, one per dynamic species", model.n_dynamic())));
            }
        }
        Ok(())
    }

    pub fn input_signals(&self) -> Result<Vec<InputSignal>, CliError> {
        self.inputs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                InputSignal::new(s.signal.clone(), s.species - 1, s.compartment - 1)
                    .map_err(|e| cfg_err(format!("inputs[{i}]"), e))
            })
            .collect()
    }

    /// Per-dynamic-species base point of the initial condition.
    pub fn x0_base(&self, model: &NetworkModel) -> Vec<f64> {
        if let Some(base) = &self.run.x0_base {
            return base.clone();
        }
        match self.goodwin_params() {
            Some(p) => p.equilibrium().to_vec(),
            None => vec![0.0; model.n_dynamic()],
        }
    }

    /// The analysis mode in effect and whether it was chosen by default.
    pub fn analysis_mode(&self, model: &NetworkModel) -> (AnalysisMode, bool) {
        if let Some(m) = self.analysis.mode {
            return (m, false);
        }
        let identity_outputs = model
            .coupling()
            .iter()
            .zip(model.species())
            .all(|(l, b)| l.is_zero() || b.is_dynamic());
        let mode = if self.coupling_mode() == CouplingMode::Output || identity_outputs {
            AnalysisMode::OutputCoupling
        } else {
            AnalysisMode::StateCoupling
        };
        (mode, true)
    }
}

/// Laplacian of a graph spec; `n` fills in or checks the node count.
pub fn graph_laplacian(spec: &GraphSpec, n: Option<usize>) -> Result<LaplacianMatrix, CliError> {
    let check_n = |got: usize, field: &str| match n {
        Some(n) if n != got => Err(cfg_err(field, format!("has {got} nodes but the model has {n} compartments"))),
        _ => Ok(()),
    };
    let square = |rows: &Vec<Vec<f64>>, field: &str| -> Result<DenseMatrix, CliError> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(cfg_err(field, "must be a non-empty square matrix"));
        }
        check_n(k, field)?;
        DenseMatrix::from_rows(rows).map_err(|e| cfg_err(field, e))
    };
    match spec {
        GraphSpec::Topology { kind, q, n: tn } => {
            let nodes = match (tn, n) {
                (Some(a), _) => {
                    check_n(*a, "topology.n")?;
                    *a
                }
                (None, Some(b)) => b,
                (None, None) => return Err(cfg_err("topology.n", "node count is required")),
            };
            if nodes == 1 {
                return Ok(LaplacianMatrix::zero(1));
            }
            let g = make_topology(&Topology::new(*kind, nodes, *q)).map_err(|e| cfg_err("topology", e))?;
            Ok(laplacian(&g))
        }
        GraphSpec::Weights(rows) => {
            let w = square(rows, "weights")?;
            let g = WeightedDigraph::new(w).map_err(|e| cfg_err("weights", e))?;
            Ok(laplacian(&g))
        }
        GraphSpec::Laplacian(rows) => {
            let m = square(rows, "laplacian")?;
            LaplacianMatrix::from_matrix(m).map_err(|e| cfg_err("laplacian", e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_goodwin_parses_with_defaults() {
        let cfg = parse_config(r#"{"model": {"goodwin": {"n": 4, "p": 17}}}"#).unwrap();
        assert_eq!(cfg.run, RunSpec::default());
        let m = cfg.build_model().unwrap();
        assert_eq!(m.n(), 4);
        assert!(m.coupling().iter().all(LaplacianMatrix::is_zero));
        assert_eq!(cfg.goodwin_params().unwrap(), GoodwinParams::oscillatory(17.0));
    }

    #[test]
    fn diagnostics_name_the_field() {
        let err = |text: &str| match parse_config(text).and_then(|c| c.build_model().map(|_| ())) {
            Err(CliError::Config(m)) => m,
            other => panic!("expected config error, got {other:?}"),
        };
        assert!(err(r#"{"model": {"goodwin": {"n": 4, "p": 17, "bogus": 1}}}"#).contains("bogus"));
        assert!(err(r#"{"model": {"goodwin": {"n": "four", "p": 17}}}"#).starts_with("model.goodwin.n"));
        assert!(err(r#"{"model": {"goodwin": {"n": 4, "p": 17}}, "run": {"dt": -1}}"#).starts_with("run.dt"));
        let m = err(r#"{"model": {"goodwin": {"n": 4, "p": 17}},
                        "coupling": {"species": [{"species": 4, "graph": {"topology": {"kind": "ring", "q": 1}}}]}}"#);
        assert!(m.starts_with("coupling.species"), "{m}");
        let m = err(r#"{"model": {"goodwin": {"n": 4, "p": 17}},
                        "coupling": {"species": [{"species": 1, "graph": {"topology": {"kind": "ring", "q": 1, "n": 5}}}]}}"#);
        assert!(m.starts_with("coupling.species[0].graph.topology.n"), "{m}");
        let m = err(r#"{"model": {"goodwin": {"n": 4, "p": 17}},
                        "coupling": {"species": [{"species": 1, "graph": {"topology": {"kind": "hexagon", "q": 1}}}]}}"#);
        assert!(m.contains("hexagon"), "{m}");
        let m = err(r#"{"model": {"goodwin": {"n": 2, "p": 17}},
                        "inputs": [{"species": 1, "compartment": 3, "signal": "zero"}]}"#);
        assert!(m.starts_with("inputs[0].compartment"), "{m}");
        assert!(err(r#"{"model": {"observer": {"p": 17, "q": 1}}, "coupling": {}}"#).starts_with("coupling"));
        assert!(err("{\"model\": ").contains("EOF"));
    }

    #[test]
    fn generic_model_builds() {
        let cfg = parse_config(
            r#"{"model": {"generic": {"n": 3, "sigma": [[0, -1], [1, 0]],
                          "blocks": [{"dynamic": {"decay": 1, "gain": 1}}, {"linear": {"slope": 2}}]}},
                "coupling": {"mode": "output", "species": [{"species": 1, "graph": {"weights": [[0,1,0],[1,0,1],[0,1,0]]}}]}}"#,
        )
        .unwrap();
        let m = cfg.build_model().unwrap();
        assert_eq!(m.n_species(), 2);
        assert_eq!(m.n_dynamic(), 1);
        assert_eq!(cfg.analysis_mode(&m), (AnalysisMode::OutputCoupling, true));
    }

    #[test]
    fn explicit_laplacian_spec() {
        let l = graph_laplacian(&GraphSpec::Laplacian(vec![vec![0.0, 0.0], vec![-1.0, 1.0]]), None).unwrap();
        assert_eq!(l.matrix()[(1, 0)], -1.0);
        assert!(graph_laplacian(&GraphSpec::Laplacian(vec![vec![1.0, 0.0], vec![-1.0, 1.0]]), None).is_err());
        assert!(graph_laplacian(&GraphSpec::Weights(vec![vec![0.0, 1.0]]), None).is_err());
    }
}
