//! `syncnet` command-line front end: scenario configs in, JSON reports and
//! CSV trajectories out.

pub mod commands;
pub mod config;
pub mod report;
pub mod table;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use syncnet_core::graph::TopologyKind;
use syncnet_core::passivity::AnalysisMode;

use crate::commands::SweepParam;
use crate::config::{load_config, GraphSpec, Overrides};
use crate::report::{EXIT_DIVERGENCE, EXIT_PASS, EXIT_USAGE};
use crate::table::SpeciesSelection;

pub const THREADS_ENV: &str = "SYNCNET_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        EXIT_USAGE
    }
}

#[derive(Debug, Parser)]
#[command(name = "syncnet", version, about = "Synchronization certificates and simulations for diffusively coupled networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for report.json and CSV files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,
    /// theorem1 (output coupling) or theorem2 (state coupling).
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<AnalysisMode>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Evaluate the synchronization condition without simulating.
    Check(ScenarioArgs),
    /// Simulate the network and score synchrony of the tail.
    Simulate(ScenarioArgs),
    /// Closed-form topology conditions for the Goodwin network.
    Table {
        #[arg(long, default_value_t = 17.0)]
        p: f64,
        /// 1 or 1+2; both selections when omitted.
        #[arg(long)]
        species: Option<SpeciesSelection>,
        /// Coupling weight used to instantiate the bounds on n.
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Algebraic connectivity and balance of a graph.
    Connectivity {
        /// JSON graph spec: {"topology": {...}}, {"weights": [[...]]} or {"laplacian": [[...]]}.
        #[arg(long, conflicts_with_all = ["kind", "laplacian", "weights"])]
        config: Option<PathBuf>,
        #[arg(long, requires_all = ["n", "q"])]
        kind: Option<TopologyKind>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        q: Option<f64>,
        /// Inline JSON matrix.
        #[arg(long, conflicts_with = "weights")]
        laplacian: Option<String>,
        /// Inline JSON matrix of weights.
        #[arg(long)]
        weights: Option<String>,
    },
    /// Run check (or simulate) over a list of values of one parameter.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// n, q, p or kind.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Simulate each variant instead of only checking it.
        #[arg(long)]
        simulate: bool,
    },
}

fn parse_mode(s: &str) -> Result<AnalysisMode, String> {
    s.parse::<AnalysisMode>().map_err(|e| e.to_string())
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        _ => Ok(None),
    }
}

fn emit<T: Serialize>(value: &T, out: &mut dyn Write) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    out.write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn scenario(args: &ScenarioArgs) -> Result<config::ScenarioConfig, CliError> {
    let mut cfg = load_config(&args.config)?;
    cfg.apply(&Overrides {
        seed: args.seed,
        dt: args.dt,
        t_end: args.t_end,
        mode: args.mode,
    });
    Ok(cfg)
}

fn parse_matrix(text: &str, what: &str) -> Result<Vec<Vec<f64>>, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    match cli.command {
        Cmd::Check(args) => {
            let cfg = scenario(&args)?;
            let rec = commands::cmd_check(&cfg)?;
            if let Some(dir) = &args.out {
                commands::write_outputs(dir, &rec, None)?;
            }
            emit(&rec, out)?;
            Ok(rec.exit_code())
        }
        Cmd::Simulate(args) => {
            let cfg = scenario(&args)?;
            let (rec, tr) = commands::cmd_simulate(&cfg)?;
            if let Some(dir) = &args.out {
                commands::write_outputs(dir, &rec, tr.as_ref())?;
            }
            if let Some(d) = &rec.divergence {
                let _ = writeln!(
                    err,
                    "divergence at t = {}, species {}, compartment {}",
                    d.t, d.species, d.compartment
                );
            }
            emit(&rec, out)?;
            Ok(rec.exit_code())
        }
        Cmd::Table { p, species, q, out: path } => {
            let table = table::condition_table(p, species, q)?;
            match path {
                Some(path) => write_file(&path, &(serde_json::to_string_pretty(&table).expect("table") + "\n"))?,
                None => emit(&table, out)?,
            }
            Ok(EXIT_PASS)
        }
        Cmd::Connectivity { config, kind, n, q, laplacian, weights } => {
            let spec = if let Some(path) = config {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                serde_path_to_error::deserialize::<_, GraphSpec>(de)
                    .map_err(|e| CliError::Config(format!("{}: {}", e.path(), e.inner())))?
            } else if let Some(kind) = kind {
                GraphSpec::Topology {
                    kind,
                    q: q.expect("required by clap"),
                    n,
                }
            } else if let Some(l) = laplacian {
                GraphSpec::Laplacian(parse_matrix(&l, "laplacian")?)
            } else if let Some(w) = weights {
                GraphSpec::Weights(parse_matrix(&w, "weights")?)
            } else {
                return Err(CliError::Usage("give --config, --kind/--n/--q, --laplacian or --weights".into()));
            };
            emit(&commands::cmd_connectivity(&spec)?, out)?;
            Ok(EXIT_PASS)
        }
        Cmd::Sweep { scenario: args, param, values, simulate } => {
            let cfg = scenario(&args)?;
            let entries = commands::cmd_sweep(&cfg, param, &values, simulate, threads_from_env()?)?;
            if let Some(dir) = &args.out {
                write_file(&dir.join("sweep.json"), &(serde_json::to_string_pretty(&entries).expect("sweep") + "\n"))?;
            }
            emit(&entries, out)?;
            Ok(if entries.iter().any(|e| e.exit_code == EXIT_DIVERGENCE) {
                EXIT_DIVERGENCE
            } else if entries.iter().any(|e| e.exit_code == EXIT_USAGE) {
                EXIT_USAGE
            } else {
                EXIT_PASS
            })
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
        }
    };
    match execute(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "syncnet: {e}");
            e.exit_code()
        }
    }
}
