//! Fixed-step RK4 simulation of `n` identical compartments, each holding
//! `N` species blocks wired by `Σ`, with diffusive coupling of each species
//! across compartments through its Laplacian.
//!
//! Dynamic species obey `ẋ = −a·x + b·v`, `y = x`; static species output
//! `y = h(v)`. The block input is
//! `v_{k,j} = w_{k,j} + Σ_i σ_{k,i} y_{i,j} + Σ_z a^k_{j,z} (s_{k,z} − s_{k,j})`
//! where `s` is the output (output coupling) or the state (state coupling).

use std::fmt;
use std::io::{self, BufRead, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{algebraic_connectivity, is_balanced, laplacian, LaplacianMatrix, WeightedDigraph};
use crate::numerics::DenseMatrix;
use crate::passivity::{gain_hill, gain_linear_first_order, gain_static_monotone, AnalysisMode, GainSet};
use crate::stability::SpeciesInterconnection;

pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_T_END: f64 = 2000.0;
pub const DEFAULT_SAMPLE_EVERY: usize = 10;
/// Any state beyond this magnitude counts as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e9;

#[derive(Clone)]
pub enum StaticMap {
    /// `σ ↦ −1/(max(σ,0)^p + 1)`: monotone increasing on `σ ≥ 0`.
    Hill { p: f64 },
    Linear { slope: f64 },
    /// An arbitrary map with a declared Lipschitz constant (used for gains).
    Custom {
        map: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        lipschitz: f64,
    },
}

impl StaticMap {
    pub fn eval(&self, sigma: f64) -> f64 {
        match self {
            Self::Hill { p } => crate::passivity::hill_repression(*p, sigma),
            Self::Linear { slope } => slope * sigma,
            Self::Custom { map, .. } => map(sigma),
        }
    }

    pub fn gain(&self) -> Result<f64> {
        match self {
            Self::Hill { p } => gain_hill(*p),
            Self::Linear { slope } => gain_static_monotone(*slope),
            Self::Custom { lipschitz, .. } => gain_static_monotone(*lipschitz),
        }
    }
}

impl fmt::Debug for StaticMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Hill { p } => write!(f, "Hill {{ p: {p} }}"),
            Self::Linear { slope } => write!(f, "Linear {{ slope: {slope} }}"),
            Self::Custom { lipschitz, .. } => write!(f, "Custom {{ lipschitz: {lipschitz} }}"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum SpeciesBlock {
    Dynamic { decay: f64, gain: f64 },
    Static(StaticMap),
}

impl SpeciesBlock {
    pub fn is_dynamic(&self) -> bool {
        matches!(self, Self::Dynamic { .. })
    }

    /// Cocoercivity gain `γ` of the block.
    pub fn gain(&self) -> Result<f64> {
        match self {
            Self::Dynamic { decay, gain } => gain_linear_first_order(*decay, *gain),
            Self::Static(map) => map.gain(),
        }
    }

    /// Gain `ξ` of the output map: identity for dynamic blocks.
    pub fn output_gain(&self) -> Result<f64> {
        match self {
            Self::Dynamic { .. } => Ok(1.0),
            Self::Static(map) => map.gain(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CouplingMode {
    Output,
    #[default]
    State,
}

/// Per-species diffusion operator computing `c_j = Σ_z a_{j,z}(s_z − s_j)`.
#[derive(Debug, Clone)]
enum Diffusion {
    None,
    /// All-to-all with equal weight `q`: `c_j = q(Σ_z s_z − n·s_j)`.
    Uniform { q: f64 },
    Sparse { rows: Vec<Vec<(usize, f64)>> },
}

impl Diffusion {
    fn from_laplacian(l: &LaplacianMatrix) -> Self {
        if l.is_zero() {
            return Self::None;
        }
        let n = l.n();
        let m = l.matrix();
        let q = -m[(0, 1)];
        let uniform = (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == -q));
        if uniform && n > 3 {
            return Self::Uniform { q };
        }
        let rows = (0..n)
            .map(|j| {
                (0..n)
                    .filter(|&z| z != j && m[(j, z)] != 0.0)
                    .map(|z| (z, -m[(j, z)]))
                    .collect()
            })
            .collect();
        Self::Sparse { rows }
    }

    fn apply(&self, s: &[f64], out: &mut [f64]) {
        match self {
            Self::None => out.iter_mut().for_each(|c| *c = 0.0),
            Self::Uniform { q } => {
                let total: f64 = s.iter().sum();
                let n = s.len() as f64;
                for (c, &sj) in out.iter_mut().zip(s) {
                    *c = q * (total - n * sj);
                }
            }
            Self::Sparse { rows } => {
                for (j, row) in rows.iter().enumerate() {
                    out[j] = row.iter().map(|&(z, a)| a * (s[z] - s[j])).sum();
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    n: usize,
    species: Vec<SpeciesBlock>,
    sigma: SpeciesInterconnection,
    coupling: Vec<LaplacianMatrix>,
    mode: CouplingMode,
    diffusion: Vec<Diffusion>,
    dynamic_index: Vec<Option<usize>>,
}

impl NetworkModel {
    /// Validates the pieces. Static species must not be diffused and may
    /// only read dynamic species (no algebraic loops).
    pub fn new(
        n: usize,
        species: Vec<SpeciesBlock>,
        sigma: SpeciesInterconnection,
        coupling: Vec<LaplacianMatrix>,
        mode: CouplingMode,
    ) -> Result<Self> {
        let big_n = species.len();
        if n == 0 {
            return Err(invalid("network needs at least one compartment"));
        }
        if big_n == 0 || sigma.n_species() != big_n {
            return Err(invalid(format!(
                "{} species blocks but interconnection is {}x{}",
                big_n,
                sigma.n_species(),
                sigma.n_species()
            )));
        }
        if coupling.len() != big_n {
            return Err(invalid(format!(
                "need one Laplacian per species ({big_n}), got {}",
                coupling.len()
            )));
        }
        for (k, l) in coupling.iter().enumerate() {
            if l.n() != n {
                return Err(invalid(format!(
                    "Laplacian of species {} is {}x{}, expected {n}x{n}",
                    k + 1,
                    l.n(),
                    l.n()
                )));
            }
        }
        for (k, block) in species.iter().enumerate() {
            block
                .gain()
                .map_err(|e| invalid(format!("species {}: {e}", k + 1)))?;
            if !block.is_dynamic() {
                if !coupling[k].is_zero() {
                    return Err(invalid(format!(
                        "species {} is static and cannot be diffused",
                        k + 1
                    )));
                }
                for (i, other) in species.iter().enumerate() {
                    if !other.is_dynamic() && sigma.sigma()[(k, i)] != 0.0 {
                        return Err(invalid(format!(
                            "static species {} reads static species {}",
                            k + 1,
                            i + 1
                        )));
                    }
                }
            }
        }
        let mut next = 0;
        let dynamic_index = species
            .iter()
            .map(|b| {
                b.is_dynamic().then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        let diffusion = coupling.iter().map(Diffusion::from_laplacian).collect();
        Ok(Self {
            n,
            species,
            sigma,
            coupling,
            mode,
            diffusion,
            dynamic_index,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn n_dynamic(&self) -> usize {
        self.dynamic_index.iter().flatten().count()
    }

    pub fn species(&self) -> &[SpeciesBlock] {
        &self.species
    }

    pub fn sigma(&self) -> &SpeciesInterconnection {
        &self.sigma
    }

    pub fn coupling(&self) -> &[LaplacianMatrix] {
        &self.coupling
    }

    pub fn mode(&self) -> CouplingMode {
        self.mode
    }

    pub fn dynamic_flags(&self) -> Vec<bool> {
        self.species.iter().map(SpeciesBlock::is_dynamic).collect()
    }

    /// For each static species, the species it reads when its row of `Σ`
    /// has exactly one nonzero entry.
    pub fn static_input_index(&self, k: usize) -> Option<usize> {
        if self.species[k].is_dynamic() {
            return None;
        }
        let row = self.sigma.sigma().row(k);
        let nz: Vec<usize> = (0..row.len()).filter(|&i| row[i] != 0.0).collect();
        (nz.len() == 1).then(|| nz[0])
    }

    /// Per-species algebraic connectivities; 0 for a single compartment.
    pub fn connectivities(&self) -> Result<Vec<f64>> {
        if self.n < 2 {
            return Ok(vec![0.0; self.n_species()]);
        }
        self.coupling
            .iter()
            .map(|l| if l.is_zero() { Ok(0.0) } else { algebraic_connectivity(l) })
            .collect()
    }

    pub fn all_balanced(&self) -> bool {
        self.coupling.iter().all(is_balanced)
    }

    pub fn gain_set(&self, mode: AnalysisMode) -> Result<GainSet> {
        let gamma = self.species.iter().map(SpeciesBlock::gain).collect::<Result<Vec<_>>>()?;
        let xi = self
            .species
            .iter()
            .map(SpeciesBlock::output_gain)
            .collect::<Result<Vec<_>>>()?;
        GainSet::new(mode, gamma, xi, self.connectivities()?)
    }

    /// The same network with compartments relabeled by `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Self::new(
            self.n,
            self.species.clone(),
            self.sigma.clone(),
            self.coupling.iter().map(|l| l.permuted(perm)).collect(),
            self.mode,
        )
    }

    /// Fills `y` (`[species][compartment]`) from the dynamic state `x`.
    fn outputs(&self, x: &[f64], w: &[f64], y: &mut [f64]) {
        let n = self.n;
        for (k, idx) in self.dynamic_index.iter().enumerate() {
            if let Some(d) = idx {
                y[k * n..(k + 1) * n].copy_from_slice(&x[d * n..(d + 1) * n]);
            }
        }
        let sigma = self.sigma.sigma();
        for (k, block) in self.species.iter().enumerate() {
            if let SpeciesBlock::Static(map) = block {
                for j in 0..n {
                    let mut v = w[k * n + j];
                    for i in 0..self.species.len() {
                        let s = sigma[(k, i)];
                        if s != 0.0 {
                            v += s * y[i * n + j];
                        }
                    }
                    y[k * n + j] = map.eval(v);
                }
            }
        }
    }

    fn rhs(&self, x: &[f64], w: &[f64], scratch: &mut Scratch, dx: &mut [f64]) {
        let n = self.n;
        self.outputs(x, w, &mut scratch.y);
        let sigma = self.sigma.sigma();
        for (k, block) in self.species.iter().enumerate() {
            let SpeciesBlock::Dynamic { decay, gain } = *block else {
                continue;
            };
            let d = self.dynamic_index[k].expect("dynamic species");
            let coupled = match self.mode {
                CouplingMode::Output => &scratch.y[k * n..(k + 1) * n],
                CouplingMode::State => &x[d * n..(d + 1) * n],
            };
            self.diffusion[k].apply(coupled, &mut scratch.c);
            for j in 0..n {
                let mut v = w[k * n + j] + scratch.c[j];
                for i in 0..self.species.len() {
                    let s = sigma[(k, i)];
                    if s != 0.0 {
                        v += s * scratch.y[i * n + j];
                    }
                }
                dx[d * n + j] = -decay * x[d * n + j] + gain * v;
            }
        }
    }

    /// Coupling inputs `Σ_z a^k_{j,z}(s_{k,z} − s_{k,j})` for species `k`
    /// evaluated at the dynamic state `x`.
    pub fn coupling_terms(&self, k: usize, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let mut out = vec![0.0; n];
        let Some(d) = self.dynamic_index.get(k).copied().flatten() else {
            return Ok(out);
        };
        if x.len() != self.n_dynamic() * n {
            return Err(invalid("state has the wrong length"));
        }
        self.diffusion[k].apply(&x[d * n..(d + 1) * n], &mut out);
        Ok(out)
    }
}

struct Scratch {
    y: Vec<f64>,
    c: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Zero,
    /// `value` on `[t_on, t_off)`; `t_off = None` means forever.
    Step {
        value: f64,
        t_on: f64,
        t_off: Option<f64>,
    },
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// Band-limited seeded noise: a sum of sinusoids with random frequencies
    /// in `(0, bandwidth]` and random phases, RMS close to `amplitude`.
    Noise {
        amplitude: f64,
        bandwidth: f64,
        seed: u64,
    },
}

const NOISE_COMPONENTS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    pub kind: SignalKind,
    /// 0-based species index.
    pub species: usize,
    /// 0-based compartment index.
    pub compartment: usize,
    noise: Vec<(f64, f64)>,
}

impl InputSignal {
    pub fn new(kind: SignalKind, species: usize, compartment: usize) -> Result<Self> {
        let finite = match &kind {
            SignalKind::Zero => true,
            SignalKind::Step { value, t_on, t_off } => {
                value.is_finite() && t_on.is_finite() && t_off.is_none_or(|t| t.is_finite() && t >= *t_on)
            }
            SignalKind::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => amplitude.is_finite() && frequency.is_finite() && phase.is_finite(),
            SignalKind::Noise {
                amplitude, bandwidth, ..
            } => amplitude.is_finite() && bandwidth.is_finite() && *bandwidth > 0.0,
        };
        if !finite {
            return Err(invalid(format!("input signal parameters are invalid: {kind:?}")));
        }
        let noise = match kind {
            SignalKind::Noise { bandwidth, seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..NOISE_COMPONENTS)
                    .map(|_| {
                        let f = bandwidth * (1.0 - rng.gen::<f64>());
                        let phase = std::f64::consts::TAU * rng.gen::<f64>();
                        (std::f64::consts::TAU * f, phase)
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        Ok(Self {
            kind,
            species,
            compartment,
            noise,
        })
    }

    pub fn value(&self, t: f64) -> f64 {
        match &self.kind {
            SignalKind::Zero => 0.0,
            SignalKind::Step { value, t_on, t_off } => {
                if t >= *t_on && t_off.is_none_or(|off| t < off) {
                    *value
                } else {
                    0.0
                }
            }
            SignalKind::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => amplitude * (std::f64::consts::TAU * frequency * t + phase).sin(),
            SignalKind::Noise { amplitude, .. } => {
                let scale = amplitude * (2.0 / NOISE_COMPONENTS as f64).sqrt();
                scale * self.noise.iter().map(|(w, ph)| (w * t + ph).sin()).sum::<f64>()
            }
        }
    }
}

/// Stacked external inputs `W[k][j]` at time `t`.
pub fn input_matrix(inputs: &[InputSignal], n: usize, t: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for s in inputs {
        out[s.species * n + s.compartment] += s.value(t);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Record one sample every this many integration steps.
    pub sample_every: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            t_end: DEFAULT_T_END,
            sample_every: DEFAULT_SAMPLE_EVERY,
        }
    }
}

/// Sampled outputs of all species in all compartments. Dynamic species'
/// states equal their outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    n: usize,
    dynamic: Vec<bool>,
    /// `[sample][species][compartment]`.
    outputs: Vec<f64>,
}

impl Trajectory {
    pub fn from_parts(times: Vec<f64>, n: usize, dynamic: Vec<bool>, outputs: Vec<f64>) -> Result<Self> {
        if outputs.len() != times.len() * n * dynamic.len() {
            return Err(invalid("trajectory output buffer has the wrong length"));
        }
        if outputs.iter().any(|v| !v.is_finite()) {
            return Err(invalid("trajectory contains non-finite samples"));
        }
        Ok(Self {
            times,
            n,
            dynamic,
            outputs,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_species(&self) -> usize {
        self.dynamic.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dynamic_flags(&self) -> &[bool] {
        &self.dynamic
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn output(&self, sample: usize, species: usize, compartment: usize) -> f64 {
        let stride = self.n * self.dynamic.len();
        self.outputs[sample * stride + species * self.n + compartment]
    }

    pub fn state(&self, sample: usize, species: usize, compartment: usize) -> Option<f64> {
        self.dynamic[species].then(|| self.output(sample, species, compartment))
    }

    /// Outputs of species `k` in all compartments at one sample.
    pub fn species_outputs(&self, sample: usize, species: usize) -> &[f64] {
        let stride = self.n * self.dynamic.len();
        let start = sample * stride + species * self.n;
        &self.outputs[start..start + self.n]
    }

    pub fn compartment_series(&self, species: usize, compartment: usize) -> Vec<f64> {
        (0..self.len()).map(|s| self.output(s, species, compartment)).collect()
    }

    /// Peak-to-peak output range over the samples with `t ≥ from`, maximized
    /// over species and compartments.
    pub fn tail_amplitude(&self, from: f64) -> f64 {
        let first = self.times.iter().position(|&t| t >= from).unwrap_or(self.len());
        let mut worst: f64 = 0.0;
        for k in 0..self.n_species() {
            for j in 0..self.n {
                let (lo, hi) = (first..self.len())
                    .map(|s| self.output(s, k, j))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                if hi >= lo {
                    worst = worst.max(hi - lo);
                }
            }
        }
        worst
    }

    fn column_names(&self) -> Vec<String> {
        let mut names = vec!["t".to_string()];
        for (k, &dynamic) in self.dynamic.iter().enumerate() {
            if dynamic {
                names.extend((0..self.n).map(|j| format!("x_k{}_j{}", k + 1, j + 1)));
            }
        }
        for k in 0..self.n_species() {
            names.extend((0..self.n).map(|j| format!("y_k{}_j{}", k + 1, j + 1)));
        }
        names
    }

    /// CSV export: `t`, then states of dynamic species, then outputs of all
    /// species; species-major, compartment-minor; 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.column_names().join(","))?;
        let mut line = String::new();
        for s in 0..self.len() {
            line.clear();
            line.push_str(&format_sig(self.times[s]));
            for (k, &dynamic) in self.dynamic.iter().enumerate() {
                if dynamic {
                    for &v in self.species_outputs(s, k) {
                        line.push(',');
                        line.push_str(&format_sig(v));
                    }
                }
            }
            for k in 0..self.n_species() {
                for &v in self.species_outputs(s, k) {
                    line.push(',');
                    line.push_str(&format_sig(v));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads a CSV written by [`Trajectory::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| invalid("empty trajectory CSV"))?
            .map_err(|e| invalid(e.to_string()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"t") {
            return Err(invalid("trajectory CSV must start with column t"));
        }
        let parse_name = |name: &str, prefix: char| -> Option<(usize, usize)> {
            let rest = name.strip_prefix(prefix)?.strip_prefix("_k")?;
            let (k, j) = rest.split_once("_j")?;
            Some((k.parse().ok()?, j.parse().ok()?))
        };
        let ys: Vec<(usize, usize)> = cols.iter().filter_map(|c| parse_name(c, 'y')).collect();
        let xs: Vec<(usize, usize)> = cols.iter().filter_map(|c| parse_name(c, 'x')).collect();
        let n_species = ys.iter().map(|p| p.0).max().unwrap_or(0);
        let n = ys.iter().map(|p| p.1).max().unwrap_or(0);
        if n_species * n != ys.len() || 1 + xs.len() + ys.len() != cols.len() {
            return Err(invalid("trajectory CSV header is not a full species x compartment grid"));
        }
        let mut dynamic = vec![false; n_species];
        for &(k, _) in &xs {
            dynamic[k - 1] = true;
        }
        let y_offset = 1 + xs.len();
        let mut times = Vec::new();
        let mut outputs = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line.map_err(|e| invalid(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| invalid(format!("CSV row {}: {e}", row + 2)))?;
            if vals.len() != cols.len() {
                return Err(invalid(format!("CSV row {} has {} fields", row + 2, vals.len())));
            }
            times.push(vals[0]);
            outputs.extend_from_slice(&vals[y_offset..]);
        }
        Self::from_parts(times, n, dynamic, outputs)
    }

    /// Copy with every value rounded exactly as [`Trajectory::write_csv`]
    /// writes it, so scores computed from it survive a CSV round trip.
    pub fn rounded_for_export(&self) -> Self {
        let round = |v: &f64| format_sig(*v).parse::<f64>().expect("formatted float parses");
        Self {
            times: self.times.iter().map(round).collect(),
            n: self.n,
            dynamic: self.dynamic.clone(),
            outputs: self.outputs.iter().map(round).collect(),
        }
    }
}

fn format_sig(v: f64) -> String {
    format!("{v:.11e}")
}

/// Integrates the closed loop with classical RK4.
///
/// `x0` holds the dynamic states as `[dynamic species][compartment]`.
pub fn simulate(model: &NetworkModel, inputs: &[InputSignal], x0: &[f64], opts: &SimOptions) -> Result<Trajectory> {
    let n = model.n();
    let big_n = model.n_species();
    let dim = model.n_dynamic() * n;
    if !(opts.dt > 0.0) || !opts.dt.is_finite() {
        return Err(invalid(format!("step size must be > 0, got {}", opts.dt)));
    }
    if !(opts.t_end >= opts.dt) || !opts.t_end.is_finite() {
        return Err(invalid(format!("horizon {} must be >= dt {}", opts.t_end, opts.dt)));
    }
    if opts.sample_every == 0 {
        return Err(invalid("sample_every must be >= 1"));
    }
    if x0.len() != dim {
        return Err(invalid(format!(
            "initial state has {} entries, expected {dim} ({} dynamic species x {n} compartments)",
            x0.len(),
            model.n_dynamic()
        )));
    }
    for s in inputs {
        if s.species >= big_n || s.compartment >= n {
            return Err(invalid(format!(
                "input targets species {} compartment {}, out of range",
                s.species + 1,
                s.compartment + 1
            )));
        }
    }
    let dynamic_species: Vec<usize> = (0..big_n).filter(|&k| model.species[k].is_dynamic()).collect();
    let check = |x: &[f64], t: f64| -> Result<()> {
        match x.iter().position(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            None => Ok(()),
            Some(pos) => Err(Error::Divergence {
                t,
                species: dynamic_species[pos / n] + 1,
                compartment: pos % n + 1,
            }),
        }
    };
    check(x0, 0.0)?;

    let steps = (opts.t_end / opts.dt).round() as usize;
    let mut scratch = Scratch {
        y: vec![0.0; big_n * n],
        c: vec![0.0; n],
    };
    let mut w = vec![0.0; big_n * n];
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];

    let n_samples = steps / opts.sample_every + 1;
    let mut times = Vec::with_capacity(n_samples);
    let mut outputs = Vec::with_capacity(n_samples * big_n * n);
    let mut record = |x: &[f64], t: f64, w: &mut Vec<f64>, y: &mut Vec<f64>| {
        input_matrix(inputs, n, t, w);
        model.outputs(x, w, y);
        times.push(t);
        outputs.extend_from_slice(y);
    };
    let mut y_rec = vec![0.0; big_n * n];
    record(&x, 0.0, &mut w, &mut y_rec);

    let dt = opts.dt;
    for step in 0..steps {
        let t = step as f64 * dt;
        input_matrix(inputs, n, t, &mut w);
        model.rhs(&x, &w, &mut scratch, &mut k1);

        input_matrix(inputs, n, t + 0.5 * dt, &mut w);
        for i in 0..dim {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        model.rhs(&tmp, &w, &mut scratch, &mut k2);
        for i in 0..dim {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        model.rhs(&tmp, &w, &mut scratch, &mut k3);

        input_matrix(inputs, n, t + dt, &mut w);
        for i in 0..dim {
            tmp[i] = x[i] + dt * k3[i];
        }
        model.rhs(&tmp, &w, &mut scratch, &mut k4);

        for i in 0..dim {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t_next = (step + 1) as f64 * dt;
        check(&x, t_next)?;
        if (step + 1) % opts.sample_every == 0 {
            record(&x, t_next, &mut w, &mut y_rec);
        }
    }
    Trajectory::from_parts(times, n, model.dynamic_flags(), outputs)
}

/// Hill exponent and per-block decay rates `b` and input gains `c` of the
/// three linear stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoodwinParams {
    pub p: f64,
    pub b: [f64; 3],
    pub c: [f64; 3],
}

impl GoodwinParams {
    /// `b = (0.5, 0.5, 0.5)`, `c = (1, 0.5, 0.5)`: gains `(0.5, 1, 1)`, Hopf
    /// point of the isolated loop at `p = 16`.
    pub fn oscillatory(p: f64) -> Self {
        Self {
            p,
            b: [0.5, 0.5, 0.5],
            c: [1.0, 0.5, 0.5],
        }
    }

    /// `b = (0.5, 1, 1)`, `c = (1, 1, 1)`: the same gains, but the isolated
    /// loop only loses stability at `p = 18`.
    pub fn stated(p: f64) -> Self {
        Self {
            p,
            b: [0.5, 1.0, 1.0],
            c: [1.0, 1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) || !self.p.is_finite() {
            return Err(invalid(format!("Hill exponent p must be > 1, got {}", self.p)));
        }
        if self.b.iter().chain(&self.c).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(invalid("Goodwin rates b and gains c must be > 0"));
        }
        Ok(())
    }

    /// The unique equilibrium of one isolated compartment, `(x1, x2, x3)`.
    pub fn equilibrium(&self) -> [f64; 3] {
        let r: Vec<f64> = (0..3).map(|i| self.c[i] / self.b[i]).collect();
        let k = r[0] * r[1] * r[2];
        // x3 solves x3 (x3^p + 1) = k, increasing in x3 on [0, k]
        let (mut lo, mut hi) = (0.0f64, k.max(1.0));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * (mid.powf(self.p) + 1.0) < k {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x3 = 0.5 * (lo + hi);
        let x2 = x3 / r[2];
        let x1 = x2 / r[1];
        [x1, x2, x3]
    }
}

/// Goodwin compartments: three linear stages and the Hill repression,
/// wired `v1 = −y4`, `v2 = y1`, `v3 = y2`, `v4 = y3`.
///
/// `coupling` gives the Laplacians of species 1–3; the Hill species is
/// never diffused.
pub fn build_goodwin(
    n: usize,
    params: &GoodwinParams,
    coupling: [LaplacianMatrix; 3],
    mode: CouplingMode,
) -> Result<NetworkModel> {
    params.validate()?;
    let mut species: Vec<SpeciesBlock> = (0..3)
        .map(|i| SpeciesBlock::Dynamic {
            decay: params.b[i],
            gain: params.c[i],
        })
        .collect();
    species.push(SpeciesBlock::Static(StaticMap::Hill { p: params.p }));
    let [l1, l2, l3] = coupling;
    NetworkModel::new(
        n,
        species,
        SpeciesInterconnection::cyclic(4)?,
        vec![l1, l2, l3, LaplacianMatrix::zero(n)],
        mode,
    )
}

/// Compartment 1 is the plant, compartment 2 its observer, fed by output
/// injection `q(x1 − x̂1)` on species 1.
pub fn build_observer_pair(p: f64, q: f64) -> Result<NetworkModel> {
    if !(q >= 0.0) || !q.is_finite() {
        return Err(invalid(format!("injection weight q must be >= 0, got {q}")));
    }
    let mut w = DenseMatrix::zeros(2, 2);
    w[(1, 0)] = q;
    let l1 = laplacian(&WeightedDigraph::new(w)?);
    build_goodwin(
        2,
        &GoodwinParams::oscillatory(p),
        [l1, LaplacianMatrix::zero(2), LaplacianMatrix::zero(2)],
        CouplingMode::State,
    )
}

/// `x0_{k,j} = base_k + perturbation·(π(j) + 1)` where `π` is the identity
/// for `seed = 0` and a seeded shuffle otherwise.
pub fn perturbed_initial_state(base: &[f64], n: usize, perturbation: f64, seed: u64) -> Vec<f64> {
    let mut offsets: Vec<usize> = (0..n).collect();
    if seed != 0 {
        offsets.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    base.iter()
        .flat_map(|&b| offsets.iter().map(move |&o| b + perturbation * (o + 1) as f64))
        .collect()
}

/// Runs independent jobs on at most `threads` workers (all available when
/// `None`); results come back in job order.
pub fn run_parallel<J, R, F>(jobs: Vec<J>, threads: Option<usize>, f: F) -> Vec<R>
where
    J: Send,
    R: Send,
    F: Fn(usize, J) -> R + Sync + Send,
{
    use rayon::prelude::*;
    let run = || jobs.into_par_iter().enumerate().map(|(i, j)| f(i, j)).collect();
    match threads.and_then(|t| rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build().ok()) {
        Some(pool) => pool.install(run),
        None => run(),
    }
}
