//! Synthetic datasets whose clean series obey the governing equations
//! exactly (LWR, forward Euler on the graph) or to integrator accuracy
//! (Liénard, RK4 with 100 substeps per sample).

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph_ops::build_neighbor_index;
use crate::physics::{
    lwr_euler_step, EquationKind, LienardParams, LwrParams, PMaxSetting, PhysicsConfig,
    PhysicsError,
};
use crate::temporal_graph::{DataError, DatasetFile, Topology};

pub const RK4_SUBSTEPS: usize = 100;
/// Default LWR initial densities as fractions of `p_max`.
pub const DEFAULT_DENSITY_RANGE: (f64, f64) = (0.05, 0.45);

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Invalid(String),
    #[error(
        "density {value} at step {step} left [-p_max, 2 p_max] = [{low}, {high}]; \
         the scheme is unstable, try a smaller dt"
    )]
    BlowUp {
        step: usize,
        value: f64,
        low: f64,
        high: f64,
    },
    #[error("non-finite oscillator state at step {step}, node {node}")]
    NonFinite { step: usize, node: usize },
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyGen {
    Path,
    Ring,
    RandomRegular { k: usize },
    Er { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum InitialCondition {
    /// Same density on every node.
    Uniform { value: f64 },
    /// Densities uniform in `[low, high]·p_max`.
    RandomDensity { low: f64, high: f64 },
    /// Same `(x₀, ẋ₀)` on every node.
    Oscillator { x0: f64, v0: f64 },
    /// Per-node `(x₀, ẋ₀)` uniform in `[−1, 1]²`.
    RandomOscillator,
}

fn default_lags() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub name: String,
    pub topology: TopologyGen,
    pub nodes: usize,
    pub steps: usize,
    pub physics: PhysicsConfig,
    /// Defaults to random densities for LWR and random oscillators for Liénard.
    #[serde(default)]
    pub initial: Option<InitialCondition>,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lags")]
    pub lags: usize,
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.nodes == 0 {
            return bad("nodes must be at least 1".into());
        }
        if self.steps < self.lags + 4 {
            return bad(format!(
                "steps ({}) must be at least lags + 4 ({})",
                self.steps,
                self.lags + 4
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be nonnegative, got {}", self.noise));
        }
        Ok(())
    }

    fn initial(&self) -> InitialCondition {
        self.initial.unwrap_or(match self.physics.equation {
            EquationKind::Lwr => InitialCondition::RandomDensity {
                low: DEFAULT_DENSITY_RANGE.0,
                high: DEFAULT_DENSITY_RANGE.1,
            },
            EquationKind::Lienard => InitialCondition::RandomOscillator,
        })
    }

    /// Generator `p_max`; `"auto"` means 1.
    pub fn lwr_params(&self) -> LwrParams {
        LwrParams {
            v_max: self.physics.v_max,
            p_max: match self.physics.p_max {
                PMaxSetting::Value(v) => v,
                PMaxSetting::Auto(_) => 1.0,
            },
        }
    }

    pub fn lienard_params(&self) -> LienardParams {
        LienardParams {
            alpha: self.physics.alpha,
            beta: self.physics.beta,
            gamma: self.physics.gamma,
        }
    }
}

/// Builds an undirected topology with unit distances.
pub fn build_topology(gen: TopologyGen, n: usize, rng: &mut impl Rng) -> Result<Topology> {
    let edges: Vec<(usize, usize)> = match gen {
        TopologyGen::Path => (1..n).map(|i| (i - 1, i)).collect(),
        TopologyGen::Ring => {
            if n < 3 {
                return Err(SynthError::Invalid(format!("ring needs at least 3 nodes, got {n}")));
            }
            (0..n).map(|i| (i, (i + 1) % n)).collect()
        }
        TopologyGen::Er { p } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::Invalid(format!("edge probability {p} outside [0, 1]")));
            }
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random_bool(p) {
                        edges.push((i, j));
                    }
                }
            }
            edges
        }
        TopologyGen::RandomRegular { k } => random_regular(n, k, rng)?,
    };
    Ok(Topology::new(n, false, edges, None)?)
}

/// Pairing model with restarts until the pairing is simple.
fn random_regular(n: usize, k: usize, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>> {
    if k >= n || (n * k) % 2 != 0 {
        return Err(SynthError::Invalid(format!(
            "no simple {k}-regular graph on {n} nodes"
        )));
    }
    for _ in 0..10_000 {
        let mut stubs: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        // Fisher-Yates
        for i in (1..stubs.len()).rev() {
            let j = rng.random_range(0..=i);
            stubs.swap(i, j);
        }
        let mut edges: Vec<(usize, usize)> = stubs
            .chunks(2)
            .map(|c| (c[0].min(c[1]), c[0].max(c[1])))
            .collect();
        edges.sort_unstable();
        let simple = edges.iter().all(|(a, b)| a != b) && edges.windows(2).all(|w| w[0] != w[1]);
        if simple {
            return Ok(edges);
        }
    }
    Err(SynthError::Invalid(format!(
        "failed to sample a simple {k}-regular graph on {n} nodes"
    )))
}

fn dataset_file(name: String, topo: &Topology, series: Vec<Vec<f64>>) -> DatasetFile {
    DatasetFile {
        name,
        directed: topo.is_directed(),
        node_count: topo.node_count(),
        edges: topo.edges().iter().map(|&(s, d)| [s, d]).collect(),
        edge_attrs: Some(topo.edge_attrs().to_vec()),
        dynamic_edges: None,
        dynamic_edge_attrs: None,
        series,
    }
}

/// Clean and noisy versions of one generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub spec: SynthSpec,
    pub clean: DatasetFile,
    pub noisy: DatasetFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SynthSpec,
    pub clean: PathBuf,
    pub noisy: PathBuf,
}

impl SynthOutput {
    /// Writes `<name>_clean.json`, `<name>_noisy.json` and
    /// `<name>_manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        std::fs::create_dir_all(dir).map_err(|source| SynthError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let name = &self.spec.name;
        let manifest = Manifest {
            spec: self.spec.clone(),
            clean: dir.join(format!("{name}_clean.json")),
            noisy: dir.join(format!("{name}_noisy.json")),
        };
        self.clean.write(&manifest.clean)?;
        self.noisy.write(&manifest.noisy)?;
        let path = dir.join(format!("{name}_manifest.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|source| {
            SynthError::Io {
                path: path.display().to_string(),
                source,
            }
        })?;
        Ok(manifest)
    }
}

fn add_noise(clean: &[Vec<f64>], sigma: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    if sigma == 0.0 {
        return clean.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    clean
        .iter()
        .map(|row| row.iter().map(|v| v + normal.sample(rng)).collect())
        .collect()
}

fn finish(spec: &SynthSpec, topo: &Topology, clean: Vec<Vec<f64>>, rng: &mut impl Rng) -> SynthOutput {
    let noisy = add_noise(&clean, spec.noise, rng);
    SynthOutput {
        spec: spec.clone(),
        clean: dataset_file(format!("{}_clean", spec.name), topo, clean),
        noisy: dataset_file(format!("{}_noisy", spec.name), topo, noisy),
    }
}

/// Dispatches on the configured equation.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    match spec.physics.equation {
        EquationKind::Lwr => gen_lwr_series(spec),
        EquationKind::Lienard => gen_lienard_series(spec),
    }
}

pub fn gen_lwr_series(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    if spec.physics.equation != EquationKind::Lwr {
        return Err(SynthError::Invalid("gen_lwr_series needs an lwr physics block".into()));
    }
    let params = spec.lwr_params();
    let dt = spec.physics.dt;
    if !(params.p_max > 0.0 && params.p_max.is_finite() && dt > 0.0 && dt.is_finite()) {
        return Err(SynthError::Invalid(format!(
            "need p_max > 0 and dt > 0, got p_max={}, dt={dt}",
            params.p_max
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let topo = build_topology(spec.topology, spec.nodes, &mut rng)?;
    let idx = build_neighbor_index(&topo);

    let p0: Vec<f64> = match spec.initial() {
        InitialCondition::Uniform { value } => {
            if !(value > 0.0 && value < params.p_max) {
                return Err(SynthError::Invalid(format!(
                    "initial density {value} outside (0, p_max)"
                )));
            }
            vec![value; spec.nodes]
        }
        InitialCondition::RandomDensity { low, high } => {
            if !(0.0 < low && low < high && high < 1.0) {
                return Err(SynthError::Invalid(format!(
                    "density fractions need 0 < low < high < 1, got [{low}, {high}]"
                )));
            }
            (0..spec.nodes)
                .map(|_| rng.random_range(low..high) * params.p_max)
                .collect()
        }
        other => {
            return Err(SynthError::Invalid(format!("{other:?} is not an LWR initial condition")))
        }
    };

    let (low, high) = (-params.p_max, 2.0 * params.p_max);
    let mut series = Vec::with_capacity(spec.steps);
    series.push(p0);
    for step in 1..spec.steps {
        let next = lwr_euler_step(&series[step - 1], &params, dt, &idx);
        if let Some(&value) = next.iter().find(|v| !(**v >= low && **v <= high)) {
            return Err(SynthError::BlowUp {
                step,
                value,
                low,
                high,
            });
        }
        series.push(next);
    }
    Ok(finish(spec, &topo, series, &mut rng))
}

/// One RK4 step of `ẍ = −α x ẋ − γ x − β x³`.
pub fn lienard_rk4_step(x: f64, v: f64, h: f64, params: &LienardParams) -> (f64, f64) {
    let f = |x: f64, v: f64| (v, params.acceleration(x, v));
    let (k1x, k1v) = f(x, v);
    let (k2x, k2v) = f(x + 0.5 * h * k1x, v + 0.5 * h * k1v);
    let (k3x, k3v) = f(x + 0.5 * h * k2x, v + 0.5 * h * k2v);
    let (k4x, k4v) = f(x + h * k3x, v + h * k3v);
    (
        x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
    )
}

/// Positions sampled every `dt` (`samples` values, starting at `x0`),
/// integrated with `RK4_SUBSTEPS` substeps per sample.
pub fn lienard_trajectory(
    x0: f64,
    v0: f64,
    params: &LienardParams,
    dt: f64,
    samples: usize,
) -> Option<Vec<f64>> {
    let h = dt / RK4_SUBSTEPS as f64;
    let (mut x, mut v) = (x0, v0);
    let mut out = Vec::with_capacity(samples);
    out.push(x);
    for _ in 1..samples {
        for _ in 0..RK4_SUBSTEPS {
            (x, v) = lienard_rk4_step(x, v, h, params);
        }
        if !(x.is_finite() && v.is_finite()) {
            return None;
        }
        out.push(x);
    }
    Some(out)
}

pub fn gen_lienard_series(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    if spec.physics.equation != EquationKind::Lienard {
        return Err(SynthError::Invalid(
            "gen_lienard_series needs a lienard physics block".into(),
        ));
    }
    let params = spec.lienard_params();
    let dt = spec.physics.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SynthError::Invalid(format!("dt must be positive, got {dt}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let topo = build_topology(spec.topology, spec.nodes, &mut rng)?;

    let starts: Vec<(f64, f64)> = match spec.initial() {
        InitialCondition::Oscillator { x0, v0 } => vec![(x0, v0); spec.nodes],
        InitialCondition::RandomOscillator => (0..spec.nodes)
            .map(|_| (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)))
            .collect(),
        other => {
            return Err(SynthError::Invalid(format!(
                "{other:?} is not an oscillator initial condition"
            )))
        }
    };

    let mut columns = Vec::with_capacity(spec.nodes);
    for (node, &(x0, v0)) in starts.iter().enumerate() {
        let traj = lienard_trajectory(x0, v0, &params, dt, spec.steps).ok_or_else(|| {
            // Locate the first bad sample for the error message.
            let step = (1..spec.steps)
                .find(|&s| lienard_trajectory(x0, v0, &params, dt, s + 1).is_none())
                .unwrap_or(spec.steps);
            SynthError::NonFinite { step, node }
        })?;
        columns.push(traj);
    }
    let series = (0..spec.steps)
        .map(|t| columns.iter().map(|c| c[t]).collect())
        .collect();
    Ok(finish(spec, &topo, series, &mut rng))
}
