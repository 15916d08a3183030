//! Scenario descriptors: JSON parsing, defaults, validation and initial maps.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use heatflow_core::convergence::RateOptions;
use heatflow_core::flow::{self, FlowConfig, Stepper};
use heatflow_core::jacobi::EigenOptions;
use heatflow_core::{DiscreteMap, DomainGrid, GridSpec, TargetManifold};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Analytic starting maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialMap {
    /// `base + amplitude · Π_i sin(mode k_i x_i)` in every component, with
    /// `k = 2π/L` on periodic axes and `π/L` on Dirichlet axes.
    SinePerturbation {
        amplitude: f64,
        #[serde(default)]
        base: Option<Vec<f64>>,
        #[serde(default = "one")]
        mode: usize,
    },
    /// The straight chart segment from `start` to `end` over an interval.
    PerturbedGeodesicPath { start: Vec<f64>, end: Vec<f64> },
    /// A circle wrapped `winding[α]` times around each torus direction.
    WindingLoop {
        winding: Vec<i64>,
        #[serde(default)]
        offset: Option<Vec<f64>>,
    },
    Constant { value: Vec<f64> },
}

fn one() -> usize {
    1
}

/// Smooth seeded perturbation added on top of the recipe; vanishes on
/// Dirichlet boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    /// Largest absolute coordinate displacement.
    pub amplitude: f64,
    /// Fourier/sine modes per axis drawn with `1/k²` weights.
    pub modes: usize,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self { amplitude: 0.0, modes: 4 }
    }
}

/// Flow settings as written in a scenario; `None` fields take the flow defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSettings {
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub stepper: Option<Stepper>,
    #[serde(default = "one")]
    pub sample_stride: usize,
    #[serde(default)]
    pub snapshot_stride: usize,
    #[serde(default = "one")]
    pub snapshot_burst: usize,
    #[serde(default = "default_stop")]
    pub stop_tolerance: f64,
    #[serde(default = "default_cfl")]
    pub cfl_safety: f64,
    #[serde(default = "default_energy_tol")]
    pub energy_tolerance: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        Self {
            dt: None,
            t_end: default_t_end(),
            stepper: None,
            sample_stride: 1,
            snapshot_stride: 0,
            snapshot_burst: 1,
            stop_tolerance: default_stop(),
            cfl_safety: default_cfl(),
            energy_tolerance: default_energy_tol(),
        }
    }
}

/// Flow horizon when a scenario gives none.
pub const DEFAULT_T_END: f64 = 10.0;

/// Scenario name when none is given.
pub const DEFAULT_NAME: &str = "scenario";

fn default_t_end() -> f64 {
    DEFAULT_T_END
}

fn default_name() -> String {
    DEFAULT_NAME.to_string()
}

fn default_stop() -> f64 {
    flow::DEFAULT_STOP_TOLERANCE
}

fn default_cfl() -> f64 {
    flow::DEFAULT_CFL_SAFETY
}

fn default_energy_tol() -> f64 {
    flow::DEFAULT_ENERGY_TOLERANCE
}

/// Post-processing toggles and tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Analysis {
    pub eigen_k: usize,
    pub eigen: EigenOptions,
    /// Track `λ₁` at every `gap_stride`-th snapshot; zero disables tracking.
    pub gap_stride: usize,
    pub rate: RateOptions,
    /// Identity floor relative to the largest recorded `‖τ‖²`.
    pub identity_floor: f64,
    pub identity_tolerance: f64,
    /// Seeded random sections tested against `λ₁` (zero disables).
    pub rayleigh_samples: usize,
    pub assembly_samples: usize,
    pub assembly_tolerance: f64,
    /// Eigenvalues must exceed `−spectrum_tolerance · scale`.
    pub spectrum_tolerance: f64,
    /// Tracked `λ₁` from the fit window on must stay above this fraction of `λ₁_final`.
    pub gap_tail_fraction: f64,
}

impl Default for Analysis {
    fn default() -> Self {
        Self {
            eigen_k: 4,
            eigen: EigenOptions::default(),
            gap_stride: 1,
            rate: RateOptions::default(),
            identity_floor: 1e-4,
            identity_tolerance: 1e-2,
            rayleigh_samples: 1000,
            assembly_samples: 20,
            assembly_tolerance: 1e-6,
            spectrum_tolerance: 1e-8,
            gap_tail_fraction: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default = "default_name")]
    name: String,
    target: TargetManifold,
    grid: GridSpec,
    initial_map: InitialMap,
    #[serde(default)]
    perturbation: Perturbation,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    flow: FlowSettings,
    #[serde(default)]
    analysis: Analysis,
    #[serde(default)]
    output: Option<PathBuf>,
}

/// A validated scenario with every default made explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub target: TargetManifold,
    pub grid: GridSpec,
    pub initial_map: InitialMap,
    pub perturbation: Perturbation,
    pub seed: u64,
    pub flow: FlowConfig,
    pub analysis: Analysis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Validation { field: field.to_string(), reason: reason.into() }
}

/// Reads and validates a scenario file.
pub fn parse_config(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    parse_str(&text)
}

/// Parses and validates scenario JSON.
pub fn parse_str(text: &str) -> Result<Scenario, CliError> {
    let raw: RawScenario = serde_json::from_str(text)
        .map_err(|e| {
            let message = e.to_string();
            let key = message.split('`').nth(1).map(str::to_string);
            CliError::Parse { line: e.line(), column: e.column(), key, message }
        })?;
    resolve(raw)
}

fn resolve(raw: RawScenario) -> Result<Scenario, CliError> {
    if raw.name.is_empty() || raw.name.contains(['/', '\\']) {
        return Err(invalid("name", "must be a non-empty file-name-safe string"));
    }
    raw.target.validate().map_err(|e| invalid("target", e.to_string()))?;
    let grid = DomainGrid::new(raw.grid.clone()).map_err(|e| invalid("grid", e.to_string()))?;
    let settings = raw.flow;
    if !(settings.t_end.is_finite() && settings.t_end >= 0.0) {
        return Err(invalid("flow.t_end", "must be finite and non-negative"));
    }
    let mut flow = FlowConfig::for_problem(&grid, &raw.target, settings.t_end);
    flow.cfl_safety = settings.cfl_safety;
    if !(flow.cfl_safety > 0.0 && flow.cfl_safety < 1.0) {
        return Err(invalid("flow.cfl_safety", "must lie in (0, 1)"));
    }
    flow.dt = settings.dt.unwrap_or_else(|| grid.stability_bound(flow.cfl_safety));
    flow.stepper = settings.stepper.unwrap_or(flow.stepper);
    flow.sample_stride = settings.sample_stride;
    flow.snapshot_stride = settings.snapshot_stride;
    flow.snapshot_burst = settings.snapshot_burst;
    flow.stop_tolerance = settings.stop_tolerance;
    flow.energy_tolerance = settings.energy_tolerance;
    if let Err(e) = flow.validate(&grid) {
        return Err(match e {
            heatflow_core::Error::StabilityGuard { dt, bound } => {
                invalid("dt", format!("exceeds stability bound ({dt:e} > {bound:e})"))
            }
            other => invalid("flow", other.to_string()),
        });
    }
    let a = &raw.analysis;
    if a.eigen_k == 0 {
        return Err(invalid("analysis.eigen_k", "must be at least 1"));
    }
    if !(a.eigen.tol > 0.0) || a.eigen.max_iterations == 0 {
        return Err(invalid("analysis.eigen", "tol must be positive and max_iterations non-zero"));
    }
    let scenario = Scenario {
        name: raw.name,
        target: raw.target,
        grid: raw.grid,
        initial_map: raw.initial_map,
        perturbation: raw.perturbation,
        seed: raw.seed,
        flow,
        analysis: raw.analysis,
        output: raw.output,
    };
    if !(scenario.perturbation.amplitude.is_finite() && scenario.perturbation.amplitude >= 0.0) {
        return Err(invalid("perturbation.amplitude", "must be finite and non-negative"));
    }
    if scenario.perturbation.amplitude > 0.0 && scenario.perturbation.modes == 0 {
        return Err(invalid("perturbation.modes", "must be positive when amplitude is positive"));
    }
    scenario.initial_map()?;
    Ok(scenario)
}

impl Scenario {
    pub fn domain(&self) -> DomainGrid {
        DomainGrid::new(self.grid.clone()).expect("grid validated at parse time")
    }

    /// Dirichlet kinds run beyond closed domains.
    pub fn extension_mode(&self) -> bool {
        !self.domain().is_periodic()
    }

    /// Replaces the seed and re-validates the initial map.
    pub fn with_seed(mut self, seed: u64) -> Result<Self, CliError> {
        self.seed = seed;
        self.initial_map()?;
        Ok(self)
    }

    /// The same problem with every axis refined `2^level` times; `dt` and the
    /// sample and snapshot strides scale with `h²` so recorded times coincide.
    pub fn refined(&self, level: u32) -> Result<Self, CliError> {
        let f = 1usize << level;
        let refine = |n: usize, periodic: bool| if periodic { n * f } else { (n - 1) * f + 1 };
        let mut s = self.clone();
        s.grid = match self.grid.clone() {
            GridSpec::Circle { length, nodes, inverse_metric } => {
                GridSpec::Circle { length, nodes: refine(nodes, true), inverse_metric }
            }
            GridSpec::Torus2 { lengths, nodes, inverse_metric } => {
                GridSpec::Torus2 { lengths, nodes: nodes.map(|n| refine(n, true)), inverse_metric }
            }
            GridSpec::Interval { length, nodes, inverse_metric } => {
                GridSpec::Interval { length, nodes: refine(nodes, false), inverse_metric }
            }
            GridSpec::Rectangle { lengths, nodes, inverse_metric } => {
                GridSpec::Rectangle { lengths, nodes: nodes.map(|n| refine(n, false)), inverse_metric }
            }
        };
        let q = f * f;
        s.flow.dt /= q as f64;
        s.flow.sample_stride *= q;
        s.flow.snapshot_stride *= q;
        s.name = format!("{}_refine{level}", self.name);
        s.flow.validate(&s.domain()).map_err(|e| invalid("flow", e.to_string()))?;
        Ok(s)
    }

    /// Canonical JSON, independent of the output location.
    pub fn canonical_json(&self) -> String {
        let mut copy = self.clone();
        copy.output = None;
        serde_json::to_string(&copy).expect("scenario serializes")
    }

    /// SHA-256 of [`Scenario::canonical_json`], hex encoded.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Samples the recipe plus the seeded perturbation.
    pub fn initial_map(&self) -> Result<DiscreteMap, CliError> {
        let grid = self.domain();
        let n = self.target.dim();
        let m = grid.dim();
        let lengths: Vec<f64> = (0..m).map(|i| grid.axis(i).length).collect();
        let periodic = grid.is_periodic();
        let expect_len = |field: &str, v: &[f64]| {
            if v.len() == n {
                Ok(())
            } else {
                Err(invalid(field, format!("needs {n} components, got {}", v.len())))
            }
        };
        let base: Box<dyn Fn(&[f64]) -> Vec<f64>> = match &self.initial_map {
            InitialMap::SinePerturbation { amplitude, base, mode } => {
                let b = base.clone().unwrap_or_else(|| vec![0.0; n]);
                expect_len("initial_map.base", &b)?;
                let (amp, k) = (*amplitude, *mode as f64);
                let lengths = lengths.clone();
                Box::new(move |x: &[f64]| {
                    let w: f64 = x
                        .iter()
                        .zip(&lengths)
                        .map(|(xi, l)| (k * if periodic { 2.0 * PI } else { PI } * xi / l).sin())
                        .product();
                    b.iter().map(|v| v + amp * w).collect()
                })
            }
            InitialMap::PerturbedGeodesicPath { start, end } => {
                if m != 1 || periodic {
                    return Err(invalid("initial_map", "perturbed_geodesic_path needs an interval grid"));
                }
                expect_len("initial_map.start", start)?;
                expect_len("initial_map.end", end)?;
                let (s, e, l) = (start.clone(), end.clone(), lengths[0]);
                Box::new(move |x: &[f64]| s.iter().zip(&e).map(|(a, b)| a + (b - a) * x[0] / l).collect())
            }
            InitialMap::WindingLoop { winding, offset } => {
                let TargetManifold::FlatTorusChart { period, .. } = self.target else {
                    return Err(invalid("initial_map", "winding_loop needs a flat_torus_chart target"));
                };
                if m != 1 || !periodic {
                    return Err(invalid("initial_map", "winding_loop needs a circle grid"));
                }
                if winding.len() != n {
                    return Err(invalid("initial_map.winding", format!("needs {n} components, got {}", winding.len())));
                }
                let o = offset.clone().unwrap_or_else(|| vec![0.0; n]);
                expect_len("initial_map.offset", &o)?;
                let (w, l) = (winding.clone(), lengths[0]);
                Box::new(move |x: &[f64]| o.iter().zip(&w).map(|(o, w)| o + *w as f64 * period * x[0] / l).collect())
            }
            InitialMap::Constant { value } => {
                expect_len("initial_map.value", value)?;
                let v = value.clone();
                Box::new(move |_: &[f64]| v.clone())
            }
        };
        let bump = self.perturbation_field(&lengths, periodic, n);
        DiscreteMap::from_fn(grid, self.target, |x| {
            let mut y = base(x);
            for (yi, pi) in y.iter_mut().zip(bump(x)) {
                *yi += pi;
            }
            y
        })
        .map_err(|e| invalid("initial_map", e.to_string()))
    }

    /// `Σ_k c_k φ_k(x) / |k|²` per component with `c_k ~ U(−1, 1)` from the
    /// seed, rescaled so the largest sampled displacement equals the amplitude.
    fn perturbation_field(&self, lengths: &[f64], periodic: bool, n: usize) -> impl Fn(&[f64]) -> Vec<f64> {
        let p = self.perturbation;
        let m = lengths.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // Each term: per-axis (mode, phase) and per-component coefficients.
        let mut terms: Vec<(Vec<(f64, bool)>, Vec<f64>)> = Vec::new();
        if p.amplitude > 0.0 {
            let per_axis: Vec<(f64, bool)> = (1..=p.modes)
                .flat_map(|k| {
                    if periodic {
                        vec![(k as f64, false), (k as f64, true)]
                    } else {
                        vec![(k as f64, false)]
                    }
                })
                .collect();
            let mut combos: Vec<Vec<(f64, bool)>> = vec![Vec::new()];
            for _ in 0..m {
                combos = combos
                    .into_iter()
                    .flat_map(|c| {
                        per_axis.iter().map(move |t| {
                            let mut c = c.clone();
                            c.push(*t);
                            c
                        })
                    })
                    .collect();
            }
            for axes in combos {
                let coeffs = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                terms.push((axes, coeffs));
            }
        }
        let axis_lengths = lengths.to_vec();
        let eval = move |x: &[f64]| {
            let mut out = vec![0.0; n];
            for (axes, coeffs) in &terms {
                let mut w = 1.0;
                let mut k2 = 0.0;
                for ((k, cosine), (xi, l)) in axes.iter().zip(x.iter().zip(&axis_lengths)) {
                    let arg = if periodic { 2.0 * PI * k * xi / l } else { PI * k * xi / l };
                    w *= if *cosine { arg.cos() } else { arg.sin() };
                    k2 += k * k;
                }
                for (o, c) in out.iter_mut().zip(coeffs) {
                    *o += c * w / k2;
                }
            }
            out
        };
        // Normalize on a fine sampling of the domain box.
        let samples = 400usize;
        let mut peak = 0.0f64;
        let mut x = vec![0.0; m];
        for idx in 0..samples.pow(m as u32) {
            let mut rest = idx;
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = (rest % samples) as f64 / (samples - 1) as f64 * lengths[i];
                rest /= samples;
            }
            peak = eval(&x).iter().fold(peak, |a, v| a.max(v.abs()));
        }
        let scale = if peak > 0.0 { p.amplitude / peak } else { 0.0 };
        move |x: &[f64]| eval(x).into_iter().map(|v| v * scale).collect()
    }

    /// The output directory: `--out`, else `$HEATFLOW_OUT/<name>`, else the
    /// scenario's `output`, else `out/<name>`.
    pub fn output_dir(&self, cli_out: Option<&Path>, env_root: Option<&Path>) -> PathBuf {
        if let Some(dir) = cli_out {
            return dir.to_path_buf();
        }
        if let Some(root) = env_root {
            return root.join(&self.name);
        }
        self.output.clone().unwrap_or_else(|| Path::new("out").join(&self.name))
    }
}
