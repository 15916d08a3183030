//! Explicit time integration of the heat flow `∂_t f = τ(f)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TargetManifold;
use crate::grid::DomainGrid;
use crate::map::{self, DiscreteMap};

pub const DEFAULT_CFL_SAFETY: f64 = 0.2;
pub const DEFAULT_STOP_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_ENERGY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    /// `f ← f + dt τ(f)` on chart coordinates.
    CoordinateEuler,
    /// Classical four-stage Runge–Kutta on chart coordinates.
    CoordinateRk4,
    /// `f ← exp_f(dt τ(f))` node by node.
    GeodesicEuler,
}

impl Stepper {
    /// Geodesic Euler on curved targets (coordinate updates can overshoot the
    /// chart boundary), RK4 on flat ones.
    pub fn default_for(target: &TargetManifold) -> Self {
        if target.is_flat() {
            Self::CoordinateRk4
        } else {
            Self::GeodesicEuler
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dt: f64,
    pub t_end: f64,
    pub stepper: Stepper,
    /// Steps between recorded samples of `E` and `‖τ‖`.
    pub sample_stride: usize,
    /// Steps between stored map snapshots; zero stores only the end points.
    pub snapshot_stride: usize,
    /// Consecutive steps stored at each snapshot point.
    pub snapshot_burst: usize,
    pub stop_tolerance: f64,
    pub cfl_safety: f64,
    /// Relative slack `tol_E / E(f_0)` before an energy increase is flagged.
    pub energy_tolerance: f64,
}

impl FlowConfig {
    /// Defaults for a grid/target pair: `dt = c h_min² / max g^{ii}` with `c = 0.2`.
    pub fn for_problem(grid: &DomainGrid, target: &TargetManifold, t_end: f64) -> Self {
        Self {
            dt: grid.stability_bound(DEFAULT_CFL_SAFETY),
            t_end,
            stepper: Stepper::default_for(target),
            sample_stride: 1,
            snapshot_stride: 0,
            snapshot_burst: 1,
            stop_tolerance: DEFAULT_STOP_TOLERANCE,
            cfl_safety: DEFAULT_CFL_SAFETY,
            energy_tolerance: DEFAULT_ENERGY_TOLERANCE,
        }
    }

    pub fn validate(&self, grid: &DomainGrid) -> Result<()> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety < 1.0) {
            return Err(Error::InvalidDescriptor(format!("cfl_safety must lie in (0, 1), got {}", self.cfl_safety)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidDescriptor(format!("dt must be positive, got {}", self.dt)));
        }
        let bound = grid.stability_bound(self.cfl_safety);
        if self.dt > bound * (1.0 + 1e-12) {
            return Err(Error::StabilityGuard { dt: self.dt, bound });
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::InvalidDescriptor(format!("t_end must be non-negative, got {}", self.t_end)));
        }
        if self.sample_stride == 0 || self.snapshot_burst == 0 {
            return Err(Error::InvalidDescriptor("sample_stride and snapshot_burst must be positive".into()));
        }
        Ok(())
    }
}

/// One recorded point of a trajectory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub tension_l2: f64,
    pub snapshot: Option<Arc<DiscreteMap>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowWarning {
    NonMonotoneEnergy { t: f64, increase: f64 },
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub dt: f64,
    pub stop_tolerance: f64,
    pub samples: Vec<Sample>,
    pub converged: bool,
    pub warnings: Vec<FlowWarning>,
    final_map: Arc<DiscreteMap>,
}

impl FlowTrajectory {
    /// Rebuilds a trajectory from recorded samples, e.g. read back from disk;
    /// `converged` is re-derived from the final sample.
    pub fn from_parts(dt: f64, stop_tolerance: f64, samples: Vec<Sample>, final_map: Arc<DiscreteMap>) -> Result<Self> {
        let last = samples.last().ok_or_else(|| Error::InvalidDescriptor("trajectory holds no samples".into()))?;
        if samples.windows(2).any(|p| p[1].t <= p[0].t) {
            return Err(Error::InvalidDescriptor("sample times must increase strictly".into()));
        }
        let converged = last.tension_l2 <= stop_tolerance;
        Ok(Self { dt, stop_tolerance, samples, converged, warnings: Vec::new(), final_map })
    }

    /// The numerical limit candidate `f_∞`.
    pub fn final_map(&self) -> &Arc<DiscreteMap> {
        &self.final_map
    }

    pub fn final_sample(&self) -> &Sample {
        self.samples.last().expect("trajectory holds at least the initial sample")
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.snapshot.is_some())
    }

    /// `(t, ‖τ‖_{L²})` series.
    pub fn tension_series(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| (s.t, s.tension_l2)).collect()
    }

    pub fn energy_series(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| (s.t, s.energy)).collect()
    }
}

fn advance(f: &DiscreteMap, dir: &[f64], scale: f64) -> Result<DiscreteMap> {
    let values = f.values().iter().zip(dir).map(|(v, d)| v + scale * d).collect();
    f.with_values(values)
}

fn step_unchecked(f: &DiscreteMap, dt: f64, stepper: Stepper) -> Result<DiscreteMap> {
    match stepper {
        Stepper::CoordinateEuler => advance(f, &map::tension_values(f), dt),
        Stepper::CoordinateRk4 => {
            let k1 = map::tension_values(f);
            let k2 = map::tension_values(&advance(f, &k1, dt / 2.0)?);
            let k3 = map::tension_values(&advance(f, &k2, dt / 2.0)?);
            let k4 = map::tension_values(&advance(f, &k3, dt)?);
            let dir: Vec<f64> =
                (0..k1.len()).map(|i| (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0).collect();
            advance(f, &dir, dt)
        }
        Stepper::GeodesicEuler => {
            let tau = map::tension_values(f);
            let n = f.dim();
            let mut values = vec![0.0; f.values().len()];
            for idx in 0..f.node_count() {
                let range = idx * n..(idx + 1) * n;
                f.target().exp_map_unchecked(f.value(idx), &tau[range.clone()], dt, &mut values[range]);
            }
            f.with_values(values)
        }
    }
}

/// One explicit step with the configured stepper and time step.
pub fn step(f: &DiscreteMap, config: &FlowConfig) -> Result<DiscreteMap> {
    config.validate(f.grid())?;
    step_unchecked(f, config.dt, config.stepper)
}

fn sample_of(step: usize, t: f64, f: &Arc<DiscreteMap>, keep: bool) -> Sample {
    Sample {
        step,
        t,
        energy: map::energy(f),
        tension_l2: map::tension_norm(f),
        snapshot: keep.then(|| Arc::clone(f)),
    }
}

/// Integrates until `t_end` or until `‖τ‖_{L²} ≤ stop_tolerance` at a sample.
pub fn run(f0: &DiscreteMap, config: &FlowConfig) -> Result<FlowTrajectory> {
    config.validate(f0.grid())?;
    let is_snapshot = |step: usize| {
        config.snapshot_stride > 0 && step >= config.snapshot_stride && step % config.snapshot_stride < config.snapshot_burst
    };
    let mut f = Arc::new(f0.clone());
    let mut samples = vec![sample_of(0, 0.0, &f, true)];
    let e0 = samples[0].energy;
    let tol_e = config.energy_tolerance * e0.abs();
    let mut warnings = Vec::new();
    let mut converged = samples[0].tension_l2 <= config.stop_tolerance;
    let max_steps = (config.t_end / config.dt * (1.0 + 1e-12)).floor() as usize;
    let mut step = 0;
    while !converged && step < max_steps {
        f = Arc::new(step_unchecked(&f, config.dt, config.stepper)?);
        step += 1;
        let snap = is_snapshot(step);
        let last = step == max_steps;
        if step % config.sample_stride == 0 || snap || last {
            let s = sample_of(step, step as f64 * config.dt, &f, snap || last);
            let prev = samples.last().expect("non-empty").energy;
            if s.energy > prev + tol_e {
                warnings.push(FlowWarning::NonMonotoneEnergy { t: s.t, increase: s.energy - prev });
            }
            converged = s.tension_l2 <= config.stop_tolerance;
            samples.push(s);
        }
    }
    if let Some(last) = samples.last_mut() {
        if last.snapshot.is_none() {
            last.snapshot = Some(Arc::clone(&f));
        }
    }
    Ok(FlowTrajectory { dt: config.dt, stop_tolerance: config.stop_tolerance, samples, converged, warnings, final_map: f })
}

/// Relative mismatch of the discrete energy balance `dE/dt = −‖τ‖²` over
/// consecutive samples, `(t_mid, residual)`; `‖τ‖²` is averaged over the pair.
pub fn dissipation_residuals(trajectory: &FlowTrajectory, floor: f64) -> Vec<(f64, f64)> {
    trajectory
        .samples
        .windows(2)
        .map(|p| {
            let dt = p[1].t - p[0].t;
            let rate = (p[1].energy - p[0].energy) / dt;
            let q = 0.5 * (p[0].tension_l2.powi(2) + p[1].tension_l2.powi(2));
            (0.5 * (p[0].t + p[1].t), (rate + q).abs() / q.max(floor))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine_map(n: usize, eps: f64) -> DiscreteMap {
        let grid = DomainGrid::circle(2.0 * PI, n).unwrap();
        DiscreteMap::from_fn(grid, TargetManifold::euclidean(1), |x| vec![eps * x[0].sin()]).unwrap()
    }

    fn geodesic_map(n: usize) -> DiscreteMap {
        let t = TargetManifold::hyperbolic(2, 1.0);
        DiscreteMap::from_fn(DomainGrid::interval(1.0, n).unwrap(), t, |x| {
            t.exp_map(&[0.0, 1.0], &[0.0, 0.8], x[0]).unwrap()
        })
        .unwrap()
    }

    #[test]
    fn harmonic_maps_are_fixed_points() {
        let grid = DomainGrid::torus2([1.0, 1.0], [6, 6]).unwrap();
        for target in [TargetManifold::euclidean(2), TargetManifold::hyperbolic(2, 1.0)] {
            let f = DiscreteMap::constant(grid.clone(), target, &[0.3, 1.2]).unwrap();
            for stepper in [Stepper::CoordinateEuler, Stepper::CoordinateRk4, Stepper::GeodesicEuler] {
                let mut cfg = FlowConfig::for_problem(&grid, &target, 1.0);
                cfg.stepper = stepper;
                assert_eq!(step(&f, &cfg).unwrap(), f);
            }
        }
    }

    #[test]
    fn flat_euler_step_is_linear_heat_step() {
        let f = sine_map(32, 0.3);
        let grid = f.grid().clone();
        let mut cfg = FlowConfig::for_problem(&grid, f.target(), 1.0);
        cfg.stepper = Stepper::CoordinateEuler;
        let next = step(&f, &cfg).unwrap();
        let h2 = grid.spacing(0).powi(2);
        for j in 0..32 {
            let (p, q) = (grid.neighbor(j, 0, -1).unwrap(), grid.neighbor(j, 0, 1).unwrap());
            let v = f.values();
            let expected = v[j] + cfg.dt * (v[p] - 2.0 * v[j] + v[q]) / h2;
            assert!((next.values()[j] - expected).abs() < 1e-15);
        }
        cfg.stepper = Stepper::GeodesicEuler;
        assert_eq!(step(&f, &cfg).unwrap(), next);
    }

    #[test]
    fn euler_eigenmode_decays_geometrically() {
        let (n, eps) = (64, 0.05);
        let f = sine_map(n, eps);
        let mut cfg = FlowConfig::for_problem(f.grid(), f.target(), 0.5);
        cfg.stepper = Stepper::CoordinateEuler;
        cfg.stop_tolerance = 0.0;
        let traj = run(&f, &cfg).unwrap();
        let h = f.grid().spacing(0);
        let mu = 4.0 / (h * h) * (PI / n as f64).sin().powi(2);
        let steps = traj.final_sample().step;
        let amp = eps * (1.0 - cfg.dt * mu).powi(steps as i32);
        for (j, v) in traj.final_map().values().iter().enumerate() {
            let x = f.grid().coordinates(j)[0];
            assert!((v - amp * x.sin()).abs() < 1e-14);
        }
    }

    #[test]
    fn stability_guard_rejects_large_steps() {
        let f = sine_map(16, 0.1);
        let mut cfg = FlowConfig::for_problem(f.grid(), f.target(), 1.0);
        cfg.dt *= 2.0;
        assert!(matches!(step(&f, &cfg), Err(Error::StabilityGuard { .. })));
        assert!(matches!(run(&f, &cfg), Err(Error::StabilityGuard { .. })));
    }

    #[test]
    fn harmonic_start_stops_immediately() {
        let f = geodesic_map(41);
        let cfg = FlowConfig { stop_tolerance: 1e-2, ..FlowConfig::for_problem(f.grid(), f.target(), 1.0) };
        let traj = run(&f, &cfg).unwrap();
        assert!(traj.converged);
        assert_eq!(traj.samples.len(), 1);
        assert!(traj.final_sample().tension_l2 <= 1e-2);
    }

    #[test]
    fn hyperbolic_flow_dissipates_energy() {
        let t = TargetManifold::hyperbolic(2, 1.0);
        let grid = DomainGrid::interval(1.0, 41).unwrap();
        let f0 = DiscreteMap::from_fn(grid.clone(), t, |x| {
            vec![-1.0 + 2.0 * x[0] + 0.1 * (3.0 * PI * x[0]).sin(), 1.0 + 0.2 * (PI * x[0]).sin()]
        })
        .unwrap();
        let mut cfg = FlowConfig::for_problem(&grid, &t, 0.3);
        cfg.sample_stride = 10;
        cfg.stop_tolerance = 0.0;
        let traj = run(&f0, &cfg).unwrap();
        assert!(traj.warnings.is_empty());
        assert!(traj.samples.windows(2).all(|p| p[1].energy <= p[0].energy));
        // Single-step pairs isolate the O(dt) time discretization error.
        cfg.sample_stride = 1;
        cfg.t_end = 0.01;
        let fine = run(&f0, &cfg).unwrap();
        let worst = dissipation_residuals(&fine, 0.0).iter().map(|r| r.1).fold(0.0, f64::max);
        assert!(worst < 0.5, "worst dissipation residual {worst}");
    }

    #[test]
    fn chart_exit_is_reported() {
        let t = TargetManifold::HyperbolicHalfSpace { dim: 2, kappa: 1.0, chart_guard: 0.9 };
        let grid = DomainGrid::interval(1.0, 11).unwrap();
        // The exact flow keeps `min y`; only an oversized coordinate step can leave the chart.
        let f0 = DiscreteMap::from_fn(grid.clone(), t, |x| vec![x[0], 0.95 + 3.0 * (PI * x[0]).sin()]).unwrap();
        let cfg = FlowConfig::for_problem(&grid, &t, 5.0);
        assert!(run(&f0, &cfg).is_ok());
        let bad = step_unchecked(&f0, 100.0 * cfg.dt, Stepper::CoordinateEuler);
        assert!(matches!(bad, Err(Error::ChartViolation(_))));
    }

    #[test]
    fn snapshots_follow_stride_and_burst() {
        let f = sine_map(16, 0.1);
        let cfg = FlowConfig {
            sample_stride: 5,
            snapshot_stride: 10,
            snapshot_burst: 3,
            stop_tolerance: 0.0,
            ..FlowConfig::for_problem(f.grid(), f.target(), 1.0)
        };
        let cfg = FlowConfig { t_end: 25.5 * cfg.dt, ..cfg };
        let traj = run(&f, &cfg).unwrap();
        let snaps: Vec<usize> = traj.snapshots().map(|s| s.step).collect();
        assert_eq!(snaps, vec![0, 10, 11, 12, 20, 21, 22, 25]);
        assert!(traj.samples.windows(2).all(|p| p[0].t < p[1].t));
    }
}
