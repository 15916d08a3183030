//! Post-processing of flow trajectories: the evolution identity
//! `½ d/dt ‖τ‖² = −⟨J τ, τ⟩`, exponential rate fits, spectral-gap tracking and
//! the rate report.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowTrajectory;
use crate::jacobi::{self, EigenOptions, SpectrumReport};
use crate::map::{self, DiscreteMap};

/// A stored map with its step index and time.
#[derive(Debug, Clone)]
pub struct TimedMap {
    pub step: usize,
    pub t: f64,
    pub map: Arc<DiscreteMap>,
}

impl FlowTrajectory {
    pub fn timed_snapshots(&self) -> Vec<TimedMap> {
        self.samples
            .iter()
            .filter_map(|s| s.snapshot.as_ref().map(|m| TimedMap { step: s.step, t: s.t, map: Arc::clone(m) }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    pub t: f64,
    /// Central difference of `½‖τ‖²`.
    pub lhs: f64,
    /// `−⟨K τ, τ⟩_M` with the strong-form operator at the snapshot.
    pub rhs: f64,
    pub tension_sq: f64,
    pub residual: f64,
}

/// Residuals `|lhs − rhs| / max(‖τ‖², floor)` at every snapshot whose step
/// neighbors on both sides are also stored.
pub fn check_evolution_identity(snapshots: &[TimedMap], floor: f64) -> Result<Vec<IdentityResidual>> {
    let mut longest = usize::from(!snapshots.is_empty());
    let mut run = longest;
    let mut out = Vec::new();
    for k in 1..snapshots.len() {
        if snapshots[k].step == snapshots[k - 1].step + 1 {
            run += 1;
        } else {
            run = 1;
        }
        longest = longest.max(run);
        if run < 3 {
            continue;
        }
        let (prev, mid, next) = (&snapshots[k - 2], &snapshots[k - 1], &snapshots[k]);
        let half_sq = |m: &DiscreteMap| 0.5 * map::tension_norm(m).powi(2);
        let lhs = (half_sq(&next.map) - half_sq(&prev.map)) / (next.t - prev.t);
        let system = jacobi::assemble_system(Arc::clone(&mid.map))?;
        let tau = system.restrict(&map::tension(&mid.map))?;
        let rhs = -system.strong_pairing(&tau, &tau);
        let tension_sq = map::tension_norm(&mid.map).powi(2);
        let residual = (lhs - rhs).abs() / tension_sq.max(floor);
        out.push(IdentityResidual { t: mid.t, lhs, rhs, tension_sq, residual });
    }
    if out.is_empty() {
        return Err(Error::InsufficientSnapshots { needed: 3, found: longest });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WindowPolicy {
    /// Samples with `lower·y₀ ≤ y ≤ upper·y₀`; the earliest contiguous run of
    /// at least `min_samples` wins.
    Decades { upper: f64, lower: f64, min_samples: usize },
    /// Every positive sample.
    All,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        Self::Decades { upper: 1e-3, lower: 1e-8, min_samples: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub intercept: f64,
    /// Root-mean-square residual of `log y` about the fitted line.
    pub residual: f64,
    pub window: [f64; 2],
    pub samples: usize,
}

fn select_window(series: &[(f64, f64)], policy: WindowPolicy) -> Result<std::ops::Range<usize>> {
    match policy {
        WindowPolicy::All => {
            let found = series.iter().filter(|p| p.1 > 0.0).count();
            if found < 2 || found != series.len() {
                return Err(Error::EmptyWindow { needed: 2.max(series.len()), found });
            }
            Ok(0..series.len())
        }
        WindowPolicy::Decades { upper, lower, min_samples } => {
            let y0 = series.first().map_or(0.0, |p| p.1);
            let inside = |y: f64| y > 0.0 && y <= upper * y0 && y >= lower * y0;
            let needed = min_samples.max(2);
            let mut start = 0;
            let mut longest = 0;
            for k in 0..=series.len() {
                if k < series.len() && inside(series[k].1) {
                    continue;
                }
                if k - start >= needed {
                    return Ok(start..k);
                }
                longest = longest.max(k - start);
                start = k + 1;
            }
            Err(Error::EmptyWindow { needed, found: longest })
        }
    }
}

/// Least-squares line through `(t, log y)` on the policy window; `rate = −slope`.
pub fn fit_decay_rate(series: &[(f64, f64)], policy: WindowPolicy) -> Result<DecayFit> {
    let range = select_window(series, policy)?;
    let pts = &series[range];
    let count = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / count;
    let mean_l = pts.iter().map(|p| p.1.ln()).sum::<f64>() / count;
    let (mut stt, mut stl) = (0.0, 0.0);
    for (t, y) in pts {
        stt += (t - mean_t).powi(2);
        stl += (t - mean_t) * (y.ln() - mean_l);
    }
    let slope = if stt > 0.0 { stl / stt } else { 0.0 };
    let intercept = mean_l - slope * mean_t;
    let sq: f64 = pts.iter().map(|(t, y)| (y.ln() - intercept - slope * t).powi(2)).sum();
    Ok(DecayFit {
        rate: -slope,
        intercept,
        residual: (sq / count).sqrt(),
        window: [pts[0].0, pts[pts.len() - 1].0],
        samples: pts.len(),
    })
}

/// `(t, λ₁)` at every `stride`-th snapshot.
pub fn gap_track(snapshots: &[TimedMap], stride: usize, opts: &EigenOptions) -> Result<Vec<(f64, f64)>> {
    snapshots
        .iter()
        .step_by(stride.max(1))
        .map(|s| {
            let system = jacobi::assemble_system(Arc::clone(&s.map))?;
            Ok((s.t, jacobi::lowest_eigs(&system, 1, opts)?[0].value))
        })
        .collect()
}

/// Largest energy increase between consecutive samples (zero when monotone).
pub fn max_energy_increase(trajectory: &FlowTrajectory) -> f64 {
    trajectory.samples.windows(2).map(|p| p[1].energy - p[0].energy).fold(0.0, f64::max)
}

/// `(t, |E(t) − E_final|)` over all but the final sample.
pub fn energy_gap_series(trajectory: &FlowTrajectory) -> Vec<(f64, f64)> {
    let e_final = trajectory.final_sample().energy;
    let n = trajectory.samples.len().saturating_sub(1);
    trajectory.samples[..n].iter().map(|s| (s.t, (s.energy - e_final).abs())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// `λ₁` of the limit is in the kernel band; informational only.
    DegenerateLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateOptions {
    pub window: WindowPolicy,
    /// Relative slack on the guaranteed-rate comparisons.
    pub tol_rate: f64,
    /// Relative slack of the exponential envelope.
    pub tol_envelope: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self { window: WindowPolicy::default(), tol_rate: 1e-2, tol_envelope: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub verdict: Verdict,
    pub b_fit: f64,
    pub fit_window: [f64; 2],
    pub fit_residual: f64,
    pub fit_samples: usize,
    pub lambda1_final: f64,
    /// `λ₁_final / 2`, the rate guaranteed by the Grönwall argument.
    pub guaranteed_rate: f64,
    /// `b_fit / λ₁_final`, the observed sharpness.
    pub observed_ratio: f64,
    pub energy_rate: f64,
    pub energy_fit_window: [f64; 2],
    pub energy_fit_residual: f64,
    /// `energy_rate / (2 b_fit)`.
    pub energy_ratio: f64,
    pub degenerate: bool,
    pub kernel_dim: usize,
    /// `‖τ(t)‖ ≤ (1 + tol)‖τ(t_a)‖ e^{−b (t − t_a)}` over the fit window, checked
    /// only when tracked `λ₁` stays above the guaranteed rate.
    pub envelope_holds: Option<bool>,
    /// Smallest tracked `λ₁` from the fit window on.
    pub gap_tail_min: Option<f64>,
    pub max_energy_increase: f64,
    pub tol_rate: f64,
}

/// Fits `‖τ‖` and `|E − E_final|` and compares them with the spectrum of the limit.
pub fn build_rate_report(
    trajectory: &FlowTrajectory,
    spectrum: &SpectrumReport,
    gap_series: Option<&[(f64, f64)]>,
    opts: &RateOptions,
) -> Result<RateReport> {
    let last = trajectory.final_sample();
    if !trajectory.converged {
        return Err(Error::NotConverged { tension: last.tension_l2, tolerance: trajectory.stop_tolerance });
    }
    let lambda1 = *spectrum
        .lambda
        .first()
        .ok_or_else(|| Error::InvalidDescriptor("spectrum report holds no eigenvalues".into()))?;
    let tension = trajectory.tension_series();
    let fit = fit_decay_rate(&tension, opts.window)?;
    let energy = fit_decay_rate(&energy_gap_series(trajectory), opts.window)?;
    let guaranteed = 0.5 * lambda1;
    let gap_tail_min = gap_series.and_then(|g| {
        g.iter().filter(|p| p.0 >= fit.window[0]).map(|p| p.1).reduce(f64::min)
    });
    let envelope_holds = gap_tail_min.filter(|m| *m >= guaranteed).map(|_| {
        let in_window: Vec<&(f64, f64)> =
            tension.iter().filter(|p| p.0 >= fit.window[0] && p.0 <= fit.window[1]).collect();
        let (ta, ya) = *in_window[0];
        in_window.iter().all(|(t, y)| *y <= (1.0 + opts.tol_envelope) * ya * (-guaranteed * (t - ta)).exp())
    });
    let verdict = if spectrum.degenerate {
        Verdict::DegenerateLimit
    } else if fit.rate >= guaranteed * (1.0 - opts.tol_rate) && energy.rate >= 2.0 * guaranteed * (1.0 - opts.tol_rate) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(RateReport {
        verdict,
        b_fit: fit.rate,
        fit_window: fit.window,
        fit_residual: fit.residual,
        fit_samples: fit.samples,
        lambda1_final: lambda1,
        guaranteed_rate: guaranteed,
        observed_ratio: fit.rate / lambda1,
        energy_rate: energy.rate,
        energy_fit_window: energy.window,
        energy_fit_residual: energy.residual,
        energy_ratio: energy.rate / (2.0 * fit.rate),
        degenerate: spectrum.degenerate,
        kernel_dim: spectrum.kernel_dim,
        envelope_holds,
        gap_tail_min,
        max_energy_increase: max_energy_increase(trajectory),
        tol_rate: opts.tol_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{self, FlowConfig, Stepper};
    use crate::geometry::TargetManifold;
    use crate::grid::DomainGrid;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn fourier(n: usize) -> f64 {
        let h = 2.0 * PI / n as f64;
        4.0 / (h * h) * (PI / n as f64).sin().powi(2)
    }

    fn sine_start(n: usize) -> DiscreteMap {
        let grid = DomainGrid::circle(2.0 * PI, n).unwrap();
        DiscreteMap::from_fn(grid, TargetManifold::euclidean(1), |x| vec![0.1 * x[0].sin()]).unwrap()
    }

    fn perturbed_chord(n: usize) -> DiscreteMap {
        let grid = DomainGrid::interval(1.0, n).unwrap();
        DiscreteMap::from_fn(grid, TargetManifold::hyperbolic(2, 1.0), |x| {
            let b = (PI * x[0]).sin();
            vec![-1.0 + 2.0 * x[0] + 0.1 * b * (2.0 * PI * x[0]).cos(), 1.0 + 0.1 * b]
        })
        .unwrap()
    }

    #[test]
    fn exact_exponential_is_fitted_exactly() {
        let series: Vec<(f64, f64)> = (0..30).map(|k| (0.1 * k as f64, 3.0 * (-0.2 * k as f64).exp())).collect();
        let fit = fit_decay_rate(&series, WindowPolicy::All).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 3.0f64.ln()).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        assert_eq!(fit.samples, 30);
    }

    #[test]
    fn constant_series_has_zero_rate() {
        let series: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 0.7)).collect();
        assert_eq!(fit_decay_rate(&series, WindowPolicy::All).unwrap().rate, 0.0);
        assert!(matches!(
            fit_decay_rate(&series, WindowPolicy::default()),
            Err(Error::EmptyWindow { needed: 20, found: 0 })
        ));
    }

    #[test]
    fn decade_window_is_the_earliest_admissible_run() {
        // Decays through the window, bounces back above it, then decays again.
        let mut series: Vec<(f64, f64)> = (0..60).map(|k| (k as f64, (-0.5 * k as f64).exp())).collect();
        for (k, p) in series.iter_mut().enumerate().skip(40) {
            p.1 = 1e-2 * (-0.1 * (k - 40) as f64).exp();
        }
        let fit = fit_decay_rate(&series, WindowPolicy::Decades { upper: 1e-3, lower: 1e-8, min_samples: 5 }).unwrap();
        assert!((fit.rate - 0.5).abs() < 1e-12);
        assert_eq!(fit.window, [14.0, 36.0]);
        let strict = WindowPolicy::Decades { upper: 1e-3, lower: 1e-8, min_samples: 50 };
        assert!(matches!(fit_decay_rate(&series, strict), Err(Error::EmptyWindow { needed: 50, found: 23 })));
    }

    #[test]
    fn single_mode_flow_decays_at_the_fourier_rate() {
        let n = 64;
        let f0 = sine_start(n);
        let mut cfg = FlowConfig::for_problem(f0.grid(), f0.target(), 25.0);
        cfg.sample_stride = 100;
        let traj = flow::run(&f0, &cfg).unwrap();
        let fit = fit_decay_rate(&traj.tension_series(), WindowPolicy::default()).unwrap();
        let mu = fourier(n);
        assert!((fit.rate / mu - 1.0).abs() < 1e-3, "{} vs {mu}", fit.rate);
    }

    #[test]
    fn identity_vanishes_at_harmonic_maps() {
        let grid = DomainGrid::interval(1.0, 21).unwrap();
        let f = Arc::new(DiscreteMap::constant(grid, TargetManifold::hyperbolic(2, 1.0), &[0.0, 1.0]).unwrap());
        let snaps: Vec<TimedMap> = (0..3).map(|k| TimedMap { step: k, t: k as f64, map: Arc::clone(&f) }).collect();
        for r in check_evolution_identity(&snaps, 1e-12).unwrap() {
            assert_eq!(r.residual, 0.0);
        }
    }

    #[test]
    fn identity_holds_for_a_flat_eigenmode() {
        let residual = |n: usize| {
            let f0 = sine_start(n);
            let mut cfg = FlowConfig::for_problem(f0.grid(), f0.target(), 0.0);
            cfg.stepper = Stepper::CoordinateEuler;
            cfg.t_end = 3.0 * cfg.dt;
            cfg.snapshot_stride = 1;
            let traj = flow::run(&f0, &cfg).unwrap();
            let res = check_evolution_identity(&traj.timed_snapshots(), 0.0).unwrap();
            let mu = fourier(n);
            for r in &res {
                assert!((r.rhs / r.tension_sq + mu).abs() < 1e-9 * mu);
            }
            res.iter().map(|r| r.residual).fold(0.0, f64::max)
        };
        let (coarse, fine) = (residual(32), residual(64));
        assert!(coarse < 1e-2, "{coarse}");
        assert!(coarse / fine > 2.0, "{coarse} vs {fine}");
    }

    #[test]
    fn identity_needs_three_consecutive_snapshots() {
        let f = Arc::new(sine_start(16));
        let snaps: Vec<TimedMap> =
            [0, 1, 5, 6].iter().map(|&k| TimedMap { step: k, t: k as f64, map: Arc::clone(&f) }).collect();
        assert!(matches!(
            check_evolution_identity(&snaps, 0.0),
            Err(Error::InsufficientSnapshots { needed: 3, found: 2 })
        ));
    }

    #[test]
    fn stationary_gap_track_is_constant() {
        let f = Arc::new(DiscreteMap::constant(DomainGrid::interval(1.0, 21).unwrap(), TargetManifold::euclidean(1), &[1.0]).unwrap());
        let snaps: Vec<TimedMap> = (0..4).map(|k| TimedMap { step: k, t: k as f64, map: Arc::clone(&f) }).collect();
        let track = gap_track(&snaps, 1, &EigenOptions::default()).unwrap();
        assert_eq!(track.len(), 4);
        assert!(track.windows(2).all(|p| p[0].1 == p[1].1));
    }

    #[test]
    fn constant_limit_is_degenerate() {
        let n = 64;
        let f0 = sine_start(n);
        let mut cfg = FlowConfig::for_problem(f0.grid(), f0.target(), 40.0);
        cfg.sample_stride = 100;
        let traj = flow::run(&f0, &cfg).unwrap();
        assert!(traj.converged);
        let system = jacobi::assemble_system(Arc::clone(traj.final_map())).unwrap();
        let pairs = jacobi::lowest_eigs(&system, 3, &EigenOptions::default()).unwrap();
        let spectrum = jacobi::spectrum_report(&system, &pairs);
        let report = build_rate_report(&traj, &spectrum, None, &RateOptions::default()).unwrap();
        assert_eq!(report.verdict, Verdict::DegenerateLimit);
        assert_eq!(report.kernel_dim, 1);
        assert!((report.b_fit / fourier(n) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn unconverged_flows_are_rejected() {
        let f0 = sine_start(16);
        let cfg = FlowConfig::for_problem(f0.grid(), f0.target(), 0.1);
        let traj = flow::run(&f0, &cfg).unwrap();
        let spectrum = SpectrumReport { lambda: vec![1.0], residuals: vec![0.0], degenerate: false, kernel_dim: 0 };
        assert!(matches!(
            build_rate_report(&traj, &spectrum, None, &RateOptions::default()),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn geodesic_limit_passes_the_rate_check() {
        let f0 = perturbed_chord(41);
        let mut cfg = FlowConfig::for_problem(f0.grid(), f0.target(), 10.0);
        cfg.sample_stride = 50;
        cfg.snapshot_stride = 500;
        let traj = flow::run(&f0, &cfg).unwrap();
        assert!(traj.converged);
        assert!(traj.warnings.is_empty());
        let system = jacobi::assemble_system(Arc::clone(traj.final_map())).unwrap();
        let pairs = jacobi::lowest_eigs(&system, 2, &EigenOptions::default()).unwrap();
        let spectrum = jacobi::spectrum_report(&system, &pairs);
        let gaps = gap_track(&traj.timed_snapshots(), 1, &EigenOptions::default()).unwrap();
        let report = build_rate_report(&traj, &spectrum, Some(&gaps), &RateOptions::default()).unwrap();
        assert_eq!(report.verdict, Verdict::Pass);
        // The second mode π² + ℓ² lies close above λ₁ and biases finite windows upward.
        let second = pairs[1].value;
        assert!(report.b_fit >= report.lambda1_final && report.b_fit <= second, "{report:?}");
        assert!(report.energy_rate >= 2.0 * report.lambda1_final && report.energy_rate <= 2.0 * second);
        assert_eq!(report.envelope_holds, Some(true));
        assert!(report.gap_tail_min.unwrap() >= 0.98 * report.lambda1_final);
    }

    proptest! {
        #[test]
        fn fitted_rate_recovers_exponentials(a in 0.1f64..10.0, b in 0.01f64..5.0) {
            let series: Vec<(f64, f64)> = (0..25).map(|k| (0.3 * k as f64, a * (-b * 0.3 * k as f64).exp())).collect();
            let fit = fit_decay_rate(&series, WindowPolicy::All).unwrap();
            prop_assert!((fit.rate - b).abs() < 1e-10 * b.max(1.0));
        }
    }
}
