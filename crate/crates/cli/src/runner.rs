//! Executes a scenario: flow, spectrum, post-processing, checks and artifacts.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use heatflow_core::convergence::{
    self, check_evolution_identity, gap_track, IdentityResidual, RateReport, TimedMap, Verdict,
};
use heatflow_core::flow::{self, FlowTrajectory};
use heatflow_core::jacobi::{self, JacobiSystem, SpectrumReport, KERNEL_THRESHOLD};
use heatflow_core::DiscreteMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Reported but never fails the run.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        let status = if pass { CheckStatus::Pass } else { CheckStatus::Fail };
        Self { name: name.to_string(), status, detail }
    }

    fn info(name: &str, detail: String) -> Self {
        Self { name: name.to_string(), status: CheckStatus::Info, detail }
    }
}

/// Everything computed for one scenario, before anything is written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trajectory: FlowTrajectory,
    pub spectrum: SpectrumReport,
    pub scale: f64,
    pub rate: Option<RateReport>,
    pub rate_error: Option<String>,
    pub identity: Option<Vec<IdentityResidual>>,
    pub gap: Option<Vec<(f64, f64)>>,
    /// Largest weak/strong mismatch over smooth test sections.
    pub assembly_smooth: Option<f64>,
    /// Largest weak/strong mismatch over grid-scale random sections.
    pub assembly_rough: Option<f64>,
    /// `min (R(s) − λ₁)` over the sampled Rayleigh quotients.
    pub rayleigh_margin: Option<f64>,
    pub checks: Vec<Check>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    /// Names of the failed checks.
    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail).map(|c| c.name.as_str()).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// `Σ c φ(x) / |k|²` per component over a few low modes; periodic axes get
/// random phases, Dirichlet axes vanish on the boundary.
fn smooth_section(system: &JacobiSystem, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = system.base();
    let grid = base.grid();
    let n = base.dim();
    let periodic = grid.is_periodic();
    let m = grid.dim();
    let terms: Vec<(Vec<(f64, f64)>, Vec<f64>)> = (0..4)
        .map(|_| {
            let axes = (0..m).map(|_| (rng.gen_range(1..=4) as f64, rng.gen_range(0.0..2.0 * PI))).collect();
            let coeffs = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (axes, coeffs)
        })
        .collect();
    let mut out = Vec::with_capacity(system.dof_count());
    for &node in system.dof_nodes() {
        let x = grid.coordinates(node);
        let mut v = vec![0.0; n];
        for (axes, coeffs) in &terms {
            let mut w = 1.0;
            let mut k2 = 0.0;
            for (i, (k, phase)) in axes.iter().enumerate() {
                let l = grid.axis(i).length;
                w *= if periodic { (2.0 * PI * k * x[i] / l + phase).cos() } else { (PI * k * x[i] / l).sin() };
                k2 += k * k;
            }
            for (o, c) in v.iter_mut().zip(coeffs) {
                *o += c * w / k2;
            }
        }
        out.extend(v);
    }
    out
}

fn rough_section(system: &JacobiSystem, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..system.dof_count()).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn nonzero(v: Vec<f64>) -> Option<Vec<f64>> {
    v.iter().any(|x| *x != 0.0).then_some(v)
}

/// Runs the flow and every enabled analysis; nothing is written.
pub fn execute(scenario: &Scenario) -> Result<RunOutcome, CliError> {
    let a = &scenario.analysis;
    let f0 = scenario.initial_map()?;
    let e0 = heatflow_core::map::energy(&f0);
    let trajectory = flow::run(&f0, &scenario.flow)?;
    let system = jacobi::assemble_system(Arc::clone(trajectory.final_map()))?;
    let k = a.eigen_k.min(system.dof_count());
    let pairs = jacobi::lowest_eigs(&system, k, &a.eigen)?;
    let spectrum = jacobi::spectrum_report(&system, &pairs);
    let scale = system.scale();
    let lambda1 = spectrum.lambda[0];
    let snapshots = trajectory.timed_snapshots();
    let mut checks = Vec::new();
    let last = trajectory.final_sample();

    checks.push(Check::new(
        "converged",
        trajectory.converged,
        format!("final ‖τ‖ = {:e} at t = {:e}, stop tolerance {:e}", last.tension_l2, last.t, trajectory.stop_tolerance),
    ));

    let increase = convergence::max_energy_increase(&trajectory);
    let allowed = scenario.flow.energy_tolerance * e0.abs();
    checks.push(Check::new(
        "energy_monotone",
        increase <= allowed,
        format!("max increase {increase:e}, allowed {allowed:e}"),
    ));

    let gap = if a.gap_stride > 0 && !snapshots.is_empty() {
        Some(gap_track(&snapshots, a.gap_stride, &a.eigen)?)
    } else {
        None
    };

    let (rate, rate_error) =
        match convergence::build_rate_report(&trajectory, &spectrum, gap.as_deref(), &a.rate) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
    match (&rate, &rate_error) {
        (Some(r), _) => {
            let detail = format!(
                "b_fit = {:e}, λ₁ = {:e}, guaranteed {:e}, energy rate {:e}",
                r.b_fit, r.lambda1_final, r.guaranteed_rate, r.energy_rate
            );
            checks.push(match r.verdict {
                Verdict::Pass => Check::new("rate_verdict", true, detail),
                Verdict::Fail => Check::new("rate_verdict", false, detail),
                Verdict::DegenerateLimit => {
                    Check::info("rate_verdict", format!("degenerate limit, kernel dimension {}; {detail}", r.kernel_dim))
                }
            });
        }
        (None, Some(e)) => checks.push(Check::new("rate_verdict", false, e.clone())),
        (None, None) => unreachable!(),
    }

    let identity = if snapshots.len() >= 3 {
        let max_sq = snapshots.iter().map(|s| heatflow_core::map::tension_norm(&s.map).powi(2)).fold(0.0, f64::max);
        match check_evolution_identity(&snapshots, a.identity_floor * max_sq) {
            Ok(rows) => Some(rows),
            Err(heatflow_core::Error::InsufficientSnapshots { .. }) => None,
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    match &identity {
        Some(rows) => {
            let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
            checks.push(Check::new(
                "evolution_identity",
                worst <= a.identity_tolerance,
                format!("max residual {worst:e} over {} snapshots, tolerance {:e}", rows.len(), a.identity_tolerance),
            ));
        }
        None => checks.push(Check::info("evolution_identity", "no run of three consecutive snapshots".into())),
    }

    let floor = -a.spectrum_tolerance * scale;
    let min_lambda = spectrum.lambda.iter().copied().fold(f64::INFINITY, f64::min);
    checks.push(Check::new(
        "spectrum_nonnegative",
        min_lambda >= floor,
        format!("min eigenvalue {min_lambda:e}, floor {floor:e}"),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x5a17_c0de);
    let rayleigh_margin = if a.rayleigh_samples > 0 {
        let mut margin = f64::INFINITY;
        for i in 0..a.rayleigh_samples {
            let raw = if i % 2 == 0 { rough_section(&system, &mut rng) } else { smooth_section(&system, &mut rng) };
            let Some(x) = nonzero(raw) else { continue };
            let r = jacobi::rayleigh(&system, &system.extend(&x)?)?;
            margin = margin.min(r - lambda1);
        }
        checks.push(Check::new(
            "rayleigh_min_max",
            margin >= -a.spectrum_tolerance * scale,
            format!("min R(s) − λ₁ = {margin:e} over {} sections", a.rayleigh_samples),
        ));
        Some(margin)
    } else {
        None
    };

    let (assembly_smooth, assembly_rough) = if a.assembly_samples > 0 {
        let mut smooth = 0.0f64;
        let mut rough = 0.0f64;
        for _ in 0..a.assembly_samples {
            if let Some(x) = nonzero(smooth_section(&system, &mut rng)) {
                smooth = smooth.max(system.assembly_mismatch(&x));
            }
            if let Some(x) = nonzero(rough_section(&system, &mut rng)) {
                rough = rough.max(system.assembly_mismatch(&x));
            }
        }
        checks.push(Check::new(
            "assembly_cross_check",
            smooth <= a.assembly_tolerance,
            format!(
                "smooth sections {smooth:e} (tolerance {:e}); grid-scale sections {rough:e}",
                a.assembly_tolerance
            ),
        ));
        (Some(smooth), Some(rough))
    } else {
        (None, None)
    };

    if let Some(min) = rate.as_ref().and_then(|r| r.gap_tail_min) {
        let bound = a.gap_tail_fraction * lambda1;
        let detail = format!("tail min λ₁ {min:e}, bound {bound:e}");
        checks.push(if spectrum.degenerate {
            Check::info("gap_tail", format!("degenerate limit; {detail}"))
        } else {
            Check::new("gap_tail", min >= bound, detail)
        });
    }

    Ok(RunOutcome {
        trajectory,
        spectrum,
        scale,
        rate,
        rate_error,
        identity,
        gap,
        assembly_smooth,
        assembly_rough,
        rayleigh_margin,
        checks,
    })
}

/// Identifies the producing scenario in every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_sha256: String,
    pub seed: u64,
    pub extension_mode: bool,
}

impl Stamp {
    pub fn of(scenario: &Scenario) -> Self {
        Self { config_sha256: scenario.config_hash(), seed: scenario.seed, extension_mode: scenario.extension_mode() }
    }

    fn comments(&self) -> Vec<String> {
        vec![
            format!("config_sha256={}", self.config_sha256),
            format!("seed={}", self.seed),
            format!("extension_mode={}", self.extension_mode),
        ]
    }
}

#[derive(Serialize)]
struct SpectrumFile<'a> {
    #[serde(flatten)]
    stamp: &'a Stamp,
    scale: f64,
    kernel_threshold: f64,
    #[serde(flatten)]
    report: &'a SpectrumReport,
}

#[derive(Serialize)]
struct RateFile<'a> {
    #[serde(flatten)]
    stamp: &'a Stamp,
    report: Option<&'a RateReport>,
    error: Option<&'a str>,
    checks: &'a [Check],
    passed: bool,
}

/// Shortest round-trip decimal form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_text(path, &text)
}

pub const SNAPSHOT_DIR: &str = "snapshots";
pub const SNAPSHOT_INDEX: &str = "index.csv";

pub fn snapshot_file(step: usize) -> String {
    format!("step_{step:09}.csv")
}

/// Writes a map with its grid and target embedded as comment lines.
pub fn write_snapshot(path: &Path, stamp: &Stamp, step: usize, t: f64, map: &DiscreteMap) -> Result<(), CliError> {
    let mut comments = stamp.comments();
    comments.push(format!("step={step}"));
    comments.push(format!("t={}", fmt_f64(t)));
    comments.push(format!("grid={}", serde_json::to_string(map.grid().spec()).expect("grid serializes")));
    comments.push(format!("target={}", serde_json::to_string(map.target()).expect("target serializes")));
    let mut out = create(path)?;
    map.write_csv(&mut out, &comments).and_then(|_| out.flush()).map_err(|e| CliError::io(path, e))
}

/// Writes every artifact of a run into `dir`; the snapshot directory is
/// recreated so reruns stay byte-identical.
pub fn write_artifacts(scenario: &Scenario, outcome: &RunOutcome, dir: &Path) -> Result<(), CliError> {
    let stamp = Stamp::of(scenario);
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;

    let mut resolved = serde_json::to_value(scenario).expect("scenario serializes");
    resolved.as_object_mut().expect("object").remove("output");
    write_json(&dir.join("scenario.json"), &resolved)?;

    let traj = &outcome.trajectory;
    let lambda_at = |t: f64| outcome.gap.as_ref().and_then(|g| g.iter().find(|p| p.0 == t).map(|p| p.1));
    let path = dir.join("trajectory.csv");
    let mut out = create(&path)?;
    let mut text = String::new();
    for c in stamp.comments() {
        writeln!(text, "# {c}").unwrap();
    }
    writeln!(text, "# dt={}", fmt_f64(traj.dt)).unwrap();
    writeln!(text, "# stop_tolerance={}", fmt_f64(traj.stop_tolerance)).unwrap();
    writeln!(text, "step,t,energy,tension_l2,lambda1").unwrap();
    for s in &traj.samples {
        let lambda = lambda_at(s.t).map(fmt_f64).unwrap_or_default();
        writeln!(text, "{},{},{},{},{}", s.step, fmt_f64(s.t), fmt_f64(s.energy), fmt_f64(s.tension_l2), lambda).unwrap();
    }
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| CliError::io(&path, e))?;

    let snap_dir = dir.join(SNAPSHOT_DIR);
    if snap_dir.exists() {
        fs::remove_dir_all(&snap_dir).map_err(|e| CliError::io(&snap_dir, e))?;
    }
    fs::create_dir_all(&snap_dir).map_err(|e| CliError::io(&snap_dir, e))?;
    let mut index = String::new();
    for c in stamp.comments() {
        writeln!(index, "# {c}").unwrap();
    }
    writeln!(index, "step,t,file").unwrap();
    for s in traj.snapshots() {
        let name = snapshot_file(s.step);
        let map = s.snapshot.as_ref().expect("snapshot sample");
        write_snapshot(&snap_dir.join(&name), &stamp, s.step, s.t, map)?;
        writeln!(index, "{},{},{}", s.step, fmt_f64(s.t), name).unwrap();
    }
    write_text(&snap_dir.join(SNAPSHOT_INDEX), &index)?;

    write_json(
        &dir.join("spectrum.json"),
        &SpectrumFile {
            stamp: &stamp,
            scale: outcome.scale,
            kernel_threshold: KERNEL_THRESHOLD * outcome.scale,
            report: &outcome.spectrum,
        },
    )?;
    write_json(
        &dir.join("rate_report.json"),
        &RateFile {
            stamp: &stamp,
            report: outcome.rate.as_ref(),
            error: outcome.rate_error.as_deref(),
            checks: &outcome.checks,
            passed: outcome.passed(),
        },
    )?;

    if let Some(rows) = &outcome.identity {
        let mut text = String::new();
        for c in stamp.comments() {
            writeln!(text, "# {c}").unwrap();
        }
        writeln!(text, "t,lhs,rhs,tension_sq,residual").unwrap();
        for r in rows {
            writeln!(text, "{},{},{},{},{}", fmt_f64(r.t), fmt_f64(r.lhs), fmt_f64(r.rhs), fmt_f64(r.tension_sq), fmt_f64(r.residual))
                .unwrap();
        }
        write_text(&dir.join("identity.csv"), &text)?;
    }

    write_text(&dir.join("summary.txt"), &summary(scenario, &stamp, outcome))?;
    write_text(&dir.join("plot_script.txt"), &plot_script(&stamp, outcome))?;
    Ok(())
}

fn summary(scenario: &Scenario, stamp: &Stamp, outcome: &RunOutcome) -> String {
    let mut s = String::new();
    let traj = &outcome.trajectory;
    let last = traj.final_sample();
    writeln!(s, "scenario: {}", scenario.name).unwrap();
    writeln!(s, "config_sha256: {}", stamp.config_sha256).unwrap();
    writeln!(s, "seed: {}", stamp.seed).unwrap();
    if stamp.extension_mode {
        writeln!(s, "extension mode: Dirichlet boundary data on the source domain").unwrap();
    }
    writeln!(s, "steps: {}  dt: {}  final t: {}", last.step, fmt_f64(traj.dt), fmt_f64(last.t)).unwrap();
    writeln!(s, "final energy: {}  final ‖τ‖: {}", fmt_f64(last.energy), fmt_f64(last.tension_l2)).unwrap();
    let lambda: Vec<String> = outcome.spectrum.lambda.iter().map(|v| fmt_f64(*v)).collect();
    writeln!(s, "lowest eigenvalues: [{}]  kernel dimension: {}", lambda.join(", "), outcome.spectrum.kernel_dim).unwrap();
    if let Some(r) = &outcome.rate {
        writeln!(s, "verdict: {:?}", r.verdict).unwrap();
        writeln!(
            s,
            "b_fit: {}  window: [{}, {}]  b_fit/λ₁: {}",
            fmt_f64(r.b_fit),
            fmt_f64(r.fit_window[0]),
            fmt_f64(r.fit_window[1]),
            fmt_f64(r.observed_ratio)
        )
        .unwrap();
        writeln!(s, "energy rate: {}  energy rate/(2 b_fit): {}", fmt_f64(r.energy_rate), fmt_f64(r.energy_ratio)).unwrap();
    }
    if let Some(e) = &outcome.rate_error {
        writeln!(s, "rate report unavailable: {e}").unwrap();
    }
    writeln!(s, "checks:").unwrap();
    for c in &outcome.checks {
        let tag = match c.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Info => "INFO",
        };
        writeln!(s, "  {tag} {}: {}", c.name, c.detail).unwrap();
    }
    writeln!(s, "overall: {}", if outcome.passed() { "PASS" } else { "FAIL" }).unwrap();
    s
}

fn plot_script(stamp: &Stamp, outcome: &RunOutcome) -> String {
    let mut s = String::new();
    writeln!(s, "# gnuplot script; config_sha256={} seed={}", stamp.config_sha256, stamp.seed).unwrap();
    writeln!(s, "set datafile separator ','").unwrap();
    writeln!(s, "set logscale y").unwrap();
    writeln!(s, "set xlabel 't'").unwrap();
    writeln!(s, "set key top right").unwrap();
    let mut plots = vec!["'trajectory.csv' using 2:4 every ::1 with lines title '‖τ‖'".to_string()];
    if let Some(r) = &outcome.rate {
        let (ta, tb) = (r.fit_window[0], r.fit_window[1]);
        let ya = outcome
            .trajectory
            .samples
            .iter()
            .find(|p| p.t >= ta)
            .map_or(1.0, |p| p.tension_l2);
        writeln!(s, "fit_rate = {}", fmt_f64(r.b_fit)).unwrap();
        writeln!(s, "guaranteed = {}", fmt_f64(r.guaranteed_rate)).unwrap();
        plots.push(format!(
            "(x >= {ta:e} && x <= {tb:e}) ? {ya:e}*exp(-fit_rate*(x-{ta:e})) : 1/0 with lines dt 2 title 'fit'"
        ));
        plots.push(format!("(x >= {ta:e}) ? {ya:e}*exp(-guaranteed*(x-{ta:e})) : 1/0 with lines dt 3 title 'λ₁/2 envelope'"));
    }
    writeln!(s, "plot {}", plots.join(", \\\n     ")).unwrap();
    s
}

/// Runs the scenario and writes its artifacts into `dir`.
pub fn run_scenario(scenario: &Scenario, dir: &Path) -> Result<RunOutcome, CliError> {
    let outcome = execute(scenario)?;
    write_artifacts(scenario, &outcome, dir)?;
    Ok(outcome)
}

/// A run directory read back from disk.
pub struct RunDirectory {
    pub scenario: Scenario,
    pub dt: f64,
    pub stop_tolerance: f64,
    pub samples: Vec<flow::Sample>,
    pub snapshots: Vec<TimedMap>,
}

fn parse_comment<'a>(comments: &'a [String], key: &str) -> Option<&'a str> {
    comments.iter().find_map(|c| c.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64, CliError> {
    s.trim().parse().map_err(|e| CliError::io(path, format!("line {line}: {e}")))
}

/// Loads `scenario.json`, `trajectory.csv` and every stored snapshot.
pub fn read_run_directory(dir: &Path) -> Result<RunDirectory, CliError> {
    let scenario = crate::scenario::parse_config(&dir.join("scenario.json"))?;
    let grid = scenario.domain();

    let path = dir.join("trajectory.csv");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut comments = Vec::new();
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim().to_string());
            continue;
        }
        if line.starts_with("step") {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(CliError::io(&path, format!("line {}: expected 5 columns", i + 1)));
        }
        samples.push(flow::Sample {
            step: f[0].trim().parse().map_err(|e| CliError::io(&path, format!("line {}: {e}", i + 1)))?,
            t: parse_f64(&path, i + 1, f[1])?,
            energy: parse_f64(&path, i + 1, f[2])?,
            tension_l2: parse_f64(&path, i + 1, f[3])?,
            snapshot: None,
        });
    }
    let dt = parse_comment(&comments, "dt")
        .ok_or_else(|| CliError::io(&path, "missing dt comment"))
        .and_then(|v| parse_f64(&path, 0, v))?;
    let stop_tolerance = parse_comment(&comments, "stop_tolerance")
        .ok_or_else(|| CliError::io(&path, "missing stop_tolerance comment"))
        .and_then(|v| parse_f64(&path, 0, v))?;

    let snap_dir = dir.join(SNAPSHOT_DIR);
    let index_path = snap_dir.join(SNAPSHOT_INDEX);
    let index = fs::read_to_string(&index_path).map_err(|e| CliError::io(&index_path, e))?;
    let mut snapshots = Vec::new();
    for (i, line) in index.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("step") || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(CliError::io(&index_path, format!("line {}: expected 3 columns", i + 1)));
        }
        let step: usize = f[0].trim().parse().map_err(|e| CliError::io(&index_path, format!("line {}: {e}", i + 1)))?;
        let t = parse_f64(&index_path, i + 1, f[1])?;
        let file = snap_dir.join(f[2].trim());
        let reader = fs::File::open(&file).map(std::io::BufReader::new).map_err(|e| CliError::io(&file, e))?;
        let (map, _) = DiscreteMap::read_csv(reader, grid.clone(), scenario.target)?;
        let map = Arc::new(map);
        if let Some(s) = samples.iter_mut().find(|s| s.step == step) {
            s.snapshot = Some(Arc::clone(&map));
        }
        snapshots.push(TimedMap { step, t, map });
    }
    Ok(RunDirectory { scenario, dt, stop_tolerance, samples, snapshots })
}

impl RunDirectory {
    /// The trajectory rebuilt from disk; its final map is the last snapshot.
    pub fn trajectory(&self) -> Result<FlowTrajectory, CliError> {
        let last = self
            .snapshots
            .last()
            .ok_or_else(|| CliError::Usage("run directory holds no snapshots".into()))?;
        if self.samples.last().map(|s| s.step) != Some(last.step) {
            return Err(CliError::Usage("last snapshot is not the final sample".into()));
        }
        Ok(FlowTrajectory::from_parts(self.dt, self.stop_tolerance, self.samples.clone(), Arc::clone(&last.map))?)
    }
}

/// Default location of a run directory for `scenario` given CLI and env overrides.
pub fn resolve_output(scenario: &Scenario, cli_out: Option<&Path>) -> PathBuf {
    let env = std::env::var_os("HEATFLOW_OUT").map(PathBuf::from);
    scenario.output_dir(cli_out, env.as_deref())
}
