//! Subcommand definitions and dispatch. Every command returns its exit code.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};
use heatflow_core::convergence::{self, check_evolution_identity};
use heatflow_core::jacobi::{self, EigenOptions};
use heatflow_core::{flow, map, DiscreteMap, DomainGrid, GridSpec, TargetManifold};
use serde::Serialize;

use crate::error::CliError;
use crate::runner::{self, fmt_f64, resolve_output};
use crate::scenario::{parse_config, Scenario};

#[derive(Debug, Parser)]
#[command(name = "heatflow", version, about = "Harmonic map heat flow experiments driven by JSON scenarios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Scenario JSON file.
    #[arg(value_name = "CONFIG")]
    pub config_pos: Option<PathBuf>,
    /// Scenario JSON file (alternative to the positional argument).
    #[arg(long = "config", value_name = "CONFIG", conflicts_with = "config_pos")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides $HEATFLOW_OUT and the scenario's `output`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Scenario, CliError> {
        let path = self
            .config
            .as_ref()
            .or(self.config_pos.as_ref())
            .ok_or_else(|| CliError::Usage("a scenario file is required (positional or --config)".into()))?;
        let scenario = parse_config(path)?;
        match self.seed {
            Some(seed) => scenario.with_seed(seed),
            None => Ok(scenario),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Runs a scenario and writes its artifacts.
    Run(ConfigArgs),
    /// Lowest Jacobi eigenvalues of a stored map snapshot.
    Spectrum {
        snapshot: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        /// Scenario providing grid and target when the snapshot lacks them.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Re-checks a finished run directory.
    #[command(subcommand)]
    Verify(Verify),
    /// Joint grid and time-step refinement study with a convergence-order table.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of refinement levels, the base scenario included.
        #[arg(long, default_value_t = 3)]
        levels: u32,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides the flow horizon of every level.
        #[arg(long)]
        t_end: Option<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum Verify {
    /// Residuals of the evolution identity `½ d/dt ‖τ‖² = −⟨Jτ, τ⟩` at stored snapshots.
    Identity {
        dir: PathBuf,
        #[arg(long)]
        floor: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Rebuilds the rate report from the stored trajectory and final map.
    Rate { dir: PathBuf },
}

/// Parses `args` and runs the command, printing errors as JSON on stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let err = CliError::Usage(e.to_string().trim().to_string());
                eprintln!("{}", err.to_json());
                return err.exit_code();
            }
            return if emit(&e.to_string()).is_ok() { 0 } else { 2 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Run(args) => run(&args),
        Command::Spectrum { snapshot, k, config, tol } => spectrum(&snapshot, k, config.as_deref(), tol),
        Command::Verify(Verify::Identity { dir, floor, tolerance }) => verify_identity(&dir, floor, tolerance),
        Command::Verify(Verify::Rate { dir }) => verify_rate(&dir),
        Command::Sweep { config, levels, jobs, t_end } => sweep(&config, levels, jobs, t_end),
    }
}

/// Writes to stdout; a closed reader (`| head`) is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn run(args: &ConfigArgs) -> Result<i32, CliError> {
    let scenario = args.load()?;
    let dir = resolve_output(&scenario, args.out.as_deref());
    let outcome = runner::run_scenario(&scenario, &dir)?;
    let summary = dir.join("summary.txt");
    let text = fs::read_to_string(&summary).map_err(|e| CliError::io(&summary, e))?;
    emit(&format!("{text}artifacts: {}\n", dir.display()))?;
    Ok(outcome.exit_code())
}

#[derive(Serialize)]
struct SpectrumOutput {
    snapshot: String,
    k: usize,
    scale: f64,
    lambda: Vec<f64>,
    residuals: Vec<f64>,
    degenerate: bool,
    kernel_dim: usize,
}

fn comment_value<'a>(comments: &'a [String], key: &str) -> Option<&'a str> {
    comments.iter().find_map(|c| c.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

/// Grid and target of a snapshot, from its own comments or a scenario.
fn snapshot_frame(path: &Path, config: Option<&Path>) -> Result<(DomainGrid, TargetManifold), CliError> {
    if let Some(c) = config {
        let s = parse_config(c)?;
        return Ok((s.domain(), s.target));
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let comments: Vec<String> =
        text.lines().filter_map(|l| l.strip_prefix('#')).map(|c| c.trim().to_string()).collect();
    let missing = |what: &str| CliError::Usage(format!("{} has no `{what}=` comment; pass --config", path.display()));
    let grid: GridSpec = serde_json::from_str(comment_value(&comments, "grid").ok_or_else(|| missing("grid"))?)
        .map_err(|e| CliError::io(path, e))?;
    let target: TargetManifold =
        serde_json::from_str(comment_value(&comments, "target").ok_or_else(|| missing("target"))?)
            .map_err(|e| CliError::io(path, e))?;
    Ok((DomainGrid::new(grid)?, target))
}

fn spectrum(path: &Path, k: usize, config: Option<&Path>, tol: Option<f64>) -> Result<i32, CliError> {
    let (grid, target) = snapshot_frame(path, config)?;
    let reader = fs::File::open(path).map(std::io::BufReader::new).map_err(|e| CliError::io(path, e))?;
    let (f, _) = DiscreteMap::read_csv(reader, grid, target)?;
    let system = jacobi::assemble_system(Arc::new(f))?;
    let mut opts = EigenOptions::default();
    if let Some(tol) = tol {
        opts.tol = tol;
    }
    let pairs = jacobi::lowest_eigs(&system, k, &opts)?;
    let report = jacobi::spectrum_report(&system, &pairs);
    let out = SpectrumOutput {
        snapshot: path.display().to_string(),
        k,
        scale: system.scale(),
        lambda: report.lambda,
        residuals: report.residuals,
        degenerate: report.degenerate,
        kernel_dim: report.kernel_dim,
    };
    emit(&format!("{}\n", serde_json::to_string_pretty(&out).expect("serializes")))?;
    Ok(0)
}

fn verify_identity(dir: &Path, floor: Option<f64>, tolerance: Option<f64>) -> Result<i32, CliError> {
    let run = runner::read_run_directory(dir)?;
    let a = &run.scenario.analysis;
    let floor_rel = floor.unwrap_or(a.identity_floor);
    let tolerance = tolerance.unwrap_or(a.identity_tolerance);
    let max_sq = run.snapshots.iter().map(|s| map::tension_norm(&s.map).powi(2)).fold(0.0, f64::max);
    let rows = check_evolution_identity(&run.snapshots, floor_rel * max_sq)?;
    let mut out = String::new();
    writeln!(out, "t,lhs,rhs,tension_sq,residual").unwrap();
    for r in &rows {
        writeln!(out, "{},{},{},{},{}", fmt_f64(r.t), fmt_f64(r.lhs), fmt_f64(r.rhs), fmt_f64(r.tension_sq), fmt_f64(r.residual))
            .unwrap();
    }
    let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    let pass = worst <= tolerance;
    writeln!(out, "# max_residual={} tolerance={} {}", fmt_f64(worst), fmt_f64(tolerance), if pass { "PASS" } else { "FAIL" })
        .unwrap();
    emit(&out)?;
    Ok(if pass { 0 } else { 1 })
}

fn verify_rate(dir: &Path) -> Result<i32, CliError> {
    let run = runner::read_run_directory(dir)?;
    let trajectory = run.trajectory()?;
    let a = &run.scenario.analysis;
    let system = jacobi::assemble_system(Arc::clone(trajectory.final_map()))?;
    let pairs = jacobi::lowest_eigs(&system, a.eigen_k.min(system.dof_count()), &a.eigen)?;
    let spectrum = jacobi::spectrum_report(&system, &pairs);
    let gap = if a.gap_stride > 0 {
        Some(convergence::gap_track(&run.snapshots, a.gap_stride, &a.eigen)?)
    } else {
        None
    };
    let report = convergence::build_rate_report(&trajectory, &spectrum, gap.as_deref(), &a.rate)?;
    emit(&format!("{}\n", serde_json::to_string_pretty(&report).expect("serializes")))?;
    Ok(match report.verdict {
        convergence::Verdict::Fail => 1,
        _ => 0,
    })
}

/// One refinement level of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub level: u32,
    pub nodes: usize,
    pub dt: f64,
    pub steps: usize,
    pub energy_final: f64,
    pub tension_final: f64,
    pub lambda1: f64,
    pub identity_max: Option<f64>,
}

fn sweep_level(scenario: &Scenario) -> Result<SweepRow, CliError> {
    let f0 = scenario.initial_map()?;
    let traj = flow::run(&f0, &scenario.flow)?;
    let last = traj.final_sample();
    let system = jacobi::assemble_system(Arc::clone(traj.final_map()))?;
    let lambda1 = jacobi::lowest_eigs(&system, 1, &scenario.analysis.eigen)?[0].value;
    let snaps = traj.timed_snapshots();
    let max_sq = snaps.iter().map(|s| map::tension_norm(&s.map).powi(2)).fold(0.0, f64::max);
    let identity_max = match check_evolution_identity(&snaps, scenario.analysis.identity_floor * max_sq) {
        Ok(rows) => Some(rows.iter().map(|r| r.residual).fold(0.0, f64::max)),
        Err(heatflow_core::Error::InsufficientSnapshots { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(SweepRow {
        level: 0,
        nodes: f0.node_count(),
        dt: traj.dt,
        steps: last.step,
        energy_final: last.energy,
        tension_final: last.tension_l2,
        lambda1,
        identity_max,
    })
}

/// Runs every level on at most `jobs` threads; results keep level order.
pub fn run_sweep(base: &Scenario, levels: u32, jobs: usize) -> Result<Vec<SweepRow>, CliError> {
    let scenarios: Vec<Scenario> = (0..levels).map(|l| base.refined(l)).collect::<Result<_, _>>()?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepRow, CliError>>>> = Mutex::new((0..scenarios.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, scenarios.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(s) = scenarios.get(i) else { break };
                let row = sweep_level(s).map(|mut r| {
                    r.level = i as u32;
                    r
                });
                results.lock().expect("no poisoned workers")[i] = Some(row);
            });
        }
    });
    results.into_inner().expect("no poisoned workers").into_iter().map(|r| r.expect("every level ran")).collect()
}

/// Observed orders `log₂(|q_l − q_{l−1}| / |q_{l+1} − q_l|)` for converging
/// quantities and `log₂(r_l / r_{l+1})` for residuals that vanish in the limit.
pub fn convergence_orders(rows: &[SweepRow]) -> Vec<(String, u32, Option<f64>)> {
    let mut out = Vec::new();
    let quantities: [(&str, fn(&SweepRow) -> f64); 2] = [("energy_final", |r| r.energy_final), ("lambda1", |r| r.lambda1)];
    for (name, get) in quantities {
        for w in rows.windows(3) {
            let (d0, d1) = ((get(&w[1]) - get(&w[0])).abs(), (get(&w[2]) - get(&w[1])).abs());
            let order = (d0 > 0.0 && d1 > 0.0).then(|| (d0 / d1).log2());
            out.push((name.to_string(), w[2].level, order));
        }
    }
    for w in rows.windows(2) {
        let order = match (w[0].identity_max, w[1].identity_max) {
            (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).log2()),
            _ => None,
        };
        out.push(("identity_max".to_string(), w[1].level, order));
    }
    out
}

fn sweep(args: &ConfigArgs, levels: u32, jobs: usize, t_end: Option<f64>) -> Result<i32, CliError> {
    if levels == 0 {
        return Err(CliError::Usage("--levels must be at least 1".into()));
    }
    let mut base = args.load()?;
    if let Some(t) = t_end {
        base.flow.t_end = t;
    }
    let rows = run_sweep(&base, levels, jobs)?;
    let dir = resolve_output(&base, args.out.as_deref());
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let stamp = runner::Stamp::of(&base);
    let mut csv = format!("# config_sha256={}\n# seed={}\n", stamp.config_sha256, stamp.seed);
    csv.push_str("level,nodes,dt,steps,energy_final,tension_final,lambda1,identity_max\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.level,
            r.nodes,
            fmt_f64(r.dt),
            r.steps,
            fmt_f64(r.energy_final),
            fmt_f64(r.tension_final),
            fmt_f64(r.lambda1),
            r.identity_max.map(fmt_f64).unwrap_or_default()
        )
        .unwrap();
    }
    let mut table = format!("# config_sha256={}\n# seed={}\nquantity,level,order\n", stamp.config_sha256, stamp.seed);
    for (name, level, order) in convergence_orders(&rows) {
        writeln!(table, "{name},{level},{}", order.map(fmt_f64).unwrap_or_default()).unwrap();
    }
    let sweep_path = dir.join("sweep.csv");
    fs::write(&sweep_path, &csv).map_err(|e| CliError::io(&sweep_path, e))?;
    let order_path = dir.join("sweep_orders.csv");
    fs::write(&order_path, &table).map_err(|e| CliError::io(&order_path, e))?;
    emit(&format!("{csv}\n{table}"))?;
    Ok(0)
}

