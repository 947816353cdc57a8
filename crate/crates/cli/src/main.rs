//! `nldiff`: batch front end for the nonlinear diffusion–transport solver.
//!
//! Commands: `run` (execute one scenario file), `check` (invariant suites),
//! `sweep` (refinement matrix with a convergence table), `norm` (dual-norm
//! query on an element file). Exit codes: 0 success, 1 validation error,
//! 2 solver failed to converge.

mod checks;
mod expr;
mod output;
mod scenario;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nldiff::dualnorm::DualMetric;
use nldiff::saddle::SaddleError;
use nldiff::stepper::{run as run_scenario, StepperError, Trajectory};

use output::{CatalogInfo, ReferenceError, RunManifest, SolverInfo, StepStats};
use scenario::{Overrides, Reference, Resolved};

#[derive(Debug)]
pub enum CliError {
    /// Bad input: file, schema, expression, or model validation. Exit 1.
    Invalid(String),
    /// The solver ran but could not certify a solution. Exit 2.
    NotConverged(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::NotConverged(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Parser)]
#[command(
    name = "nldiff",
    version,
    about = "Batch solver for doubly nonlinear diffusion-transport equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write series.csv, snapshots, and a manifest
    Run {
        /// Scenario file (TOML)
        file: PathBuf,
        /// Override the time step
        #[arg(long)]
        tau: Option<f64>,
        /// Override the x-axis cell count (2D grids scale ny proportionally)
        #[arg(long)]
        nx: Option<usize>,
        /// Output directory (default: scenario output.dir, then "out")
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an invariant suite and print its pass/fail table
    Check {
        /// One of: conjugacy, adjointness, duality, oracle-equivalence, dissipation
        suite: String,
    },
    /// Run a (tau, nx) refinement matrix and write convergence.csv
    Sweep {
        /// Base scenario file (TOML)
        file: PathBuf,
        /// Comma-separated time steps
        #[arg(long, value_delimiter = ',', required = true)]
        taus: Vec<f64>,
        /// Comma-separated x-axis cell counts
        #[arg(long, value_delimiter = ',', required = true)]
        nxs: Vec<usize>,
        /// Output directory (default: scenario output.dir, then "out")
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the dual norm of an element file to 12 significant digits
    Norm {
        /// Element file (TOML): grid, boundary, and the element fields
        file: PathBuf,
        /// Gradient-norm exponent p of the primal space
        #[arg(long, default_value_t = 2.0)]
        p: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    let result = match cli.command {
        Command::Run { file, tau, nx, out } => cmd_run(&file, Overrides { tau, nx, out }),
        Command::Check { suite } => cmd_check(&suite),
        Command::Sweep { file, taus, nxs, out } => cmd_sweep(&file, &taus, &nxs, out),
        Command::Norm { file, p } => cmd_norm(&file, p),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::NotConverged(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn scenario_echo(file: &scenario::ScenarioFile) -> Option<serde_json::Value> {
    serde_json::to_value(file).ok()
}

fn cmd_run(path: &Path, ov: Overrides) -> Result<(), CliError> {
    execute_run(path, ov).map(|_| ())
}

/// Full run pipeline: parse, resolve, execute, write artifacts and manifest.
/// The manifest is written whenever an output directory is known, also on
/// failure.
fn execute_run(path: &Path, ov: Overrides) -> Result<(Resolved, Trajectory), CliError> {
    let file = match scenario::parse_file(path, &ov) {
        Ok(f) => f,
        Err(e) => {
            // no trustworthy output.dir; honor an explicit --out for the
            // failure manifest, otherwise report on stderr only
            if let Some(dir) = &ov.out {
                output::ensure_dir(dir)?;
                output::write_manifest(
                    dir,
                    &RunManifest {
                        command: "run".into(),
                        status: "validation_error".into(),
                        error: Some(e.to_string()),
                        scenario: None,
                        catalog: CatalogInfo::bare(),
                        solver: None,
                        steps: None,
                        reference_error: None,
                    },
                )?;
            }
            return Err(e);
        }
    };
    let out_dir = scenario::out_dir_of(&file, &ov);
    output::ensure_dir(&out_dir)?;

    let resolved = match scenario::resolve_file(file.clone(), path) {
        Ok(r) => r,
        Err(e) => {
            output::write_manifest(
                &out_dir,
                &RunManifest {
                    command: "run".into(),
                    status: "validation_error".into(),
                    error: Some(e.to_string()),
                    scenario: scenario_echo(&file),
                    catalog: CatalogInfo::bare(),
                    solver: None,
                    steps: None,
                    reference_error: None,
                },
            )?;
            return Err(e);
        }
    };

    let mut manifest = RunManifest {
        command: "run".into(),
        status: "ok".into(),
        error: None,
        scenario: scenario_echo(&resolved.file),
        catalog: CatalogInfo::of(&resolved.scenario),
        solver: Some(SolverInfo::of(&resolved.scenario, resolved.solver_kind)),
        steps: None,
        reference_error: None,
    };

    match run_scenario(&resolved.scenario) {
        Ok(traj) => {
            output::write_series(&out_dir, &traj)?;
            output::write_snapshots(&out_dir, &traj, resolved.snapshot_every)?;
            manifest.steps = Some(StepStats::of(&traj));
            manifest.reference_error = reference_error(&resolved, &traj);
            output::write_manifest(&out_dir, &manifest)?;
            let stats = manifest.steps.as_ref().unwrap();
            println!(
                "ok: {} steps to t = {}, final mass {:.6e}, outputs in {}",
                stats.n_steps,
                stats.final_time,
                stats.final_mass,
                out_dir.display()
            );
            Ok((resolved, traj))
        }
        Err(err) => {
            let (e, partial) = classify_stepper_error(err);
            if let Some(traj) = &partial {
                if traj.n_steps() > 0 {
                    output::write_series(&out_dir, traj)?;
                    output::write_snapshots(&out_dir, traj, resolved.snapshot_every)?;
                    manifest.steps = Some(StepStats::of(traj));
                }
            }
            manifest.status = match &e {
                CliError::Invalid(_) => "validation_error".into(),
                CliError::NotConverged(_) => "not_converged".into(),
            };
            manifest.error = Some(e.to_string());
            output::write_manifest(&out_dir, &manifest)?;
            Err(e)
        }
    }
}

/// Exit-code policy: entries the solver cannot handle are scenario mistakes
/// (1); certified-tolerance misses are convergence failures (2).
fn classify_stepper_error(err: StepperError) -> (CliError, Option<Box<Trajectory>>) {
    match err {
        StepperError::StepFailure { step, time, source, partial } => {
            let msg = format!("step {step} (t = {time}) failed: {source}");
            let e = match *source {
                SaddleError::NotConverged { .. } | SaddleError::NewtonStall { .. } => {
                    CliError::NotConverged(msg)
                }
                _ => CliError::Invalid(msg),
            };
            (e, Some(partial))
        }
        StepperError::Saddle(e) => {
            let msg = e.to_string();
            match e {
                SaddleError::NotConverged { .. } | SaddleError::NewtonStall { .. } => {
                    (CliError::NotConverged(msg), None)
                }
                _ => (CliError::Invalid(msg), None),
            }
        }
        StepperError::InvalidScenario(m) => (CliError::Invalid(m), None),
        StepperError::Grid(e) => (CliError::Invalid(e.to_string()), None),
    }
}

/// Weighted final-time error against the configured exact solution (profiles
/// vary along x; in 2D the comparison uses each cell's x coordinate).
fn reference_error(resolved: &Resolved, traj: &Trajectory) -> Option<ReferenceError> {
    let (reference, l1) = resolved.reference.as_ref()?;
    Some(compute_reference_error(reference, *l1, traj))
}

fn compute_reference_error(reference: &Reference, l1: bool, traj: &Trajectory) -> ReferenceError {
    let grid = &traj.grid;
    let t = *traj.times.last().unwrap();
    let state = traj.final_state();
    let wc = grid.cell_weight();
    let mut acc = 0.0;
    for c in 0..grid.n_cells() {
        let d = state[c] - reference.eval(t, grid.cell_pos(c).0);
        acc += if l1 { d.abs() * wc } else { d * d * wc };
    }
    ReferenceError {
        norm: if l1 { "l1".into() } else { "l2".into() },
        value: if l1 { acc } else { acc.sqrt() },
    }
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

fn cmd_check(suite: &str) -> Result<(), CliError> {
    let rows = checks::run_suite(suite)?;
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    println!("suite: {suite}");
    for row in &rows {
        println!(
            "  {:<width$}  {}  {}",
            row.name,
            if row.pass { "pass" } else { "FAIL" },
            row.witness,
        );
    }
    let failed: Vec<_> = rows.iter().filter(|r| !r.pass).collect();
    println!(
        "{} of {} checks passed",
        rows.len() - failed.len(),
        rows.len()
    );
    if let Some(first) = failed.first() {
        return Err(CliError::NotConverged(format!(
            "check '{}' failed: {}",
            first.name, first.witness
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

/// Pair the lists into refinement cells: equal lengths zip, a single entry
/// broadcasts, anything else is the full product (tau-major).
fn sweep_cells(taus: &[f64], nxs: &[usize]) -> Result<Vec<(f64, usize)>, CliError> {
    if taus.is_empty() || nxs.is_empty() {
        return Err(CliError::Invalid("sweep lists may not be empty".into()));
    }
    if taus.len() == nxs.len() {
        Ok(taus.iter().copied().zip(nxs.iter().copied()).collect())
    } else if nxs.len() == 1 {
        Ok(taus.iter().map(|&t| (t, nxs[0])).collect())
    } else if taus.len() == 1 {
        Ok(nxs.iter().map(|&n| (taus[0], n)).collect())
    } else {
        Ok(taus
            .iter()
            .flat_map(|&t| nxs.iter().map(move |&n| (t, n)))
            .collect())
    }
}

fn cell_dir(root: &Path, tau: f64, nx: usize) -> PathBuf {
    root.join(format!("tau{tau}_nx{nx}"))
}

/// Piecewise-constant evaluation of a fine reference run at the final time.
struct SelfReference {
    traj: Trajectory,
}

impl SelfReference {
    fn eval(&self, x: f64) -> f64 {
        let grid = &self.traj.grid;
        let [nx, _] = grid.counts();
        let h = grid.h(0);
        let i = ((x / h).floor() as isize).clamp(0, nx as isize - 1) as usize;
        self.traj.final_state()[i]
    }
}

/// One sweep cell: a full run (with its own artifacts) in `dir`.
fn run_cell(path: &Path, tau: f64, nx: usize, dir: PathBuf) -> Result<(Resolved, Trajectory), CliError> {
    execute_run(path, Overrides { tau: Some(tau), nx: Some(nx), out: Some(dir) })
}

fn cmd_sweep(
    path: &Path,
    taus: &[f64],
    nxs: &[usize],
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let cells = sweep_cells(taus, nxs)?;
    let base_file = scenario::parse_file(path, &Overrides::default())?;
    let root = out.unwrap_or_else(|| {
        scenario::out_dir_of(&base_file, &Overrides::default())
    });
    output::ensure_dir(&root)?;

    // without a [reference] block, the finest cell serves as the reference
    // and is excluded from the table
    let has_reference = base_file.reference.is_some();
    let mut self_ref: Option<SelfReference> = None;
    let mut table_cells = cells.clone();
    if !has_reference {
        if cells.len() < 2 {
            return Err(CliError::Invalid(
                "sweep needs a [reference] block or at least two cells \
                 (the finest acts as the reference)"
                    .into(),
            ));
        }
        let finest = cells
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
            .map(|(i, _)| i)
            .unwrap();
        let (tau, nx) = table_cells.remove(finest);
        let dir = cell_dir(&root, tau, nx);
        println!("reference cell: tau = {tau}, nx = {nx}");
        let (resolved, traj) = run_cell(path, tau, nx, dir)?;
        if resolved.scenario.grid.dim() != 1 {
            return Err(CliError::Invalid(
                "self-referenced sweeps support 1D scenarios only; give a [reference] block"
                    .into(),
            ));
        }
        self_ref = Some(SelfReference { traj });
    }

    let mut rows: Vec<(f64, usize, f64)> = Vec::new();
    for &(tau, nx) in &table_cells {
        println!("cell: tau = {tau}, nx = {nx}");
        let dir = cell_dir(&root, tau, nx);
        let (resolved, traj) = run_cell(path, tau, nx, dir)?;
        let error = match (&resolved.reference, &self_ref) {
            (Some((reference, l1)), _) => {
                compute_reference_error(reference, *l1, &traj).value
            }
            (None, Some(fine)) => {
                let grid = &traj.grid;
                let t_full = *traj.times.last().unwrap();
                let t_fine = *fine.traj.times.last().unwrap();
                if (t_full - t_fine).abs() > 1e-9 * t_full.max(1.0) {
                    return Err(CliError::Invalid(format!(
                        "cells end at different times ({t_full} vs {t_fine}); \
                         tau must divide the horizon"
                    )));
                }
                let wc = grid.cell_weight();
                let state = traj.final_state();
                (0..grid.n_cells())
                    .map(|c| {
                        let d = state[c] - fine.eval(grid.cell_pos(c).0);
                        d * d * wc
                    })
                    .sum::<f64>()
                    .sqrt()
            }
            (None, None) => unreachable!("self-reference prepared above"),
        };
        rows.push((tau, nx, error));
    }

    write_convergence(&root, &rows)?;
    println!("convergence table in {}", root.join("convergence.csv").display());
    Ok(())
}

/// `convergence.csv`: one row per swept cell; the observed order compares
/// consecutive rows through whichever of tau or h was refined. A single-row
/// sweep omits the order column.
fn write_convergence(root: &Path, rows: &[(f64, usize, f64)]) -> Result<(), CliError> {
    let path = root.join("convergence.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| CliError::Invalid(format!("cannot write {}: {e}", path.display())))?;
    let single = rows.len() == 1;
    if single {
        w.write_record(["tau", "nx", "error"])
            .map_err(|e| CliError::Invalid(e.to_string()))?;
    } else {
        w.write_record(["tau", "nx", "error", "observed_order"])
            .map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    for (i, &(tau, nx, error)) in rows.iter().enumerate() {
        let mut record = vec![tau.to_string(), nx.to_string(), error.to_string()];
        if !single {
            let order = if i == 0 {
                String::new()
            } else {
                let (ptau, pnx, perror) = rows[i - 1];
                // refinement ratio of whichever of tau / h changed
                let ratio = if tau != ptau { ptau / tau } else { nx as f64 / pnx as f64 };
                if ratio > 0.0 && ratio != 1.0 && perror > 0.0 && error > 0.0 {
                    ((perror / error).ln() / ratio.ln()).to_string()
                } else {
                    String::new()
                }
            };
            record.push(order);
        }
        w.write_record(&record).map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Invalid(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// norm
// ---------------------------------------------------------------------------

fn cmd_norm(path: &Path, p: f64) -> Result<(), CliError> {
    let (grid, elem) = scenario::load_dual_element(path)?;
    let metric = DualMetric::new(&grid, p).map_err(|e| CliError::Invalid(e.to_string()))?;
    let value = metric.norm(&elem).map_err(|e| CliError::Invalid(e.to_string()))?;
    println!("{value:.11e}");
    Ok(())
}
