//! Run artifacts: `series.csv`, `rho_NNNNNN.csv` snapshots, and the JSON run
//! manifest (written atomically via a same-directory temp file rename, even
//! when the run fails).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use nldiff::stepper::Trajectory;

use crate::CliError;

fn io_err(what: &str, path: &Path, e: std::io::Error) -> CliError {
    CliError::Invalid(format!("cannot {what} {}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err("create", dir, e))
}

/// One row per state: step 0 carries the initial mass/energy with zeroed
/// per-step columns; row i ≥ 1 reports the monitors of the step ending at
/// t_i. `dissipation_ok` is 1/0 so every column stays numeric.
pub fn write_series(dir: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let path = dir.join("series.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| CliError::Invalid(format!("cannot write {}: {e}", path.display())))?;
    w.write_record([
        "step",
        "t",
        "mass",
        "energy",
        "gap",
        "iters",
        "mass_balance_residual",
        "dual_increment",
        "dissipation_ok",
    ])
    .map_err(|e| CliError::Invalid(e.to_string()))?;
    for i in 0..traj.times.len() {
        let (gap, iters, balance, incr, ok) = if i == 0 {
            (0.0, 0, 0.0, 0.0, true)
        } else {
            (
                traj.gap[i - 1],
                traj.iterations[i - 1],
                traj.mass_balance[i - 1],
                traj.dual_increment[i - 1],
                traj.dissipation[i - 1].2,
            )
        };
        w.write_record([
            i.to_string(),
            traj.times[i].to_string(),
            traj.mass[i].to_string(),
            traj.energy[i].to_string(),
            gap.to_string(),
            iters.to_string(),
            balance.to_string(),
            incr.to_string(),
            if ok { "1".into() } else { "0".into() },
        ])
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    w.flush().map_err(|e| io_err("write", &path, e))?;
    Ok(())
}

/// Density snapshots at steps 0, every `every`-th step (when `every > 0`),
/// and the final step. 1D files are `x,rho` tables; 2D files are matrices
/// whose first row holds the x coordinates and first column the y
/// coordinates.
pub fn write_snapshots(dir: &Path, traj: &Trajectory, every: usize) -> Result<(), CliError> {
    let last = traj.times.len() - 1;
    for i in 0..=last {
        let due = i == 0 || i == last || (every > 0 && i % every == 0);
        if !due {
            continue;
        }
        let path = dir.join(format!("rho_{i:06}.csv"));
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| CliError::Invalid(format!("cannot write {}: {e}", path.display())))?;
        let grid = &traj.grid;
        let state = &traj.states[i];
        let [nx, ny] = grid.counts();
        if grid.dim() == 1 {
            w.write_record(["x", "rho"]).map_err(|e| CliError::Invalid(e.to_string()))?;
            for c in 0..grid.n_cells() {
                w.write_record([grid.cell_pos(c).0.to_string(), state[c].to_string()])
                    .map_err(|e| CliError::Invalid(e.to_string()))?;
            }
        } else {
            let mut header = Vec::with_capacity(nx + 1);
            header.push("y\\x".to_string());
            for i in 0..nx {
                header.push(grid.cell_pos(i).0.to_string());
            }
            w.write_record(&header).map_err(|e| CliError::Invalid(e.to_string()))?;
            for j in 0..ny {
                let mut row = Vec::with_capacity(nx + 1);
                row.push(grid.cell_pos(j * nx).1.to_string());
                for i in 0..nx {
                    row.push(state[j * nx + i].to_string());
                }
                w.write_record(&row).map_err(|e| CliError::Invalid(e.to_string()))?;
            }
        }
        w.flush().map_err(|e| io_err("write", &path, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    /// "ok" | "not_converged" | "validation_error"
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Resolved scenario echo (overrides applied).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<serde_json::Value>,
    pub catalog: CatalogInfo,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<StepStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_error: Option<ReferenceError>,
}

#[derive(Serialize)]
pub struct CatalogInfo {
    pub library: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<String>,
}

impl CatalogInfo {
    pub fn bare() -> Self {
        Self { library: format!("nldiff {}", env!("CARGO_PKG_VERSION")), nonlinearity: None, cost: None }
    }

    pub fn of(sc: &nldiff::Scenario) -> Self {
        Self {
            library: format!("nldiff {}", env!("CARGO_PKG_VERSION")),
            nonlinearity: Some(crate::checks::beta_label(&sc.beta)),
            cost: Some(crate::checks::cost_label(&sc.cost)),
        }
    }
}

#[derive(Serialize)]
pub struct SolverInfo {
    pub kind: String,
    pub tol: f64,
    pub max_iters: usize,
    pub theta: f64,
    pub accelerate: bool,
}

impl SolverInfo {
    pub fn of(sc: &nldiff::Scenario, kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            tol: sc.solver.tol,
            max_iters: sc.solver.max_iters,
            theta: sc.solver.theta,
            accelerate: sc.solver.accelerate,
        }
    }
}

/// Per-step summary statistics of the accepted part of a run.
#[derive(Serialize)]
pub struct StepStats {
    pub n_steps: usize,
    pub final_time: f64,
    pub final_mass: f64,
    pub final_energy: f64,
    pub total_iterations: usize,
    pub max_gap: f64,
    pub max_mass_balance_residual: f64,
    pub min_dissipation_slack: f64,
    pub dissipation_ok: bool,
}

impl StepStats {
    pub fn of(traj: &Trajectory) -> Self {
        let n = traj.n_steps();
        let slack =
            traj.dissipation.iter().map(|(l, r, _)| r - l).fold(f64::INFINITY, f64::min);
        Self {
            n_steps: n,
            final_time: *traj.times.last().unwrap(),
            final_mass: *traj.mass.last().unwrap(),
            final_energy: *traj.energy.last().unwrap(),
            total_iterations: traj.iterations.iter().sum(),
            max_gap: traj.gap.iter().fold(0.0f64, |m, g| m.max(g.abs())),
            max_mass_balance_residual: traj.mass_balance.iter().fold(0.0f64, |m, r| m.max(*r)),
            min_dissipation_slack: if n == 0 { 0.0 } else { slack },
            dissipation_ok: traj.dissipation.iter().all(|d| d.2),
        }
    }
}

#[derive(Serialize)]
pub struct ReferenceError {
    pub norm: String,
    pub value: f64,
}

/// Serialize and atomically replace `manifest.json` in `dir`.
pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::Invalid(format!("manifest serialization: {e}")))?;
    let final_path = dir.join("manifest.json");
    let tmp_path = dir.join("manifest.json.tmp");
    {
        let mut f = fs::File::create(&tmp_path).map_err(|e| io_err("create", &tmp_path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| io_err("write", &tmp_path, e))?;
        f.write_all(b"\n").map_err(|e| io_err("write", &tmp_path, e))?;
        f.sync_all().map_err(|e| io_err("sync", &tmp_path, e))?;
    }
    fs::rename(&tmp_path, &final_path).map_err(|e| io_err("rename", &tmp_path, e))?;
    Ok(())
}
