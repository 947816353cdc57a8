//! Scenario files: the TOML schema, its validation, and the translation into
//! a library [`Scenario`].
//!
//! Data fields (initial state, sources, velocity, boundary data, spatial
//! coefficients) are expressions in `t`, `x`, `y` by default; each also
//! accepts `{ csv = "path" }` pointing at a one-column `value` CSV sampled at
//! the matching grid entities (cells in row-major order, or faces in grid
//! face order), resolved relative to the scenario file.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use nldiff::grid::{build_grid, BoundaryData, BoundaryKind, Grid, Side};
use nldiff::nonlinearity::{validate_assumptions_at, Coef, CostEntry, NonlinearityEntry};
use nldiff::stepper::{Algorithm, Scenario, StepSolver};
use nldiff::{CellField, Position, SolverParams};

use crate::expr::{Expr, Var};
use crate::CliError;

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub grid: GridSpec,
    pub boundary: BTreeMap<String, SideSpec>,
    pub nonlinearity: NonlinearitySpec,
    pub cost: CostSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceSpec>,
    pub initial: InitialSpec,
    pub time: TimeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub nx: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
    pub lx: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ly: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideSpec {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<FieldSpec>,
}

/// Either an expression string or a CSV sample table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Expr(String),
    Csv { csv: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a2: Option<f64>,
    /// Hele-Shaw dual scaling a(x) as an expression in x, y.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<String>,
    /// Spatial weight w(x) multiplying the density, as an expression.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
    /// Vertices (r, beta(r)) of a sampled piecewise-linear density.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportSpec {
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<FieldSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_courant: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f0: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fbar: Option<Vec<FieldSpec>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub rho0: FieldSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accelerate: Option<bool>,
    /// "primal-dual" (default) or "newton".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Snapshot cadence in steps; 0 (default) keeps only the initial and
    /// final states.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
    /// Keep η, φ on every `thin`-th step record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thin: Option<usize>,
}

/// Optional exact solution the run is compared against at the final time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    /// "heat" (e^{−π²t} sin(πx)) or "barenblatt" (porous-medium source
    /// solution with exponent `m`, born at `t0`, centered at `center`).
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    /// "l2" (default) or "l1".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<String>,
}

// ---------------------------------------------------------------------------
// Resolution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub tau: Option<f64>,
    pub nx: Option<usize>,
    pub out: Option<PathBuf>,
}

pub enum Reference {
    Heat,
    Barenblatt { m: f64, t0: f64, center: f64 },
}

impl Reference {
    /// Exact value at position x and time `t` past the start of the run.
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            Reference::Heat => nldiff::oracle::heat_exact(t, x),
            Reference::Barenblatt { m, t0, center } => {
                nldiff::oracle::barenblatt(t0 + t, x - center, *m)
            }
        }
    }
}

pub struct Resolved {
    pub scenario: Scenario,
    /// The parsed file with every override applied, echoed into the manifest.
    pub file: ScenarioFile,
    pub snapshot_every: usize,
    pub reference: Option<(Reference, bool)>, // (exact solution, use L1 norm)
    pub solver_kind: &'static str,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

/// Read and parse a scenario file, applying command-line overrides.
pub fn parse_file(path: &Path, ov: &Overrides) -> Result<ScenarioFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut file: ScenarioFile = toml::from_str(&text)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    apply_overrides(&mut file, ov);
    Ok(file)
}

/// Output directory of a parsed scenario (known before validation, so failure
/// manifests land in the right place).
pub fn out_dir_of(file: &ScenarioFile, ov: &Overrides) -> PathBuf {
    if let Some(dir) = &ov.out {
        return dir.clone();
    }
    if let Some(out) = &file.output {
        if let Some(dir) = &out.dir {
            return dir.clone();
        }
    }
    PathBuf::from("out")
}

/// Validate a parsed scenario and translate it into a library [`Scenario`].
pub fn resolve_file(file: ScenarioFile, path: &Path) -> Result<Resolved, CliError> {
    let base = path.parent().unwrap_or(Path::new("."));
    resolve(file, base)
}

fn apply_overrides(file: &mut ScenarioFile, ov: &Overrides) {
    if let Some(tau) = ov.tau {
        file.time.tau = tau;
    }
    if let Some(nx) = ov.nx {
        // refine both axes by the same factor so 2D sweeps keep their aspect
        if let Some(ny) = file.grid.ny {
            let scaled = (ny as f64 * nx as f64 / file.grid.nx as f64).round() as usize;
            file.grid.ny = Some(scaled.max(1));
        }
        file.grid.nx = nx;
    }
}

fn resolve(file: ScenarioFile, base: &Path) -> Result<Resolved, CliError> {
    let grid = build_grid_from(&file)?;
    let bdata = boundary_data(&file, &grid, base)?;
    let beta = nonlinearity_entry(&file.nonlinearity)?;
    let cost = cost_entry(&file.cost)?;

    // growth/convexity assumptions probed at actual cell centers
    let probes: Vec<Position> =
        (0..grid.n_cells().min(64)).map(|c| grid.cell_pos(c)).collect();
    validate_assumptions_at(&beta, &cost, cost_exponent(&file.cost), &probes)
        .map_err(|e| invalid(format!("assumption validation failed: {e}")))?;

    let rho0 = cell_values(&file.initial.rho0, &grid, base, "initial.rho0")?;

    let mut sc = Scenario::new(grid.clone(), beta, cost, rho0, file.time.horizon, file.time.tau);
    sc.bdata = bdata;

    if let Some(tr) = &file.transport {
        if let Some(v) = &tr.v {
            sc.velocity = Some(vector_input(v, &grid, base, "transport.V", true)?);
        }
        if let Some(mc) = tr.max_courant {
            sc.max_courant = mc;
        }
    }
    if let Some(src) = &file.source {
        if let Some(f0) = &src.f0 {
            sc.source_cell = Some(scalar_input(f0, &grid, base, "source.f0")?);
        }
        if let Some(fbar) = &src.fbar {
            sc.source_flux = Some(vector_input(fbar, &grid, base, "source.fbar", true)?);
        }
    }

    sc.algorithm = match file.algorithm.as_deref() {
        None | Some("transport-forcing") => Algorithm::TransportForcing,
        Some("prediction-correction") => Algorithm::PredictionCorrection,
        Some(other) => {
            return Err(invalid(format!(
                "unknown algorithm '{other}' (transport-forcing | prediction-correction)"
            )))
        }
    };

    let mut solver_kind = "primal-dual";
    if let Some(sv) = &file.solver {
        let mut params = SolverParams::default();
        if let Some(tol) = sv.tol {
            params.tol = tol;
        }
        if let Some(mi) = sv.max_iters {
            params.max_iters = mi;
        }
        if let Some(theta) = sv.theta {
            params.theta = theta;
        }
        if let Some(acc) = sv.accelerate {
            params.accelerate = acc;
        }
        sc.solver = params;
        sc.step_solver = match sv.kind.as_deref() {
            None | Some("primal-dual") => StepSolver::PrimalDual,
            Some("newton") => {
                solver_kind = "newton";
                StepSolver::Newton
            }
            Some(other) => {
                return Err(invalid(format!(
                    "unknown solver kind '{other}' (primal-dual | newton)"
                )))
            }
        };
    }

    let mut snapshot_every = 0usize;
    if let Some(out) = &file.output {
        if let Some(every) = out.snapshot_every {
            snapshot_every = every;
        }
        if let Some(thin) = out.thin {
            sc.thin = thin;
        }
    }

    let reference = match &file.reference {
        None => None,
        Some(r) => {
            let l1 = match r.norm.as_deref() {
                None | Some("l2") => false,
                Some("l1") => true,
                Some(other) => {
                    return Err(invalid(format!("unknown reference norm '{other}' (l1 | l2)")))
                }
            };
            let kind = match r.kind.as_str() {
                "heat" => Reference::Heat,
                "barenblatt" => Reference::Barenblatt {
                    m: r.m.unwrap_or(2.0),
                    t0: r.t0.unwrap_or(0.5),
                    center: r.center.unwrap_or(file.grid.lx / 2.0),
                },
                other => {
                    return Err(invalid(format!(
                        "unknown reference kind '{other}' (heat | barenblatt)"
                    )))
                }
            };
            Some((kind, l1))
        }
    };

    sc.validate().map_err(|e| invalid(e.to_string()))?;

    Ok(Resolved { scenario: sc, file, snapshot_every, reference, solver_kind })
}

fn cost_exponent(spec: &CostSpec) -> f64 {
    spec.p.unwrap_or(2.0)
}

fn build_grid_from(file: &ScenarioFile) -> Result<Grid, CliError> {
    let g = &file.grid;
    let sides: &[Side] = match g.dim {
        1 => &[Side::Left, Side::Right],
        2 => &[Side::Left, Side::Right, Side::Bottom, Side::Top],
        d => return Err(invalid(format!("grid.dim must be 1 or 2, got {d}"))),
    };
    let mut labels = Vec::new();
    for &side in sides {
        let spec = file
            .boundary
            .get(side.name())
            .ok_or_else(|| invalid(format!("missing [boundary.{}] section", side.name())))?;
        let kind = match spec.kind.as_str() {
            "dirichlet" => BoundaryKind::Dirichlet,
            "neumann" => BoundaryKind::Neumann,
            other => {
                return Err(invalid(format!(
                    "boundary.{}: unknown type '{other}' (dirichlet | neumann)",
                    side.name()
                )))
            }
        };
        if spec.kind == "dirichlet" && spec.pi.is_some() {
            return Err(invalid(format!("boundary.{}: pi set on a Dirichlet side", side.name())));
        }
        if spec.kind == "neumann" && spec.g.is_some() {
            return Err(invalid(format!("boundary.{}: g set on a Neumann side", side.name())));
        }
        labels.push((side, kind));
    }
    for key in file.boundary.keys() {
        if !sides.iter().any(|s| s.name() == key) {
            return Err(invalid(format!("boundary side '{key}' does not exist in {}D", g.dim)));
        }
    }
    let (counts, lengths): (Vec<usize>, Vec<f64>) = if g.dim == 1 {
        (vec![g.nx], vec![g.lx])
    } else {
        let ny = g.ny.ok_or_else(|| invalid("grid.ny required in 2D"))?;
        let ly = g.ly.ok_or_else(|| invalid("grid.ly required in 2D"))?;
        (vec![g.nx, ny], vec![g.lx, ly])
    };
    build_grid(g.dim, &counts, &lengths, &labels).map_err(|e| invalid(e.to_string()))
}

fn boundary_data(
    file: &ScenarioFile,
    grid: &Grid,
    base: &Path,
) -> Result<BoundaryData, CliError> {
    let mut bdata = BoundaryData::zeros(grid);
    for (key, spec) in &file.boundary {
        let side = [Side::Left, Side::Right, Side::Bottom, Side::Top]
            .into_iter()
            .find(|s| s.name() == key)
            .expect("side names validated with the grid");
        let (slot, field_spec, label) = match spec.kind.as_str() {
            "dirichlet" => (&mut bdata.g, spec.g.as_ref(), "g"),
            _ => (&mut bdata.pi, spec.pi.as_ref(), "pi"),
        };
        let Some(field_spec) = field_spec else { continue };
        let faces: Vec<usize> = (0..grid.n_faces())
            .filter(|&f| grid.face(f).boundary.map(|b| b.side) == Some(side))
            .collect();
        let name = format!("boundary.{key}.{label}");
        match field_spec {
            FieldSpec::Expr(src) => {
                let expr = parse_spatial(src, &name)?;
                for f in faces {
                    let (x, y) = grid.face_pos(f);
                    slot[f] = expr.eval(0.0, x, y);
                }
            }
            FieldSpec::Csv { csv } => {
                let values = load_csv_values(base, csv, &name)?;
                if values.len() != faces.len() {
                    return Err(invalid(format!(
                        "{name}: {} values for {} faces on that side",
                        values.len(),
                        faces.len()
                    )));
                }
                for (f, v) in faces.into_iter().zip(values) {
                    slot[f] = v;
                }
            }
        }
    }
    Ok(bdata)
}

fn nonlinearity_entry(spec: &NonlinearitySpec) -> Result<NonlinearityEntry, CliError> {
    let check_absent = |cond: bool, what: &str| {
        if cond {
            Err(invalid(format!("nonlinearity.{what} does not apply to kind '{}'", spec.kind)))
        } else {
            Ok(())
        }
    };
    let entry = match spec.kind.as_str() {
        "quadratic" => {
            check_absent(spec.m.is_some(), "m")?;
            NonlinearityEntry::quadratic()
        }
        "pme" => {
            let m = spec.m.ok_or_else(|| invalid("nonlinearity.m required for kind 'pme'"))?;
            NonlinearityEntry::pme(m)
        }
        "stefan" => {
            let a1 =
                spec.a1.ok_or_else(|| invalid("nonlinearity.a1 required for kind 'stefan'"))?;
            let a2 =
                spec.a2.ok_or_else(|| invalid("nonlinearity.a2 required for kind 'stefan'"))?;
            NonlinearityEntry::stefan(a1, a2)
        }
        "hele-shaw" => match &spec.a {
            None => NonlinearityEntry::hele_shaw(),
            Some(src) => {
                let expr = parse_spatial(src, "nonlinearity.a")?;
                NonlinearityEntry::hele_shaw_scaled(coef_of(expr))
            }
        },
        "sampled" => {
            let pts = spec
                .points
                .as_ref()
                .ok_or_else(|| invalid("nonlinearity.points required for kind 'sampled'"))?;
            let pairs: Vec<(f64, f64)> = pts.iter().map(|p| (p[0], p[1])).collect();
            NonlinearityEntry::sampled(&pairs).map_err(|e| invalid(e.to_string()))?
        }
        other => {
            return Err(invalid(format!(
                "unknown nonlinearity kind '{other}' \
                 (quadratic | pme | stefan | hele-shaw | sampled)"
            )))
        }
    };
    match &spec.weight {
        None => Ok(entry),
        Some(src) => {
            let expr = parse_spatial(src, "nonlinearity.weight")?;
            Ok(entry.with_weight(coef_of(expr)))
        }
    }
}

fn cost_entry(spec: &CostSpec) -> Result<CostEntry, CliError> {
    let k = match &spec.k {
        None => Coef::constant(1.0),
        Some(src) => coef_of(parse_spatial(src, "cost.k")?),
    };
    match spec.kind.as_str() {
        "quadratic" => {
            if let Some(p) = spec.p {
                if (p - 2.0).abs() > 1e-12 {
                    return Err(invalid(format!("cost kind 'quadratic' requires p = 2, got {p}")));
                }
            }
            Ok(CostEntry::quadratic(k))
        }
        "ppower" => {
            let p = spec.p.ok_or_else(|| invalid("cost.p required for kind 'ppower'"))?;
            if !(p > 1.0) {
                return Err(invalid(format!("cost.p must exceed 1, got {p}")));
            }
            Ok(CostEntry::ppower(p, k))
        }
        other => Err(invalid(format!("unknown cost kind '{other}' (quadratic | ppower)"))),
    }
}

fn coef_of(expr: Expr) -> Coef {
    Coef::from_fn(move |(x, y)| expr.eval(0.0, x, y))
}

/// Parse an expression for a time-independent slot (rejects `t`).
fn parse_spatial(src: &str, name: &str) -> Result<Expr, CliError> {
    let expr = Expr::parse(src).map_err(|e| invalid(format!("{name}: {e}")))?;
    if expr.uses(Var::T) {
        return Err(invalid(format!("{name}: expression may not depend on t")));
    }
    Ok(expr)
}

// ---------------------------------------------------------------------------
// Field evaluation (expressions and CSV samples)
// ---------------------------------------------------------------------------

/// Read a one-column CSV (header `value`) of f64 samples.
fn load_csv_values(base: &Path, rel: &Path, name: &str) -> Result<Vec<f64>, CliError> {
    let path = if rel.is_absolute() { rel.to_path_buf() } else { base.join(rel) };
    let mut reader = csv::Reader::from_path(&path)
        .map_err(|e| invalid(format!("{name}: cannot read {}: {e}", path.display())))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| invalid(format!("{name}: {}: {e}", path.display())))?;
        if headers.len() != 1 || headers.get(0) != Some("value") {
            return Err(invalid(format!(
                "{name}: {} must have the single header 'value'",
                path.display()
            )));
        }
    }
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| invalid(format!("{name}: {}: {e}", path.display())))?;
        let text = record.get(0).unwrap_or("");
        let v: f64 = text.parse().map_err(|_| {
            invalid(format!("{name}: {} row {}: bad value '{text}'", path.display(), i + 2))
        })?;
        values.push(v);
    }
    Ok(values)
}

/// Cell field from an expression (evaluated at cell centers, t = 0) or a CSV
/// with one row per cell in row-major order.
fn cell_values(
    spec: &FieldSpec,
    grid: &Grid,
    base: &Path,
    name: &str,
) -> Result<CellField, CliError> {
    match spec {
        FieldSpec::Expr(src) => {
            let expr = parse_spatial(src, name)?;
            Ok((0..grid.n_cells())
                .map(|c| {
                    let (x, y) = grid.cell_pos(c);
                    expr.eval(0.0, x, y)
                })
                .collect())
        }
        FieldSpec::Csv { csv } => {
            let values = load_csv_values(base, csv, name)?;
            if values.len() != grid.n_cells() {
                return Err(invalid(format!(
                    "{name}: {} values for {} cells",
                    values.len(),
                    grid.n_cells()
                )));
            }
            Ok(values)
        }
    }
}

/// Position-keyed sample table; the stepper evaluates inputs exactly at grid
/// entity centers, so bit-exact keys are a total lookup.
struct SampleTable {
    map: HashMap<(u64, u64), f64>,
}

impl SampleTable {
    fn get(&self, pos: Position) -> f64 {
        self.map.get(&(pos.0.to_bits(), pos.1.to_bits())).copied().unwrap_or(0.0)
    }
}

enum ScalarField {
    Expr(Expr),
    Samples(SampleTable),
}

impl ScalarField {
    fn eval(&self, t: f64, pos: Position) -> f64 {
        match self {
            ScalarField::Expr(e) => e.eval(t, pos.0, pos.1),
            ScalarField::Samples(s) => s.get(pos),
        }
    }
}

/// Time-dependent cell source: expression in t, x, y, or CSV samples at cell
/// centers (then constant in time).
fn scalar_input(
    spec: &FieldSpec,
    grid: &Grid,
    base: &Path,
    name: &str,
) -> Result<nldiff::stepper::ScalarInput, CliError> {
    let field = match spec {
        FieldSpec::Expr(src) => {
            ScalarField::Expr(Expr::parse(src).map_err(|e| invalid(format!("{name}: {e}")))?)
        }
        FieldSpec::Csv { csv } => {
            let values = load_csv_values(base, csv, name)?;
            if values.len() != grid.n_cells() {
                return Err(invalid(format!(
                    "{name}: {} values for {} cells",
                    values.len(),
                    grid.n_cells()
                )));
            }
            let map = (0..grid.n_cells())
                .map(|c| {
                    let p = grid.cell_pos(c);
                    ((p.0.to_bits(), p.1.to_bits()), values[c])
                })
                .collect();
            ScalarField::Samples(SampleTable { map })
        }
    };
    Ok(Arc::new(move |t, pos| field.eval(t, pos)))
}

/// Per-component face input (velocity or flux source): one expression per
/// axis, or CSV samples with one row per face of that axis in face order.
fn vector_input(
    specs: &[FieldSpec],
    grid: &Grid,
    base: &Path,
    name: &str,
    _time_dependent: bool,
) -> Result<nldiff::stepper::VectorInput, CliError> {
    if specs.len() != grid.dim() {
        return Err(invalid(format!(
            "{name}: {} components for a {}D grid",
            specs.len(),
            grid.dim()
        )));
    }
    let mut components = Vec::new();
    for (axis, spec) in specs.iter().enumerate() {
        let field = match spec {
            FieldSpec::Expr(src) => ScalarField::Expr(
                Expr::parse(src).map_err(|e| invalid(format!("{name}[{axis}]: {e}")))?,
            ),
            FieldSpec::Csv { csv } => {
                let faces: Vec<usize> =
                    (0..grid.n_faces()).filter(|&f| grid.face(f).axis == axis).collect();
                let values = load_csv_values(base, csv, &format!("{name}[{axis}]"))?;
                if values.len() != faces.len() {
                    return Err(invalid(format!(
                        "{name}[{axis}]: {} values for {} axis-{axis} faces",
                        values.len(),
                        faces.len()
                    )));
                }
                let map = faces
                    .into_iter()
                    .zip(values)
                    .map(|(f, v)| {
                        let p = grid.face_pos(f);
                        ((p.0.to_bits(), p.1.to_bits()), v)
                    })
                    .collect();
                ScalarField::Samples(SampleTable { map })
            }
        };
        components.push(field);
    }
    let cy = components.pop();
    let cx = components.pop();
    let (cx, cy) = match (cx, cy) {
        (Some(cx), Some(cy)) => (cx, Some(cy)),
        (None, Some(cx)) => (cx, None),
        _ => unreachable!("component count checked above"),
    };
    Ok(Arc::new(move |t, pos| {
        let vx = cx.eval(t, pos);
        let vy = cy.as_ref().map_or(0.0, |c| c.eval(t, pos));
        (vx, vy)
    }))
}

// ---------------------------------------------------------------------------
// Dual-element files (for the norm command)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualElementFile {
    pub grid: GridSpec,
    pub boundary: BTreeMap<String, SideSpec>,
    pub element: ElementSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f0: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fbar: Option<Vec<FieldSpec>>,
}

pub fn load_dual_element(
    path: &Path,
) -> Result<(Grid, nldiff::dualnorm::DualElement), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let file: DualElementFile = toml::from_str(&text)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let shim = ScenarioFile {
        grid: file.grid.clone(),
        boundary: file.boundary.clone(),
        nonlinearity: NonlinearitySpec {
            kind: "quadratic".into(),
            m: None,
            a1: None,
            a2: None,
            a: None,
            weight: None,
            points: None,
        },
        cost: CostSpec { kind: "quadratic".into(), p: None, k: None },
        transport: None,
        source: None,
        initial: InitialSpec { rho0: FieldSpec::Expr("0".into()) },
        time: TimeSpec { horizon: 1.0, tau: 1.0 },
        algorithm: None,
        solver: None,
        output: None,
        reference: None,
    };
    let grid = build_grid_from(&shim)?;
    let base = path.parent().unwrap_or(Path::new("."));

    let f0 = match &file.element.f0 {
        None => grid.zeros_cells(),
        Some(spec) => cell_values(spec, &grid, base, "element.f0")?,
    };
    let mut fbar = grid.zeros_faces();
    if let Some(specs) = &file.element.fbar {
        let input = vector_input(specs, &grid, base, "element.fbar", false)?;
        for f in 0..grid.n_faces() {
            let v = input(0.0, grid.face_pos(f));
            fbar[f] = if grid.face(f).axis == 0 { v.0 } else { v.1 };
        }
    }
    Ok((grid, nldiff::dualnorm::DualElement { f0, fbar }))
}
