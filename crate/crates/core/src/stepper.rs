//! Implicit proximal time stepping of the doubly nonlinear evolution
//!
//!   ∂_t ρ − ∇·(φ + ρV) = f₀ + ∇·f̄,   φ ∈ ∂F*(x, ∇η),   ρ ∈ ∂β*(x, η),
//!
//! on the staggered grid. Each step solves one saddle problem (α = 1,
//! `tau_scale` = τ) whose data fold the previous state, the time-averaged
//! sources and the transport flux. Two drivers are provided:
//!
//! * **transport–forcing** — the transport term ρ^{i−1}V^i enters the step's
//!   face offset χ (explicit in ρ, implicit in the diffusive flux), so one
//!   saddle solve advances everything at once;
//! * **prediction–correction** — the state is first advected by a donor-cell
//!   scheme over the full step (sub-cycled under a CFL bound), then the
//!   diffusive proximal correction runs with χ = f̄ only.
//!
//! The trajectory records per-step certificates and monitors: mass, energy
//! Σ β(ρ) w_c, duality gap, mass-balance residual, the dual-metric increment
//! d(ρ^i, ρ^{i−1}), and an energy-dissipation inequality that is an exact
//! consequence of convexity and feasibility (so its failure beyond the solver
//! tolerance always indicates a bug, not a modeling artifact).

use std::ops::Range;
use std::sync::Arc;

use crate::accum::{sum, Kahan};
use crate::dualnorm::DualMetric;
use crate::grid::{
    divergence_into, gradient, gradient_into, upwind_advect, upwind_flux, BoundaryData, CellField,
    FaceField, Grid, GridError,
};
use crate::nonlinearity::{CostEntry, NonlinearityEntry};
use crate::saddle::{
    solve_newton, solve_pd_warm, ProblemData, SaddleError, SaddleSolution, SolverParams,
};
use crate::Position;

/// Time-dependent scalar data (source densities, boundary rates).
pub type ScalarInput = Arc<dyn Fn(f64, Position) -> f64 + Send + Sync>;
/// Time-dependent vector data (velocity, flux sources).
pub type VectorInput = Arc<dyn Fn(f64, Position) -> (f64, f64) + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    /// Transport folded into the saddle data as an explicit face flux.
    TransportForcing,
    /// Donor-cell advection over the full step, then a diffusive correction.
    PredictionCorrection,
}

/// Which saddle solver advances the implicit steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StepSolver {
    /// Certified first-order primal-dual iteration; supports every catalog
    /// entry and warm-starts from the previous step.
    #[default]
    PrimalDual,
    /// Damped Newton on the potential equation; fast on smooth entries but
    /// rejects nonsmooth conjugates (`UnsupportedEntry`).
    Newton,
}

#[derive(Debug, thiserror::Error)]
pub enum StepperError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("step {step} (t = {time}) failed: {source}")]
    StepFailure {
        step: usize,
        time: f64,
        source: Box<SaddleError>,
        /// Everything accepted before the failing step.
        partial: Box<Trajectory>,
    },
    #[error(transparent)]
    Saddle(#[from] SaddleError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// A full evolution problem: geometry, nonlinearities, data and numerics.
///
/// Boundary data (g, π) are constant in time; the velocity and the two source
/// parts may depend on t and are averaged over each step by 4-point Gauss
/// quadrature. `max_courant ≤ 0.5` keeps the prediction stage inside dom β
/// (the donor update is then a convex combination of neighboring values).
#[derive(Clone)]
pub struct Scenario {
    pub grid: Grid,
    pub bdata: BoundaryData,
    pub beta: NonlinearityEntry,
    pub cost: CostEntry,
    pub velocity: Option<VectorInput>,
    pub source_cell: Option<ScalarInput>,
    pub source_flux: Option<VectorInput>,
    pub rho0: CellField,
    pub horizon: f64,
    pub tau: f64,
    pub algorithm: Algorithm,
    pub solver: SolverParams,
    pub step_solver: StepSolver,
    pub max_courant: f64,
    /// Keep the per-step η, φ fields every `thin`-th step (monitors are
    /// always computed online, before thinning).
    pub thin: usize,
}

impl Scenario {
    pub fn new(
        grid: Grid,
        beta: NonlinearityEntry,
        cost: CostEntry,
        rho0: CellField,
        horizon: f64,
        tau: f64,
    ) -> Self {
        let bdata = BoundaryData::zeros(&grid);
        Self {
            grid,
            bdata,
            beta,
            cost,
            velocity: None,
            source_cell: None,
            source_flux: None,
            rho0,
            horizon,
            tau,
            algorithm: Algorithm::TransportForcing,
            solver: SolverParams::default(),
            step_solver: StepSolver::default(),
            max_courant: 0.5,
            thin: 1,
        }
    }

    /// Number of steps ⌈T/τ⌉ (the last one may be shorter).
    pub fn n_steps(&self) -> usize {
        let r = self.horizon / self.tau;
        let n = if (r - r.round()).abs() < 1e-9 * r.max(1.0) { r.round() } else { r.ceil() };
        (n as usize).max(1)
    }

    /// Bounds ]t_{i−1}, t_i] of step i.
    pub fn step_interval(&self, i: usize) -> (f64, f64) {
        let ta = (i - 1) as f64 * self.tau;
        let tb = if i == self.n_steps() { self.horizon } else { i as f64 * self.tau };
        (ta, tb)
    }

    pub fn validate(&self) -> Result<(), StepperError> {
        let bad = |m: String| Err(StepperError::InvalidScenario(m));
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.tau > 0.0) || self.tau > self.horizon * (1.0 + 1e-12) {
            return bad(format!("step {} outside (0, {}]", self.tau, self.horizon));
        }
        if self.rho0.len() != self.grid.n_cells() {
            return bad(format!(
                "rho0 has {} entries for {} cells",
                self.rho0.len(),
                self.grid.n_cells()
            ));
        }
        let (lo, hi) = self.beta.domain();
        for (c, &r) in self.rho0.iter().enumerate() {
            if !r.is_finite() || r < lo || r > hi {
                return bad(format!("rho0[{c}] = {r} outside dom β = [{lo}, {hi}]"));
            }
        }
        if !(self.max_courant > 0.0 && self.max_courant <= 1.0) {
            return bad(format!("max_courant {} outside (0, 1]", self.max_courant));
        }
        if self.thin == 0 {
            return bad("thin must be at least 1".into());
        }
        Ok(())
    }
}

/// Everything retained about one accepted step.
#[derive(Clone, Debug)]
pub struct StepRecord {
    /// Step length (equals the scenario τ except possibly on the last step).
    pub tau: f64,
    /// Potential η^i; dropped on thinned steps.
    pub eta: Option<CellField>,
    /// Flux φ^i (Neumann entries pinned); dropped on thinned steps.
    pub phi: Option<FaceField>,
    /// The density the proximal step regularized from: ρ^{i−1}, or the
    /// advected intermediate for prediction–correction.
    pub base: CellField,
    /// Time-averaged cell source over the step.
    pub f0: CellField,
    /// Time-averaged flux source (face-normal components).
    pub fbar: FaceField,
    /// Face offset χ the saddle step was solved with.
    pub chi: FaceField,
    /// Total face flux of the accepted step (diffusive + transported parts),
    /// the object whose discrete divergence balances (ρ^i − ρ^{i−1})/τ − f₀.
    pub flux_total: FaceField,
    pub gap: f64,
    pub feasibility: f64,
    pub iterations: usize,
}

/// The discrete evolution: states at t_0 < … < t_n plus per-step monitors.
///
/// Vectors indexed by state have n+1 entries; per-step vectors have n, entry
/// i−1 belonging to step i (the move from t_{i−1} to t_i).
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Grid,
    pub bdata: BoundaryData,
    pub beta: NonlinearityEntry,
    pub cost: CostEntry,
    pub algorithm: Algorithm,
    pub tau: f64,
    pub times: Vec<f64>,
    pub states: Vec<CellField>,
    pub mass: Vec<f64>,
    /// Σ β(x, ρ) w_c per state.
    pub energy: Vec<f64>,
    pub gap: Vec<f64>,
    pub iterations: Vec<usize>,
    pub mass_balance: Vec<f64>,
    /// Dual-metric increment d(ρ^i, ρ^{i−1}); NaN when the metric is not
    /// available (no Dirichlet face, or its own solve failed).
    pub dual_increment: Vec<f64>,
    /// (lhs, rhs, flag) of the per-step dissipation inequality.
    pub dissipation: Vec<(f64, f64, bool)>,
    pub records: Vec<StepRecord>,
    /// Cell extension of the Dirichlet data used by the dissipation monitor
    /// (zero when g ≡ 0; any extension keeps the inequality exact).
    pub g_ext: CellField,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn final_state(&self) -> &CellField {
        self.states.last().expect("trajectory holds the initial state")
    }

    fn new(sc: &Scenario, g_ext: CellField) -> Self {
        Self {
            grid: sc.grid.clone(),
            bdata: sc.bdata.clone(),
            beta: sc.beta.clone(),
            cost: sc.cost.clone(),
            algorithm: sc.algorithm,
            tau: sc.tau,
            times: Vec::new(),
            states: Vec::new(),
            mass: Vec::new(),
            energy: Vec::new(),
            gap: Vec::new(),
            iterations: Vec::new(),
            mass_balance: Vec::new(),
            dual_increment: Vec::new(),
            dissipation: Vec::new(),
            records: Vec::new(),
            g_ext,
        }
    }
}

/// Average of f over [a, b] by 4-point Gauss–Legendre quadrature (exact for
/// polynomials in t up to degree 7).
fn gauss4_average(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const X: [f64; 4] =
        [-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526];
    const W: [f64; 4] =
        [0.3478548451374539, 0.6521451548625461, 0.6521451548625461, 0.3478548451374539];
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut s = Kahan::new();
    for k in 0..4 {
        s.add(W[k] * f(mid + half * X[k]));
    }
    0.5 * s.value()
}

/// Step data averaged over ]t_{i−1}, t_i]: face-normal velocity V^i, cell
/// source f₀^i and face-normal flux source f̄^i.
pub fn average_inputs(sc: &Scenario, i: usize) -> (FaceField, CellField, FaceField) {
    let (ta, tb) = sc.step_interval(i);
    let grid = &sc.grid;
    let mut vi = grid.zeros_faces();
    let mut fbari = grid.zeros_faces();
    for f in 0..grid.n_faces() {
        let pos = grid.face_pos(f);
        let axis = grid.face(f).axis;
        if let Some(v) = &sc.velocity {
            vi[f] = gauss4_average(
                |t| {
                    let (x, y) = v(t, pos);
                    if axis == 0 {
                        x
                    } else {
                        y
                    }
                },
                ta,
                tb,
            );
        }
        if let Some(fb) = &sc.source_flux {
            fbari[f] = gauss4_average(
                |t| {
                    let (x, y) = fb(t, pos);
                    if axis == 0 {
                        x
                    } else {
                        y
                    }
                },
                ta,
                tb,
            );
        }
    }
    let mut f0i = grid.zeros_cells();
    if let Some(f0) = &sc.source_cell {
        for c in 0..grid.n_cells() {
            let pos = grid.cell_pos(c);
            f0i[c] = gauss4_average(|t| f0(t, pos), ta, tb);
        }
    }
    (vi, f0i, fbari)
}

/// Upwind face flux ρV for the sign convention of this equation: mass moves
/// against V (the divergence enters with a plus), so the donor sits on the
/// plus side where V > 0. Boundary faces carry no transported mass.
fn transport_flux(grid: &Grid, rho: &[f64], vi: &[f64]) -> FaceField {
    let u: Vec<f64> = vi.iter().map(|v| -v).collect();
    let mut flux = upwind_flux(grid, rho, &u);
    flux.iter_mut().for_each(|x| *x = -*x);
    flux
}

/// One accepted step: the certified saddle solution plus its assembled data.
pub struct StepOutput {
    pub solution: SaddleSolution,
    pub record: StepRecord,
}

fn assemble_record(
    pd: &ProblemData,
    sol: &SaddleSolution,
    tau_i: f64,
    base: CellField,
    f0: CellField,
    fbar: FaceField,
    extra_flux: Option<&FaceField>,
) -> StepRecord {
    let mut flux_total: FaceField =
        (0..pd.grid.n_faces()).map(|f| sol.phi[f] + pd.chi[f]).collect();
    if let Some(extra) = extra_flux {
        for f in 0..flux_total.len() {
            flux_total[f] += extra[f];
        }
    }
    StepRecord {
        tau: tau_i,
        eta: Some(sol.eta.clone()),
        phi: Some(sol.phi.clone()),
        base,
        f0,
        fbar,
        chi: pd.chi.clone(),
        flux_total,
        gap: sol.gap,
        feasibility: sol.feasibility_residual,
        iterations: sol.iterations,
    }
}

/// One step of the transport–forcing driver: μ = ρ^{i−1} + τ f₀^i and
/// χ = (ρ^{i−1}V^i)_upwind + f̄^i, solved as a single saddle problem.
pub fn step_transport_forcing(
    sc: &Scenario,
    i: usize,
    rho_prev: &[f64],
    warm: Option<&SaddleSolution>,
) -> Result<StepOutput, StepperError> {
    let (ta, tb) = sc.step_interval(i);
    let tau_i = tb - ta;
    let (vi, f0i, fbari) = average_inputs(sc, i);
    let chi_v = transport_flux(&sc.grid, rho_prev, &vi);
    let chi: FaceField = (0..sc.grid.n_faces()).map(|f| chi_v[f] + fbari[f]).collect();
    let mu: CellField =
        (0..sc.grid.n_cells()).map(|c| rho_prev[c] + tau_i * f0i[c]).collect();
    let pd = ProblemData::new(
        sc.grid.clone(),
        sc.bdata.clone(),
        mu,
        chi,
        1.0,
        tau_i,
        sc.beta.clone(),
        sc.cost.clone(),
    )?;
    let sol = solve_step(sc, &pd, warm)?;
    let record = assemble_record(&pd, &sol, tau_i, rho_prev.to_vec(), f0i, fbari, None);
    Ok(StepOutput { solution: sol, record })
}

/// Advance one saddle problem with the scenario's configured solver.
fn solve_step(
    sc: &Scenario,
    pd: &ProblemData,
    warm: Option<&SaddleSolution>,
) -> Result<SaddleSolution, SaddleError> {
    match sc.step_solver {
        StepSolver::PrimalDual => solve_pd_warm(pd, &sc.solver, warm),
        StepSolver::Newton => solve_newton(pd, &sc.solver),
    }
}

/// One step of the prediction–correction driver: donor-cell advection over
/// the full τ (sub-cycled under the CFL bound), then the proximal correction
/// with χ = f̄^i only.
pub fn step_prediction_correction(
    sc: &Scenario,
    i: usize,
    rho_prev: &[f64],
    warm: Option<&SaddleSolution>,
) -> Result<StepOutput, StepperError> {
    let grid = &sc.grid;
    let (ta, tb) = sc.step_interval(i);
    let tau_i = tb - ta;
    let (vi, f0i, fbari) = average_inputs(sc, i);
    let u: Vec<f64> = vi.iter().map(|v| -v).collect();

    // worst cell-crossing rate decides the number of sub-cycles
    let mut rate = 0.0f64;
    for c in 0..grid.n_cells() {
        let mut r = 0.0;
        for axis in 0..grid.dim() {
            let (fm, fp) = grid.cell_face_pair(c, axis);
            r += u[fm].abs().max(u[fp].abs()) / grid.h(axis);
        }
        rate = rate.max(r);
    }
    let n_sub = ((tau_i * rate / sc.max_courant).ceil() as usize).max(1);
    let dt = tau_i / n_sub as f64;
    let mut rho_half = rho_prev.to_vec();
    for _ in 0..n_sub {
        rho_half = upwind_advect(grid, &rho_half, &u, dt, sc.max_courant)
            .map_err(SaddleError::from)?;
    }

    let mu: CellField =
        (0..grid.n_cells()).map(|c| rho_half[c] + tau_i * f0i[c]).collect();
    let pd = ProblemData::new(
        grid.clone(),
        sc.bdata.clone(),
        mu,
        fbari.clone(),
        1.0,
        tau_i,
        sc.beta.clone(),
        sc.cost.clone(),
    )?;
    let sol = solve_step(sc, &pd, warm)?;
    // weak-form bookkeeping: the advected mass shows up as an extra
    // transported flux against the start-of-step upwind product
    let chi_v = transport_flux(grid, rho_prev, &vi);
    let record = assemble_record(&pd, &sol, tau_i, rho_half, f0i, fbari, Some(&chi_v));
    Ok(StepOutput { solution: sol, record })
}

/// Discrete harmonic extension of the Dirichlet data into the cells; zero
/// when the solve is unavailable (any extension keeps the monitors exact).
fn harmonic_extension(grid: &Grid, g: &FaceField) -> CellField {
    let zeros = grid.zeros_cells();
    let eg = match gradient(grid, &zeros, g) {
        Ok(e) => e,
        Err(_) => return zeros,
    };
    let mut rhs = grid.zeros_cells();
    divergence_into(grid, &eg, &mut rhs);
    let l0 = crate::dualnorm::assemble_l0(grid);
    let b = nalgebra::DVector::from_iterator(rhs.len(), rhs.iter().copied());
    match l0.clone().cholesky().map(|ch| ch.solve(&b)).or_else(|| l0.lu().solve(&b)) {
        Some(z) => z.as_slice().to_vec(),
        None => zeros,
    }
}

/// Drive the selected algorithm from ρ₀ to the horizon, recording every
/// monitor each step; a failed step returns everything accepted so far.
pub fn run(sc: &Scenario) -> Result<Trajectory, StepperError> {
    sc.validate()?;
    let grid = &sc.grid;
    let n = sc.n_steps();
    let wc = grid.cell_weight();

    let g_nontrivial = grid.dirichlet_faces().iter().any(|&f| sc.bdata.g[f] != 0.0);
    let g_ext = if g_nontrivial && grid.n_cells() <= 4096 {
        harmonic_extension(grid, &sc.bdata.g)
    } else {
        grid.zeros_cells()
    };

    let metric = DualMetric::new(grid, sc.cost.p()).ok();

    let mut traj = Trajectory::new(sc, g_ext);
    traj.times.push(0.0);
    traj.states.push(sc.rho0.clone());
    traj.mass.push(sum(sc.rho0.iter().map(|r| r * wc)));
    traj.energy.push(energy_of(sc, &sc.rho0));

    let mut rho = sc.rho0.clone();
    let mut warm: Option<SaddleSolution> = None;
    for i in 1..=n {
        let (_, tb) = sc.step_interval(i);
        let stepped = match sc.algorithm {
            Algorithm::TransportForcing => step_transport_forcing(sc, i, &rho, warm.as_ref()),
            Algorithm::PredictionCorrection => {
                step_prediction_correction(sc, i, &rho, warm.as_ref())
            }
        };
        let out = match stepped {
            Ok(o) => o,
            Err(e) => {
                let source = match e {
                    StepperError::Saddle(s) => Box::new(s),
                    StepperError::Grid(g) => Box::new(SaddleError::from(g)),
                    other => return Err(other),
                };
                return Err(StepperError::StepFailure {
                    step: i,
                    time: tb,
                    source,
                    partial: Box::new(traj),
                });
            }
        };
        let mut record = out.record;
        let sol = out.solution;

        traj.times.push(tb);
        traj.states.push(sol.rho.clone());
        traj.mass.push(sum(sol.rho.iter().map(|r| r * wc)));
        traj.energy.push(energy_of(sc, &sol.rho));
        traj.gap.push(record.gap);
        traj.iterations.push(record.iterations);
        traj.mass_balance.push(mass_balance_of(&traj, &record, &sol.rho, &rho));
        traj.dual_increment.push(match &metric {
            Some(m) => m.increment(&sol.rho, &rho).unwrap_or(f64::NAN),
            None => f64::NAN,
        });
        traj.dissipation.push(dissipation_of(&traj, &record, &sol.rho));

        if i % sc.thin != 0 && i != n {
            record.eta = None;
            record.phi = None;
        }
        traj.records.push(record);
        rho = sol.rho.clone();
        warm = Some(sol);
    }
    Ok(traj)
}

fn energy_of(sc: &Scenario, rho: &[f64]) -> f64 {
    let wc = sc.grid.cell_weight();
    let mut e = Kahan::new();
    for (c, &r) in rho.iter().enumerate() {
        e.add(sc.beta.eval(sc.grid.cell_pos(c), r) * wc);
    }
    e.value()
}

/// |Σ(ρ^i−ρ^{i−1})w_c − τ(Σf₀ w_c + Σ_{Γ_N} π a + Σ_{Γ_D} ν·flux a)|: the
/// discrete conservation identity, exact up to the feasibility certificate.
fn mass_balance_of(traj: &Trajectory, record: &StepRecord, rho: &[f64], prev: &[f64]) -> f64 {
    let grid = &traj.grid;
    let wc = grid.cell_weight();
    let mut s = Kahan::new();
    for c in 0..grid.n_cells() {
        s.add((rho[c] - prev[c]) * wc);
        s.add(-record.tau * record.f0[c] * wc);
    }
    for &f in grid.neumann_faces() {
        s.add(-record.tau * traj.bdata.pi[f] * grid.face_area(f));
    }
    for &f in grid.dirichlet_faces() {
        let nu = grid.face(f).boundary.unwrap().nu;
        s.add(-record.tau * nu * record.flux_total[f] * grid.face_area(f));
    }
    s.value().abs()
}

/// Evaluate the dissipation inequality of one step (see
/// [`monitor_dissipation`]); needs the retained η, φ.
fn dissipation_of(traj: &Trajectory, record: &StepRecord, rho: &[f64]) -> (f64, f64, bool) {
    let grid = &traj.grid;
    let wc = grid.cell_weight();
    let eta = record.eta.as_ref().expect("dissipation needs eta");
    let phi = record.phi.as_ref().expect("dissipation needs phi");
    let psi: CellField = (0..grid.n_cells()).map(|c| eta[c] - traj.g_ext[c]).collect();
    let zeros_g = grid.zeros_faces();
    let mut gpsi = grid.zeros_faces();
    gradient_into(grid, &psi, &zeros_g, &mut gpsi);

    let mut lhs = Kahan::new();
    let mut rhs = Kahan::new();
    let mut mag = Kahan::new();
    for c in 0..grid.n_cells() {
        let pos = grid.cell_pos(c);
        let a = (traj.beta.eval(pos, rho[c]) - rho[c] * traj.g_ext[c]) * wc;
        let b = (traj.beta.eval(pos, record.base[c]) - record.base[c] * traj.g_ext[c]) * wc;
        lhs.add(a - b);
        mag.add(a.abs() + b.abs());
        let fterm = record.tau * psi[c] * record.f0[c] * wc;
        rhs.add(fterm);
        mag.add(fterm.abs());
    }
    for f in 0..grid.n_faces() {
        let w = grid.face_weight(f);
        let dissip = record.tau * phi[f] * gpsi[f] * w;
        lhs.add(dissip);
        mag.add(dissip.abs());
        let cterm = record.tau * record.chi[f] * gpsi[f] * w;
        rhs.add(-cterm);
        mag.add(cterm.abs());
    }
    for &f in grid.neumann_faces() {
        let adj = grid.face(f).adjacent();
        let bterm = record.tau * traj.bdata.pi[f] * psi[adj] * grid.face_area(f);
        rhs.add(bterm);
        mag.add(bterm.abs());
    }
    let scale = 1.0 + mag.value();
    let (l, r) = (lhs.value(), rhs.value());
    (l, r, l <= r + 1e-8 * scale)
}

/// Mass-balance residual of step i (1-based): the discrete conservation
/// defect |Σ(ρ^i−ρ^{i−1})w_c − τ(sources + boundary fluxes)|. Recomputed
/// from the step record.
pub fn monitor_mass_balance(traj: &Trajectory, i: usize) -> f64 {
    assert!(i >= 1 && i <= traj.n_steps(), "step index {i} out of range");
    mass_balance_of(traj, &traj.records[i - 1], &traj.states[i], &traj.states[i - 1])
}

/// Dissipation inequality of step i (1-based): with ψ = η^i − g̃,
///
///   Σ(β(ρ^i)−ρ^i g̃)w − Σ(β(base)−base·g̃)w + τΣ φ^i·∇ψ w_f
///     ≤ τ[Σ f₀^i ψ w − Σ χ^i·∇ψ w_f + Σ_{Γ_N} π ψ a] + 1e−8·scale,
///
/// an exact consequence of η^i ∈ ∂β(ρ^i) and the balance constraint (for the
/// prediction–correction driver the base is the advected intermediate).
/// Returns (lhs, rhs, flag); with homogeneous data it asserts that the energy
/// Σβ(ρ) is nonincreasing. Falls back to the online value when η, φ were
/// thinned away.
pub fn monitor_dissipation(traj: &Trajectory, i: usize) -> (f64, f64, bool) {
    assert!(i >= 1 && i <= traj.n_steps(), "step index {i} out of range");
    let record = &traj.records[i - 1];
    if record.eta.is_none() || record.phi.is_none() {
        return traj.dissipation[i - 1];
    }
    dissipation_of(traj, record, &traj.states[i])
}

/// Time-summed defect of the discrete weak form against a test function ξ
/// (a cell field, understood to vanish on the Dirichlet boundary):
///
///   Σ_{i∈window} [ Σ(ρ^i−ρ^{i−1})ξ w_c + τ(Σ flux^i·∇ξ w_f − Σ f₀^i ξ w_c
///                  − Σ_{Γ_N} π ξ a) ].
///
/// For the transport–forcing driver each summand is the feasibility pairing
/// (≈ solver tolerance); for prediction–correction it additionally measures
/// the splitting defect, which is first-order in τ. `window` is a 1-based
/// step range.
pub fn weak_residual(traj: &Trajectory, xi: &[f64], window: Range<usize>) -> f64 {
    let grid = &traj.grid;
    assert_eq!(xi.len(), grid.n_cells(), "test function size");
    assert!(window.start >= 1 && window.end <= traj.n_steps() + 1, "window out of range");
    let wc = grid.cell_weight();
    let zeros_g = grid.zeros_faces();
    let mut gxi = grid.zeros_faces();
    gradient_into(grid, xi, &zeros_g, &mut gxi);
    let mut s = Kahan::new();
    for i in window {
        let r = &traj.records[i - 1];
        for c in 0..grid.n_cells() {
            s.add((traj.states[i][c] - traj.states[i - 1][c]) * xi[c] * wc);
            s.add(-r.tau * r.f0[c] * xi[c] * wc);
        }
        for f in 0..grid.n_faces() {
            s.add(r.tau * r.flux_total[f] * gxi[f] * grid.face_weight(f));
        }
        for &f in grid.neumann_faces() {
            let adj = grid.face(f).adjacent();
            s.add(-r.tau * traj.bdata.pi[f] * xi[adj] * grid.face_area(f));
        }
    }
    s.value().abs()
}
