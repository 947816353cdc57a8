//! Invariant suites behind `nldiff check <suite>`: fast, seeded sweeps of the
//! certificates the library guarantees, one pass/fail row per property.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use nldiff::grid::{
    build_grid, divergence, gradient, green_defect, BoundaryData, BoundaryKind, CellField, Grid,
    Side,
};
use nldiff::nonlinearity::{Coef, CostEntry, CostKind, NonlinearityEntry, NonlinearityKind};
use nldiff::oracle;
use nldiff::saddle::{solve_newton, solve_pd, ProblemData, SolverParams};
use nldiff::stepper::run;
use nldiff::Scenario;

use crate::CliError;

pub struct CheckRow {
    pub name: String,
    pub pass: bool,
    pub witness: String,
}

impl CheckRow {
    fn new(name: impl Into<String>, pass: bool, witness: String) -> Self {
        Self { name: name.into(), pass, witness }
    }
}

pub const SUITES: [&str; 5] =
    ["conjugacy", "adjointness", "duality", "oracle-equivalence", "dissipation"];

pub fn run_suite(name: &str) -> Result<Vec<CheckRow>, CliError> {
    match name {
        "conjugacy" => Ok(conjugacy()),
        "adjointness" => Ok(adjointness()),
        "duality" => Ok(duality()),
        "oracle-equivalence" => Ok(oracle_equivalence()),
        "dissipation" => Ok(dissipation()),
        other => Err(CliError::Invalid(format!(
            "unknown check suite '{other}' (available: {})",
            SUITES.join(", ")
        ))),
    }
}

pub fn beta_label(e: &NonlinearityEntry) -> String {
    let base = match &e.kind {
        NonlinearityKind::Quadratic => "quadratic".to_string(),
        NonlinearityKind::Pme { m } => format!("pme m={m}"),
        NonlinearityKind::Stefan { a1, a2 } => format!("stefan [{}, {}]", -a2, a1),
        NonlinearityKind::HeleShaw => "hele-shaw".to_string(),
        NonlinearityKind::Sampled(_) => "sampled".to_string(),
    };
    match &e.weight {
        Coef::Const(c) if *c == 1.0 => base,
        Coef::Const(c) => format!("{base} (weight {c})"),
        Coef::Field(_) => format!("{base} (weighted)"),
    }
}

pub fn cost_label(c: &CostEntry) -> String {
    let base = match c.kind {
        CostKind::Quadratic => "quadratic".to_string(),
        CostKind::PPower { p } => format!("p-power p={p}"),
    };
    match &c.k {
        Coef::Const(k) if *k == 1.0 => base,
        Coef::Const(k) => format!("{base} (k {k})"),
        Coef::Field(_) => format!("{base} (variable k)"),
    }
}

fn density_catalog() -> Vec<NonlinearityEntry> {
    vec![
        NonlinearityEntry::quadratic(),
        NonlinearityEntry::pme(2.0),
        NonlinearityEntry::pme(3.0),
        NonlinearityEntry::stefan(1.0, 0.0),
        NonlinearityEntry::stefan(0.5, 0.8),
        NonlinearityEntry::hele_shaw(),
        NonlinearityEntry::hele_shaw_scaled(Coef::from_fn(|(x, _)| 1.0 + x)),
        NonlinearityEntry::sampled(&[(-2.0, 1.5), (-1.0, 0.0), (0.0, 0.0), (1.5, 0.8), (3.0, 3.0)])
            .unwrap(),
        NonlinearityEntry::quadratic().with_weight(Coef::from_fn(|(x, y)| 0.5 + x + y)),
    ]
}

fn cost_catalog() -> Vec<CostEntry> {
    vec![
        CostEntry::quadratic(Coef::constant(1.0)),
        CostEntry::quadratic(Coef::from_fn(|(x, y)| 0.8 + 0.4 * x + 0.2 * y)),
        CostEntry::ppower(1.5, Coef::constant(0.9)),
        CostEntry::ppower(2.5, Coef::from_fn(|(x, _)| 1.2 - 0.5 * x)),
        CostEntry::ppower(3.0, Coef::constant(0.7)),
        CostEntry::ppower(4.0, Coef::constant(1.4)),
    ]
}

const PROBES: [(f64, f64); 3] = [(0.3, 0.7), (0.05, 0.9), (0.75, 0.2)];

// ---------------------------------------------------------------------------
// conjugacy
// ---------------------------------------------------------------------------

fn conjugacy() -> Vec<CheckRow> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    for entry in density_catalog() {
        let label = beta_label(&entry);

        // Fenchel–Young inequality on random (r, s)
        let mut worst = f64::INFINITY;
        for i in 0..2_000 {
            let pos = PROBES[i % PROBES.len()];
            let r = rng.gen_range(-10.0..10.0);
            let s = rng.gen_range(-10.0..10.0);
            let b = entry.eval(pos, r);
            if b.is_finite() {
                worst = worst.min(b + entry.conj(pos, s) - r * s);
            }
        }
        rows.push(CheckRow::new(
            format!("fenchel-young, {label}"),
            worst >= -1e-9,
            format!("min margin {worst:.3e} (needs ≥ -1e-9)"),
        ));

        // equality at subgradient selections r ∈ ∂β*(s)
        let mut tight = 0.0f64;
        for i in 0..1_000 {
            let pos = PROBES[i % PROBES.len()];
            let s = rng.gen_range(-10.0..10.0);
            let iv = entry.conj_subgrad(pos, s);
            for r in [iv.lo, iv.hi, 0.5 * (iv.lo + iv.hi)] {
                if r.is_finite() {
                    let gap = entry.eval(pos, r) + entry.conj(pos, s) - r * s;
                    tight = tight.max(gap.abs() / (1.0 + (r * s).abs()));
                }
            }
        }
        rows.push(CheckRow::new(
            format!("graph tightness, {label}"),
            tight <= 1e-7,
            format!("max relative gap {tight:.3e} (needs ≤ 1e-7)"),
        ));

        // Moreau identity between the two prox maps
        let mut moreau = 0.0f64;
        for i in 0..1_000 {
            let pos = PROBES[i % PROBES.len()];
            let lam = 10f64.powf(rng.gen_range(-3.0..3.0));
            let s = rng.gen_range(-10.0..10.0);
            let lhs = entry.prox(pos, lam, s) + lam * entry.prox_conj(pos, 1.0 / lam, s / lam);
            moreau = moreau.max((lhs - s).abs() / (1.0 + s.abs()));
        }
        rows.push(CheckRow::new(
            format!("moreau identity, {label}"),
            moreau <= 1e-8,
            format!("max relative defect {moreau:.3e} (needs ≤ 1e-8)"),
        ));
    }

    for cost in cost_catalog() {
        let label = cost_label(&cost);

        let mut worst = f64::INFINITY;
        for i in 0..2_000 {
            let pos = PROBES[i % PROBES.len()];
            let a = [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)];
            let b = [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)];
            worst =
                worst.min(cost.eval(pos, &b) + cost.conj(pos, &a) - (a[0] * b[0] + a[1] * b[1]));
        }
        rows.push(CheckRow::new(
            format!("fenchel-young, cost {label}"),
            worst >= -1e-9,
            format!("min margin {worst:.3e} (needs ≥ -1e-9)"),
        ));

        let mut tight = 0.0f64;
        for i in 0..1_000 {
            let pos = PROBES[i % PROBES.len()];
            let a = [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)];
            let b = cost.conj_grad(pos, &a);
            let pairing = a[0] * b[0] + a[1] * b[1];
            let gap = cost.eval(pos, &b) + cost.conj(pos, &a) - pairing;
            tight = tight.max(gap.abs() / (1.0 + pairing.abs()));
        }
        rows.push(CheckRow::new(
            format!("gradient tightness, cost {label}"),
            tight <= 1e-7,
            format!("max relative gap {tight:.3e} (needs ≤ 1e-7)"),
        ));

        let mut moreau = 0.0f64;
        for i in 0..1_000 {
            let pos = PROBES[i % PROBES.len()];
            let lam = 10f64.powf(rng.gen_range(-2.0..2.0));
            let a = rng.gen_range(0.0..10.0);
            let u = cost.prox_mag(pos, lam, a);
            // the conjugate prox via Moreau must reproduce a
            let v = (a - u) / lam;
            let defect = (lam * v + cost.conj_grad_mag(pos, v) - a).abs();
            moreau = moreau.max(defect / (1.0 + a));
        }
        rows.push(CheckRow::new(
            format!("prox optimality, cost {label}"),
            moreau <= 1e-8,
            format!("max relative defect {moreau:.3e} (needs ≤ 1e-8)"),
        ));
    }

    rows
}

// ---------------------------------------------------------------------------
// adjointness
// ---------------------------------------------------------------------------

fn adjointness() -> Vec<CheckRow> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(22);

    let mut grids: Vec<(String, Grid)> = Vec::new();
    for nx in [4usize, 16, 64] {
        let g = build_grid(
            1,
            &[nx],
            &[1.7],
            &[(Side::Left, BoundaryKind::Neumann), (Side::Right, BoundaryKind::Dirichlet)],
        )
        .unwrap();
        grids.push((format!("1d nx={nx}"), g));
    }
    for (nx, ny) in [(8usize, 6usize), (16, 16), (64, 64)] {
        let g = build_grid(
            2,
            &[nx, ny],
            &[2.0, 1.0],
            &[
                (Side::Left, BoundaryKind::Dirichlet),
                (Side::Right, BoundaryKind::Neumann),
                (Side::Bottom, BoundaryKind::Neumann),
                (Side::Top, BoundaryKind::Dirichlet),
            ],
        )
        .unwrap();
        grids.push((format!("2d {nx}x{ny}"), g));
    }

    for (label, grid) in &grids {
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let eta: CellField = (0..grid.n_cells()).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let phi: Vec<f64> = (0..grid.n_faces()).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mut g = grid.zeros_faces();
            for &f in grid.dirichlet_faces() {
                g[f] = rng.gen_range(-5.0..5.0);
            }
            let defect = green_defect(grid, &eta, &phi, &g).unwrap();

            let grad = gradient(grid, &eta, &g).unwrap();
            let div = divergence(grid, &phi).unwrap();
            let mut scale = 0.0;
            for f in 0..grid.n_faces() {
                scale += (grad[f] * phi[f]).abs() * grid.face_weight(f);
            }
            let wc = grid.cell_weight();
            for c in 0..grid.n_cells() {
                scale += (eta[c] * div[c]).abs() * wc;
            }
            for &f in grid.dirichlet_faces() {
                scale += (phi[f] * g[f]).abs() * grid.face_area(f);
            }
            for &f in grid.neumann_faces() {
                scale += (phi[f] * eta[grid.face(f).adjacent()]).abs() * grid.face_area(f);
            }
            worst = worst.max(defect.abs() / scale.max(1.0));
        }
        rows.push(CheckRow::new(
            format!("green identity, {label}"),
            worst <= 1e-12,
            format!("max defect/scale {worst:.3e} (needs ≤ 1e-12)"),
        ));
    }

    rows
}

// ---------------------------------------------------------------------------
// duality
// ---------------------------------------------------------------------------

fn rel_gap(pd: &ProblemData, sol: &nldiff::saddle::SaddleSolution) -> (f64, f64) {
    let wc = pd.grid.cell_weight();
    let mu_norm = pd.mu.iter().map(|x| x * x * wc).sum::<f64>().sqrt();
    let gap = sol.gap.abs() / (1.0 + sol.primal_value.abs().max(sol.dual_value.abs()));
    let feas = sol.feasibility_residual / (1.0 + mu_norm);
    (gap, feas)
}

fn inflow_fixture() -> ProblemData {
    let grid = build_grid(
        1,
        &[32],
        &[1.0],
        &[(Side::Left, BoundaryKind::Neumann), (Side::Right, BoundaryKind::Dirichlet)],
    )
    .unwrap();
    let bdata = BoundaryData::from_fns(&grid, |_| 0.0, |_| 1.0);
    ProblemData::new(
        grid.clone(),
        bdata,
        grid.zeros_cells(),
        grid.zeros_faces(),
        0.0,
        1.0,
        NonlinearityEntry::quadratic(),
        CostEntry::quadratic(Coef::constant(1.0)),
    )
    .unwrap()
}

fn random_instance(rng: &mut ChaCha8Rng, inst: usize, beta: &NonlinearityEntry) -> ProblemData {
    let grid = if inst % 2 == 0 {
        let b = loop {
            let pick = |r: &mut ChaCha8Rng| {
                if r.gen_bool(0.5) {
                    BoundaryKind::Dirichlet
                } else {
                    BoundaryKind::Neumann
                }
            };
            let (l, r2) = (pick(rng), pick(rng));
            if l == BoundaryKind::Dirichlet || r2 == BoundaryKind::Dirichlet {
                break [(Side::Left, l), (Side::Right, r2)];
            }
        };
        build_grid(1, &[10], &[1.3], &b).unwrap()
    } else {
        let b = loop {
            let mut labels = [
                (Side::Left, BoundaryKind::Neumann),
                (Side::Right, BoundaryKind::Neumann),
                (Side::Bottom, BoundaryKind::Neumann),
                (Side::Top, BoundaryKind::Neumann),
            ];
            let mut any = false;
            for l in labels.iter_mut() {
                if rng.gen_bool(0.5) {
                    l.1 = BoundaryKind::Dirichlet;
                    any = true;
                }
            }
            if any {
                break labels;
            }
        };
        build_grid(2, &[4, 3], &[1.0, 0.8], &b).unwrap()
    };
    let mut bdata = BoundaryData::zeros(&grid);
    for &f in grid.dirichlet_faces() {
        bdata.g[f] = rng.gen_range(-0.8..0.8);
    }
    for &f in grid.neumann_faces() {
        bdata.pi[f] = rng.gen_range(-0.6..0.6);
    }
    let mu: CellField = (0..grid.n_cells()).map(|_| rng.gen_range(-1.0..1.2)).collect();
    let chi: Vec<f64> = (0..grid.n_faces()).map(|_| rng.gen_range(-0.4..0.4)).collect();
    let cost = if inst % 2 == 0 {
        CostEntry::quadratic(Coef::constant(1.0))
    } else {
        CostEntry::ppower(1.5, Coef::constant(0.9))
    };
    let (alpha, tau) = if inst < 3 { (1.0, rng.gen_range(0.1..0.9)) } else { (0.0, 1.0) };
    ProblemData::new(grid, bdata, mu, chi, alpha, tau, beta.clone(), cost).unwrap()
}

fn duality() -> Vec<CheckRow> {
    let mut rows = Vec::new();

    let pd = inflow_fixture();
    match solve_pd(&pd, &SolverParams::with_tol(1e-8)) {
        Ok(sol) => {
            let (gap, feas) = rel_gap(&pd, &sol);
            rows.push(CheckRow::new(
                "inflow fixture, certified gap",
                gap <= 1e-8 && feas <= 1e-8,
                format!("relative gap {gap:.3e}, feasibility {feas:.3e} (needs ≤ 1e-8)"),
            ));
            let err = (sol.primal_value - 0.5).abs();
            rows.push(CheckRow::new(
                "inflow fixture, closed-form value 1/2",
                err <= 1e-6,
                format!("|primal - 0.5| = {err:.3e} (needs ≤ 1e-6)"),
            ));
        }
        Err(e) => {
            rows.push(CheckRow::new("inflow fixture, certified gap", false, e.to_string()));
        }
    }

    let betas = [
        NonlinearityEntry::quadratic(),
        NonlinearityEntry::pme(2.0),
        NonlinearityEntry::stefan(0.7, 0.4),
        NonlinearityEntry::hele_shaw(),
        NonlinearityEntry::sampled(&[(-2.0, 1.5), (-1.0, 0.0), (0.0, 0.0), (1.5, 0.8), (3.0, 3.0)])
            .unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for beta in &betas {
        let mut worst = 0.0f64;
        let mut fail: Option<String> = None;
        for inst in 0..6 {
            let pd = random_instance(&mut rng, inst, beta);
            let mut params = SolverParams::with_tol(1e-8);
            params.max_iters = 2_000_000;
            match solve_pd(&pd, &params) {
                Ok(sol) => {
                    let (gap, feas) = rel_gap(&pd, &sol);
                    worst = worst.max(gap.max(feas));
                }
                Err(e) => fail = Some(format!("instance {inst}: {e}")),
            }
        }
        let label = beta_label(beta);
        match fail {
            None => rows.push(CheckRow::new(
                format!("randomized instances, {label}"),
                worst <= 1e-8,
                format!("worst certificate {worst:.3e} (needs ≤ 1e-8)"),
            )),
            Some(msg) => rows.push(CheckRow::new(
                format!("randomized instances, {label}"),
                false,
                msg,
            )),
        }
    }

    rows
}

// ---------------------------------------------------------------------------
// oracle-equivalence
// ---------------------------------------------------------------------------

fn linf_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs()))
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

fn mixed_quadratic_problem(nx: usize, ny: usize) -> ProblemData {
    let grid = if ny == 0 {
        build_grid(
            1,
            &[nx],
            &[1.0],
            &[(Side::Left, BoundaryKind::Dirichlet), (Side::Right, BoundaryKind::Neumann)],
        )
        .unwrap()
    } else {
        build_grid(
            2,
            &[nx, ny],
            &[1.0, 1.0],
            &[
                (Side::Left, BoundaryKind::Dirichlet),
                (Side::Right, BoundaryKind::Neumann),
                (Side::Bottom, BoundaryKind::Dirichlet),
                (Side::Top, BoundaryKind::Neumann),
            ],
        )
        .unwrap()
    };
    let bdata = BoundaryData::from_fns(&grid, |(x, y)| 0.3 * x - 0.1 * y, |(_, y)| 0.2 + y);
    let mu: CellField = (0..grid.n_cells())
        .map(|c| {
            let (x, y) = grid.cell_pos(c);
            1.0 + 0.5 * (2.0 * x).sin() + 0.3 * y
        })
        .collect();
    let chi: Vec<f64> = (0..grid.n_faces())
        .map(|f| {
            let (x, y) = grid.face_pos(f);
            0.1 * (x - y)
        })
        .collect();
    ProblemData::new(
        grid,
        bdata,
        mu,
        chi,
        1.0,
        0.7,
        NonlinearityEntry::quadratic(),
        CostEntry::quadratic(Coef::constant(1.0)),
    )
    .unwrap()
}

fn pme_step_problem() -> ProblemData {
    let grid = build_grid(
        1,
        &[16],
        &[6.0],
        &[(Side::Left, BoundaryKind::Dirichlet), (Side::Right, BoundaryKind::Dirichlet)],
    )
    .unwrap();
    let mu: CellField = (0..grid.n_cells())
        .map(|c| 0.05 + oracle::barenblatt(0.5, grid.cell_pos(c).0 - 3.0, 2.0))
        .collect();
    let bdata = BoundaryData::zeros(&grid);
    ProblemData::new(
        grid.clone(),
        bdata,
        mu,
        grid.zeros_faces(),
        1.0,
        0.05,
        NonlinearityEntry::pme(2.0),
        CostEntry::quadratic(Coef::constant(1.0)),
    )
    .unwrap()
}

fn oracle_equivalence() -> Vec<CheckRow> {
    let mut rows = Vec::new();

    for (nx, ny) in [(16usize, 0usize), (8, 8)] {
        let pd = mixed_quadratic_problem(nx, ny);
        let label = if ny == 0 { format!("quadratic vs direct solve, 1d nx={nx}") } else { format!("quadratic vs direct solve, 2d {nx}x{ny}") };
        let direct = oracle::direct_linear_solve(&pd).unwrap();
        let mut params = SolverParams::with_tol(1e-12);
        params.max_iters = 2_000_000;
        match solve_pd(&pd, &params) {
            Ok(sol) => {
                let scale = 1.0 + linf(&direct.rho);
                let dist = linf_diff(&sol.rho, &direct.rho) / scale;
                rows.push(CheckRow::new(
                    label,
                    dist <= 1e-6,
                    format!("relative sup distance {dist:.3e} (needs ≤ 1e-6)"),
                ));
            }
            Err(e) => rows.push(CheckRow::new(label, false, e.to_string())),
        }
    }

    let pd = pme_step_problem();
    let newton = solve_newton(&pd, &SolverParams::with_tol(1e-12)).unwrap();
    let mut params = SolverParams::with_tol(1e-12);
    params.max_iters = 2_000_000;
    match solve_pd(&pd, &params) {
        Ok(sol) => {
            let scale = 1.0 + linf(&newton.rho);
            let dist = linf_diff(&sol.rho, &newton.rho) / scale;
            rows.push(CheckRow::new(
                "porous medium vs newton solve, 1d nx=16",
                dist <= 1e-5,
                format!("relative sup distance {dist:.3e} (needs ≤ 1e-5)"),
            ));
        }
        Err(e) => rows.push(CheckRow::new(
            "porous medium vs newton solve, 1d nx=16",
            false,
            e.to_string(),
        )),
    }
    let cross = oracle::pme_newton_step(&pd).unwrap();
    let agree = linf_diff(&cross.rho, &newton.rho) / (1.0 + linf(&newton.rho));
    rows.push(CheckRow::new(
        "two newton formulations agree",
        agree <= 1e-7,
        format!("relative sup distance {agree:.3e} (needs ≤ 1e-7)"),
    ));

    rows
}

// ---------------------------------------------------------------------------
// dissipation
// ---------------------------------------------------------------------------

fn dissipation() -> Vec<CheckRow> {
    let mut rows = Vec::new();

    // zero-data porous-medium decay: energy must be exactly nonincreasing
    let grid = build_grid(
        1,
        &[32],
        &[6.0],
        &[(Side::Left, BoundaryKind::Dirichlet), (Side::Right, BoundaryKind::Dirichlet)],
    )
    .unwrap();
    let rho0: CellField = (0..grid.n_cells())
        .map(|c| oracle::barenblatt(0.5, grid.cell_pos(c).0 - 3.0, 2.0))
        .collect();
    let mut sc = Scenario::new(
        grid,
        NonlinearityEntry::pme(2.0),
        CostEntry::quadratic(Coef::constant(1.0)),
        rho0,
        0.08,
        0.01,
    );
    sc.solver = SolverParams::with_tol(1e-9);

    match run(&sc) {
        Ok(traj) => {
            let monotone = traj.energy.windows(2).all(|w| w[1] <= w[0]);
            let max_up = traj
                .energy
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::NEG_INFINITY, f64::max);
            rows.push(CheckRow::new(
                "zero-data energy exactly nonincreasing",
                monotone,
                format!("max energy increment {max_up:.3e} (needs ≤ 0)"),
            ));

            let all_ok = traj.dissipation.iter().all(|d| d.2);
            let min_slack = traj
                .dissipation
                .iter()
                .map(|(l, r, _)| (r - l) / (1.0 + l.abs() + r.abs()))
                .fold(f64::INFINITY, f64::min);
            rows.push(CheckRow::new(
                "per-step dissipation inequality",
                all_ok && min_slack >= -1e-8,
                format!("min relative slack {min_slack:.3e} (needs ≥ -1e-8)"),
            ));

            let worst_balance = traj
                .mass_balance
                .iter()
                .enumerate()
                .map(|(i, r)| r / (1.0 + traj.mass[i + 1].abs() + traj.mass[i].abs()))
                .fold(0.0f64, f64::max);
            rows.push(CheckRow::new(
                "per-step mass balance",
                worst_balance <= 1e-6,
                format!("max relative residual {worst_balance:.3e} (needs ≤ 1e-6)"),
            ));
        }
        Err(e) => {
            rows.push(CheckRow::new("zero-data energy exactly nonincreasing", false, e.to_string()))
        }
    }

    // saturation confinement on a forced hele-shaw run
    let grid = build_grid(
        1,
        &[24],
        &[1.0],
        &[(Side::Left, BoundaryKind::Dirichlet), (Side::Right, BoundaryKind::Dirichlet)],
    )
    .unwrap();
    let rho0: CellField = (0..grid.n_cells()).map(|c| 0.5 * grid.cell_pos(c).0).collect();
    let mut sc = Scenario::new(
        grid,
        NonlinearityEntry::hele_shaw(),
        CostEntry::quadratic(Coef::constant(1.0)),
        rho0,
        0.12,
        0.02,
    );
    // forcing strong enough to push cells against the saturation constraint
    sc.source_cell = Some(std::sync::Arc::new(|_t: f64, (x, _): (f64, f64)| 25.0 * (1.0 + x)));
    sc.solver = SolverParams::with_tol(1e-9);
    match run(&sc) {
        Ok(traj) => {
            let peak = traj.states.iter().map(|s| linf(s)).fold(0.0f64, f64::max);
            rows.push(CheckRow::new(
                "hele-shaw saturation bound",
                peak >= 0.99 && peak <= 1.0 + 1e-9,
                format!("max |rho| = {peak:.12} (needs to engage and stay ≤ 1 + 1e-9)"),
            ));
        }
        Err(e) => rows.push(CheckRow::new("hele-shaw saturation bound", false, e.to_string())),
    }

    rows
}
