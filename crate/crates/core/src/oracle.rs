//! Independent reference implementations used to cross-check the solvers.
//!
//! Everything here is deliberately written from first principles — brute
//! force where possible, dense linear algebra otherwise — and shares no code
//! with the iterative solvers it certifies. The exact solutions at the bottom
//! (heat kernel mode, porous-medium self-similar profile) anchor convergence
//! studies to closed forms.

use crate::grid::{divergence, gradient, BoundaryKind};
use crate::nonlinearity::{CostKind, NonlinearityKind};
use crate::saddle::{dual_value, primal_value, ProblemData, SaddleSolution};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use std::sync::Mutex;
use std::sync::OnceLock;

#[derive(Debug, Clone, thiserror::Error)]
pub enum OracleError {
    #[error("entry not supported by this oracle: {0}")]
    UnsupportedEntry(String),
    #[error("singular dense system: {0}")]
    SingularSystem(String),
}

/// A scalar function tabulated on a finite set of abscissae.
#[derive(Clone, Debug)]
pub struct SampledFunction {
    pub abscissae: Vec<f64>,
    pub values: Vec<f64>,
}

impl SampledFunction {
    /// Tabulate `f` on `n+1` equally spaced points of [a, b].
    pub fn tabulate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> Self {
        let abscissae: Vec<f64> =
            (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
        let values = abscissae.iter().map(|&x| f(x)).collect();
        Self { abscissae, values }
    }

    pub fn resolution(&self) -> f64 {
        self.abscissae
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0f64, f64::max)
    }
}

/// Brute-force Legendre conjugate sup_r (s·r − f(r)) over the tabulated
/// points; non-finite samples are skipped (they encode +∞). The error against
/// the true conjugate is at most resolution·(|s| + local slope of f).
pub fn conjugate_bruteforce(f: &SampledFunction, s: f64) -> f64 {
    f.abscissae
        .iter()
        .zip(&f.values)
        .filter(|(_, v)| v.is_finite())
        .map(|(&r, &v)| s * r - v)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Dense direct solve of the coupled optimality system when it is linear:
/// α = 1 with quadratic β and quadratic cost (spatial weights allowed). The
/// potential solves a symmetric positive definite system assembled column by
/// column from the grid operators; everything else follows pointwise.
///
/// Supports up to 64² cells (dense factorization); fails with
/// `UnsupportedEntry` outside its scope and `SingularSystem` if the assembled
/// matrix cannot be factorized or the back-substituted residual stays large.
pub fn direct_linear_solve(pd: &ProblemData) -> Result<SaddleSolution, OracleError> {
    if pd.alpha != 1.0 {
        return Err(OracleError::UnsupportedEntry(
            "dense oracle requires alpha = 1".into(),
        ));
    }
    if !matches!(pd.beta.kind, NonlinearityKind::Quadratic) {
        return Err(OracleError::UnsupportedEntry(format!(
            "dense oracle requires quadratic beta, got {:?}",
            pd.beta.kind
        )));
    }
    if !matches!(pd.cost.kind, CostKind::Quadratic) {
        return Err(OracleError::UnsupportedEntry(format!(
            "dense oracle requires quadratic cost, got {:?}",
            pd.cost.kind
        )));
    }
    let n = pd.grid.n_cells();
    if n > 64 * 64 {
        return Err(OracleError::UnsupportedEntry(format!(
            "dense oracle limited to 4096 cells, got {n}"
        )));
    }

    // Optimality in η: η/w_β(x) − μ − τ·D(k·G_g η + ψ₀) = 0 with ψ₀ the data
    // flux (χ off the Neumann boundary, ν·π on it). Affine in η, so assemble
    // A from unit vectors and b from the zero vector.
    let residual = |eta: &[f64]| -> Vec<f64> {
        let grad = gradient(&pd.grid, eta, &pd.bdata.g).expect("sizes fixed");
        let mut flux = pd.data_flux();
        for (f, face) in pd.grid.faces().iter().enumerate() {
            if face.boundary.map(|b| b.kind) != Some(BoundaryKind::Neumann) {
                flux[f] += pd.cost.k_at(pd.grid.face_pos(f)) * grad[f];
            }
        }
        let div = divergence(&pd.grid, &flux).expect("sizes fixed");
        (0..n)
            .map(|c| {
                let wb = pd.beta.weight.eval(pd.grid.cell_pos(c));
                eta[c] / wb - pd.mu[c] - pd.tau_scale * div[c]
            })
            .collect()
    };

    let r0 = residual(&vec![0.0; n]);
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let rj = residual(&e);
        for i in 0..n {
            a[(i, j)] = rj[i] - r0[i];
        }
        e[j] = 0.0;
    }
    let b = DVector::from_iterator(n, r0.iter().map(|&v| -v));

    let lu = a.clone().lu();
    let eta_v = lu
        .solve(&b)
        .ok_or_else(|| OracleError::SingularSystem("dense LU failed".into()))?;
    let eta: Vec<f64> = eta_v.iter().copied().collect();

    let res = residual(&eta);
    let scale = 1.0 + pd.mu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if worst > 1e-11 * scale {
        return Err(OracleError::SingularSystem(format!(
            "back-substituted residual {worst:.3e} exceeds 1e-11·scale"
        )));
    }

    let rho: Vec<f64> = (0..n)
        .map(|c| eta[c] / pd.beta.weight.eval(pd.grid.cell_pos(c)))
        .collect();
    let grad = gradient(&pd.grid, &eta, &pd.bdata.g).expect("sizes fixed");
    let mut phi = pd.grid.zeros_faces();
    for (f, face) in pd.grid.faces().iter().enumerate() {
        phi[f] = match face.boundary.map(|b| b.kind) {
            Some(BoundaryKind::Neumann) => {
                face.boundary.unwrap().nu * pd.bdata.pi[f] - pd.chi[f]
            }
            _ => pd.cost.k_at(pd.grid.face_pos(f)) * grad[f],
        };
    }

    let (primal, feas) = primal_value(pd, &rho, &phi).expect("quadratic domain is all of R");
    let dual = dual_value(pd, &eta);
    Ok(SaddleSolution {
        rho,
        eta,
        phi,
        primal_value: primal,
        dual_value: dual,
        gap: primal - dual,
        feasibility_residual: feas,
        iterations: 0,
    })
}

/// Damped semismooth Newton reference for a porous-medium implicit step:
/// α = 1, β of kind `Pme { m }` (η = w·|ρ|^{m−1}ρ), quadratic cost. Solves
/// F(ρ) = ρ − μ − τ·D(k·G_g(η(ρ)) + data flux) = 0 in the density variable,
/// where the Jacobian I + τ·L_k·diag(w·m·|ρ|^{m−1}) stays nonsingular even at
/// vacuum cells (η′(0) = 0). Entirely independent of the saddle iteration.
pub fn pme_newton_step(pd: &ProblemData) -> Result<SaddleSolution, OracleError> {
    if pd.alpha != 1.0 {
        return Err(OracleError::UnsupportedEntry(
            "newton oracle requires alpha = 1".into(),
        ));
    }
    let m = match pd.beta.kind {
        NonlinearityKind::Pme { m } => m,
        ref k => {
            return Err(OracleError::UnsupportedEntry(format!(
                "newton oracle requires a porous-medium beta, got {k:?}"
            )))
        }
    };
    if !matches!(pd.cost.kind, CostKind::Quadratic) {
        return Err(OracleError::UnsupportedEntry(format!(
            "newton oracle requires quadratic cost, got {:?}",
            pd.cost.kind
        )));
    }
    let n = pd.grid.n_cells();
    if n > 64 * 64 {
        return Err(OracleError::UnsupportedEntry(format!(
            "newton oracle limited to 4096 cells, got {n}"
        )));
    }

    let wbeta: Vec<f64> =
        (0..n).map(|c| pd.beta.weight.eval(pd.grid.cell_pos(c))).collect();
    let eta_of = |rho: &[f64]| -> Vec<f64> {
        (0..n).map(|c| wbeta[c] * rho[c].abs().powf(m - 1.0) * rho[c]).collect()
    };
    let residual = |rho: &[f64]| -> Vec<f64> {
        let eta = eta_of(rho);
        let grad = gradient(&pd.grid, &eta, &pd.bdata.g).expect("sizes fixed");
        let mut flux = pd.data_flux();
        for (f, face) in pd.grid.faces().iter().enumerate() {
            if face.boundary.map(|b| b.kind) != Some(BoundaryKind::Neumann) {
                flux[f] += pd.cost.k_at(pd.grid.face_pos(f)) * grad[f];
            }
        }
        let div = divergence(&pd.grid, &flux).expect("sizes fixed");
        (0..n).map(|c| rho[c] - pd.mu[c] - pd.tau_scale * div[c]).collect()
    };
    let norm_inf = |v: &[f64]| v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let scale = 1.0 + norm_inf(&pd.mu);

    let mut rho = pd.mu.clone();
    let mut res = residual(&rho);
    let zero_g = vec![0.0; pd.grid.n_faces()];
    let mut iters = 0usize;
    while norm_inf(&res) > 1e-12 * scale {
        iters += 1;
        if iters > 200 {
            return Err(OracleError::SingularSystem(format!(
                "newton oracle stalled at residual {:.3e}",
                norm_inf(&res)
            )));
        }
        let etap: Vec<f64> =
            (0..n).map(|c| wbeta[c] * m * rho[c].abs().powf(m - 1.0)).collect();
        let mut jmat = DMatrix::<f64>::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = etap[j];
            let grad = gradient(&pd.grid, &e, &zero_g).expect("sizes fixed");
            let mut flux = pd.grid.zeros_faces();
            for (f, face) in pd.grid.faces().iter().enumerate() {
                if face.boundary.map(|b| b.kind) != Some(BoundaryKind::Neumann) {
                    flux[f] = pd.cost.k_at(pd.grid.face_pos(f)) * grad[f];
                }
            }
            let div = divergence(&pd.grid, &flux).expect("sizes fixed");
            for i in 0..n {
                jmat[(i, j)] =
                    (if i == j { 1.0 } else { 0.0 }) - pd.tau_scale * div[i];
            }
            e[j] = 0.0;
        }
        let rhs = DVector::from_iterator(n, res.iter().map(|&v| -v));
        let delta = jmat
            .lu()
            .solve(&rhs)
            .ok_or_else(|| OracleError::SingularSystem("newton Jacobian LU failed".into()))?;

        let r0 = norm_inf(&res);
        let mut lambda = 1.0f64;
        loop {
            let trial: Vec<f64> =
                (0..n).map(|c| rho[c] + lambda * delta[c]).collect();
            let rt = residual(&trial);
            if norm_inf(&rt) <= (1.0 - 1e-4 * lambda) * r0 {
                rho = trial;
                res = rt;
                break;
            }
            lambda *= 0.5;
            if lambda < 1e-12 {
                return Err(OracleError::SingularSystem(
                    "newton line search exhausted".into(),
                ));
            }
        }
    }

    let eta = eta_of(&rho);
    let grad = gradient(&pd.grid, &eta, &pd.bdata.g).expect("sizes fixed");
    let mut phi = pd.grid.zeros_faces();
    for (f, face) in pd.grid.faces().iter().enumerate() {
        phi[f] = match face.boundary.map(|b| b.kind) {
            Some(BoundaryKind::Neumann) => {
                face.boundary.unwrap().nu * pd.bdata.pi[f] - pd.chi[f]
            }
            _ => pd.cost.k_at(pd.grid.face_pos(f)) * grad[f],
        };
    }
    let (primal, feas) = primal_value(pd, &rho, &phi)
        .expect("porous-medium density is finite everywhere");
    let dual = dual_value(pd, &eta);
    Ok(SaddleSolution {
        rho,
        eta,
        phi,
        primal_value: primal,
        dual_value: dual,
        gap: primal - dual,
        feasibility_residual: feas,
        iterations: iters,
    })
}

/// Lowest Dirichlet mode of the heat equation on (0,1): u(t,x) = e^{−π²t} sin(πx).
pub fn heat_exact(t: f64, x: f64) -> f64 {
    (-std::f64::consts::PI.powi(2) * t).exp() * (std::f64::consts::PI * x).sin()
}

fn barenblatt_cache() -> &'static Mutex<HashMap<u64, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Composite Simpson rule on [a, b] with n (even) subintervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Normalization constant C of the unit-mass self-similar porous-medium
/// profile, determined by one-dimensional numeric integration and cached.
///
/// The profile is ρ(t,x) = t^{−a}(C − κ x² t^{−2a})₊^{1/(m−1)} with
/// a = 1/(m+1) and κ = a(m−1)/(2m); unit mass forces
/// C^{1/(m−1)+1/2} = √κ / ∫_{−1}^{1}(1−z²)^{1/(m−1)} dz.
pub fn barenblatt_mass_constant(m: f64) -> f64 {
    assert!(m > 1.0, "self-similar profile needs m > 1");
    let key = m.to_bits();
    if let Some(&c) = barenblatt_cache().lock().unwrap().get(&key) {
        return c;
    }
    let a = 1.0 / (m + 1.0);
    let kappa = a * (m - 1.0) / (2.0 * m);
    let expo = 1.0 / (m - 1.0);
    // The integrand has a mild endpoint singularity in its derivatives for
    // m > 2; Simpson at this resolution still clears 1e−10 for moderate m.
    let im = simpson(|z| (1.0 - z * z).max(0.0).powf(expo), -1.0, 1.0, 200_000);
    let c = (kappa.sqrt() / im).powf(1.0 / (expo + 0.5));
    barenblatt_cache().lock().unwrap().insert(key, c);
    c
}

/// Unit-mass self-similar porous-medium solution centered at x = 0.
pub fn barenblatt(t: f64, x: f64, m: f64) -> f64 {
    assert!(t > 0.0);
    let a = 1.0 / (m + 1.0);
    let kappa = a * (m - 1.0) / (2.0 * m);
    let c = barenblatt_mass_constant(m);
    let s = c - kappa * x * x * t.powf(-2.0 * a);
    if s <= 0.0 {
        0.0
    } else {
        t.powf(-a) * s.powf(1.0 / (m - 1.0))
    }
}

/// Radius of the support of [`barenblatt`] at time t: (C/κ)^{1/2} t^{1/(m+1)}.
pub fn barenblatt_support_radius(t: f64, m: f64) -> f64 {
    let a = 1.0 / (m + 1.0);
    let kappa = a * (m - 1.0) / (2.0 * m);
    (barenblatt_mass_constant(m) / kappa).sqrt() * t.powf(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::{Coef, CostEntry, NonlinearityEntry};
    use crate::Position;

    const O: Position = (0.4, 0.6);

    #[test]
    fn bruteforce_conjugate_matches_closed_forms() {
        // β = r²/2 tabulated at resolution 2e−3: β*(s) = s²/2 within
        // 2× the tabulation resolution (times the |s| prefactor).
        let tab = SampledFunction::tabulate(|r| 0.5 * r * r, -12.0, 12.0, 12_000);
        let res = tab.resolution();
        for s in [-3.0, -0.7, 0.0, 0.31, 2.9] {
            let brute = conjugate_bruteforce(&tab, s);
            let exact = 0.5 * s * s;
            assert!(
                (brute - exact).abs() <= 2.0 * res * (1.0 + s.abs().max(12.0)),
                "s={s}: {brute} vs {exact}"
            );
        }

        // the porous-medium conjugate, against the catalog entry
        let entry = NonlinearityEntry::pme(2.0);
        let tab = SampledFunction::tabulate(|r| entry.eval(O, r), -12.0, 12.0, 12_000);
        for s in [-2.0, -0.5, 0.4, 1.0, 3.0] {
            let brute = conjugate_bruteforce(&tab, s);
            let exact = entry.conj(O, s);
            assert!(
                (brute - exact).abs() <= 2.0 * tab.resolution() * (1.0 + s.abs().max(12.0)),
                "s={s}: {brute} vs {exact}"
            );
        }

        // indicator entries tabulate as +∞ outside the domain
        let hs = NonlinearityEntry::hele_shaw();
        let tab = SampledFunction::tabulate(|r| hs.eval(O, r), -2.0, 2.0, 4_000);
        for s in [-1.5, 0.0, 0.8, 2.0] {
            let brute = conjugate_bruteforce(&tab, s);
            assert!((brute - s.abs()).abs() <= 2.0 * tab.resolution() * (1.0 + s.abs()));
        }
    }

    #[test]
    fn heat_mode_values() {
        assert_eq!(heat_exact(0.0, 0.5), 1.0);
        // e^{−π²/10} at the midpoint
        assert!((heat_exact(0.1, 0.5) - 0.3727078388534379).abs() < 1e-15);
        assert!(heat_exact(0.3, 0.0).abs() < 1e-15);
    }

    #[test]
    fn self_similar_profile_constants() {
        // m = 2 has the closed form C = 3^{1/3}/4.
        let c = barenblatt_mass_constant(2.0);
        assert!((c - 0.3605623925768521).abs() < 1e-10, "C = {c}");
        let edge = barenblatt_support_radius(1.0, 2.0);
        assert!((edge - 2.0800838230519041).abs() < 1e-9, "edge = {edge}");
        // profile vanishes at and beyond the edge
        assert_eq!(barenblatt(1.0, edge + 1e-9, 2.0), 0.0);
        assert!(barenblatt(1.0, edge - 1e-3, 2.0) > 0.0);
    }

    #[test]
    fn self_similar_profile_conserves_mass() {
        for &t in &[0.5, 1.0, 2.0] {
            let r = barenblatt_support_radius(t, 2.0) + 0.5;
            let mass = simpson(|x| barenblatt(t, x, 2.0), -r, r, 400_000);
            assert!((mass - 1.0).abs() < 1e-8, "t={t}: mass {mass}");
        }
    }

    #[test]
    fn dense_solve_rejects_nonlinear_entries() {
        let grid = crate::grid::build_grid(
            1,
            &[4],
            &[1.0],
            &[
                (crate::grid::Side::Left, BoundaryKind::Dirichlet),
                (crate::grid::Side::Right, BoundaryKind::Dirichlet),
            ],
        )
        .unwrap();
        let bdata = crate::grid::BoundaryData::zeros(&grid);
        let pd = ProblemData::new(
            grid,
            bdata,
            vec![0.0; 4],
            vec![0.0; 5],
            1.0,
            1.0,
            NonlinearityEntry::pme(2.0),
            CostEntry::quadratic(Coef::constant(1.0)),
        )
        .unwrap();
        assert!(matches!(
            direct_linear_solve(&pd),
            Err(OracleError::UnsupportedEntry(_))
        ));
    }

    #[test]
    fn newton_step_rejects_unsupported_entries() {
        let grid = crate::grid::build_grid(
            1,
            &[4],
            &[1.0],
            &[
                (crate::grid::Side::Left, BoundaryKind::Dirichlet),
                (crate::grid::Side::Right, BoundaryKind::Dirichlet),
            ],
        )
        .unwrap();
        let bdata = crate::grid::BoundaryData::zeros(&grid);
        let pd = ProblemData::new(
            grid,
            bdata,
            vec![0.0; 4],
            vec![0.0; 5],
            1.0,
            1.0,
            NonlinearityEntry::quadratic(),
            CostEntry::quadratic(Coef::constant(1.0)),
        )
        .unwrap();
        assert!(matches!(
            pme_newton_step(&pd),
            Err(OracleError::UnsupportedEntry(_))
        ));
    }

    #[test]
    fn newton_step_agrees_with_the_saddle_solver() {
        // one implicit porous-medium step from a compact bump, two completely
        // independent solvers
        let nx = 12;
        let grid = crate::grid::build_grid(
            1,
            &[nx],
            &[6.0],
            &[
                (crate::grid::Side::Left, BoundaryKind::Dirichlet),
                (crate::grid::Side::Right, BoundaryKind::Dirichlet),
            ],
        )
        .unwrap();
        let bdata = crate::grid::BoundaryData::zeros(&grid);
        let mu: Vec<f64> =
            (0..nx).map(|c| barenblatt(0.5, grid.cell_pos(c).0 - 3.0, 2.0)).collect();
        let pd = ProblemData::new(
            grid.clone(),
            bdata,
            mu.clone(),
            vec![0.0; grid.n_faces()],
            1.0,
            0.05,
            NonlinearityEntry::pme(2.0),
            CostEntry::quadratic(Coef::constant(1.0)),
        )
        .unwrap();

        let newton = pme_newton_step(&pd).unwrap();
        let scale = 1.0 + mu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(newton.feasibility_residual <= 1e-11 * scale);
        assert!(
            newton.gap.abs() <= 1e-10 * scale,
            "newton certificates should be tight, gap {}",
            newton.gap
        );

        let mut params = crate::saddle::SolverParams::with_tol(1e-13);
        params.max_iters = 2_000_000;
        let pdsol = crate::saddle::solve_pd(&pd, &params).unwrap();
        let worst = newton
            .rho
            .iter()
            .zip(&pdsol.rho)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst <= 1e-5 * scale, "disagreement {worst:.3e}");
    }
}
