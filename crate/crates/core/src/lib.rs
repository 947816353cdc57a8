//! Solver library for doubly nonlinear diffusion–transport equations
//!
//!   ∂_t ρ − ∇·(φ + ρV) = f,   φ = ∂F*(x, ∇η),   ρ ∈ ∂β*(x, η),
//!
//! on 1D/2D boxes with mixed Dirichlet (η = g) / Neumann ((φ+χ)·ν = π) boundary
//! conditions. Time stepping is implicit: each step minimizes the internal energy
//! ∫β(x,ρ) plus the work of a flux moving the previous state to the new one, a
//! convex problem solved by a primal-dual (Chambolle–Pock type) iteration and
//! certified a posteriori by its duality gap and Fenchel residuals.
//!
//! Module map:
//! - [`nonlinearity`]: catalog of energy densities β and flux costs F with
//!   conjugates, prox maps, subgradients, and growth-assumption validation.
//! - [`grid`]: staggered cells/faces, discrete gradient/divergence (exact
//!   adjoints including boundary terms), donor-cell advection.
//! - [`saddle`]: one implicit step as a constrained convex program, primal-dual
//!   solver, Newton oracle, optimality residuals.
//! - [`stepper`]: the two evolution algorithms (transport-forcing and
//!   prediction–correction) plus runtime monitors.
//! - [`dualnorm`]: negative-order Sobolev norms via p-Laplacian potentials,
//!   metric increments for descent diagnostics.
//! - [`oracle`]: independent reference computations (brute-force conjugates,
//!   dense linear solves, exact solutions) used by the test suites.

pub mod dualnorm;
pub mod grid;
pub mod nonlinearity;
pub mod oracle;
pub mod saddle;
pub mod stepper;

mod accum;

/// Point in the domain; 1D problems use `(x, 0.0)`.
pub type Position = (f64, f64);

pub use grid::{BoundaryData, CellField, FaceField, Grid, GridError, Side};
pub use nonlinearity::{CostEntry, NonlinearityEntry, SubgradInterval};
pub use saddle::{ProblemData, SaddleError, SaddleSolution, SolverParams};
pub use stepper::{Algorithm, Scenario, StepSolver, StepperError, Trajectory};
