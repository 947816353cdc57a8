//! Catalog of internal-energy densities β(x,·) and flux costs F(x,·).
//!
//! Each β entry is a convex, lower-semicontinuous function with β(x,0)=0 whose
//! Legendre conjugate β*(x,·) is finite on all of ℝ; the pair comes with both
//! prox maps and the (possibly multivalued) subgradient ∂β*, which is what the
//! evolution equation couples to: ρ ∈ ∂β*(x,η). Flux costs F are even, convex,
//! with p'-growth; the solver touches them only through F, F*, ∂F*, and prox_F.
//!
//! Spatial dependence is a single positive weight a(x): β(x,r) = a(x)·β₀(r).
//! Conjugacy then gives β*(x,s) = a(x)·β₀*(s/a(x)) and ∂β*(x,s) = ∂β₀*(s/a(x)),
//! so for the saturation (Hele-Shaw) entry the density relation is exactly
//! ρ ∈ Sign(η/a(x)) while β itself stays the indicator of [−1,1]. Both prox
//! maps reduce to the unweighted ones with rescaled step/argument.
//!
//! Catalog (unweighted forms):
//!
//! | kind           | β(r)                              | β*(s)                          |
//! |----------------|-----------------------------------|--------------------------------|
//! | quadratic      | r²/2                              | s²/2                           |
//! | pme{m}         | |r|^{m+1}/(m+1)                   | m/(m+1)·|s|^{(m+1)/m}          |
//! | stefan{a1,a2}  | ((r−a1)⁺)²/2 + ((r+a2)⁻)²/2       | s²/2 + a1·s (s≥0), s²/2 − a2·s |
//! | heleshaw       | indicator of [−1,1]               | |s|                            |
//! | sampled        | piecewise linear on user vertices | max_i (s·r_i − β_i), exact     |

use crate::Position;
use std::fmt;
use std::sync::Arc;

/// Absolute tolerance of every scalar prox bisection. Prox maps sit in the
/// innermost solver loop; a fixed tight tolerance keeps runs reproducible.
pub const PROX_TOL: f64 = 1e-12;

/// Spatially varying positive coefficient.
#[derive(Clone)]
pub enum Coef {
    Const(f64),
    Field(Arc<dyn Fn(Position) -> f64 + Send + Sync>),
}

impl Coef {
    pub fn constant(c: f64) -> Self {
        Coef::Const(c)
    }

    pub fn from_fn(f: impl Fn(Position) -> f64 + Send + Sync + 'static) -> Self {
        Coef::Field(Arc::new(f))
    }

    pub fn eval(&self, pos: Position) -> f64 {
        match self {
            Coef::Const(c) => *c,
            Coef::Field(f) => f(pos),
        }
    }
}

impl fmt::Debug for Coef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coef::Const(c) => write!(f, "Coef::Const({c})"),
            Coef::Field(_) => write!(f, "Coef::Field(..)"),
        }
    }
}

/// Closed interval of subgradient values of a maximal monotone graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubgradInterval {
    pub lo: f64,
    pub hi: f64,
}

impl SubgradInterval {
    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    /// Distance from `r` to the interval (0 if inside).
    pub fn dist(&self, r: f64) -> f64 {
        (self.lo - r).max(r - self.hi).max(0.0)
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum NonlinearityError {
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
    #[error("assumption {assumption} violated: {witness}")]
    ValidationFailure { assumption: String, witness: String },
}

/// Piecewise-linear convex density on a finite vertex grid; +∞ outside.
#[derive(Clone, Debug)]
pub struct SampledBeta {
    /// Strictly increasing vertex abscissae; domain of β is [r.first(), r.last()].
    r: Vec<f64>,
    /// β values at the vertices.
    v: Vec<f64>,
    /// Segment slopes, nondecreasing (convexity).
    slope: Vec<f64>,
}

impl SampledBeta {
    fn new(points: &[(f64, f64)]) -> Result<Self, NonlinearityError> {
        if points.len() < 2 {
            return Err(NonlinearityError::InvalidEntry(
                "sampled entry needs at least 2 vertices".into(),
            ));
        }
        let r: Vec<f64> = points.iter().map(|p| p.0).collect();
        let v: Vec<f64> = points.iter().map(|p| p.1).collect();
        if r.windows(2).any(|w| w[1] <= w[0]) {
            return Err(NonlinearityError::InvalidEntry(
                "sampled abscissae must be strictly increasing".into(),
            ));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(NonlinearityError::InvalidEntry(
                "sampled values must be finite".into(),
            ));
        }
        let slope: Vec<f64> = (1..r.len())
            .map(|i| (v[i] - v[i - 1]) / (r[i] - r[i - 1]))
            .collect();
        if slope.windows(2).any(|w| w[1] < w[0] - 1e-12) {
            return Err(NonlinearityError::InvalidEntry(
                "sampled values fail the convexity (slope monotonicity) test".into(),
            ));
        }
        if !(r[0] <= 0.0 && *r.last().unwrap() >= 0.0) {
            return Err(NonlinearityError::InvalidEntry(
                "sampled domain must contain 0 (β(x,0)=0 normalization)".into(),
            ));
        }
        Ok(Self { r, v, slope })
    }

    fn eval(&self, x: f64) -> f64 {
        if x < self.r[0] || x > *self.r.last().unwrap() {
            return f64::INFINITY;
        }
        let i = match self.r.binary_search_by(|a| a.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.v[i],
            Err(i) => i, // x lies in segment (r[i-1], r[i])
        };
        self.v[i - 1] + self.slope[i - 1] * (x - self.r[i - 1])
    }

    /// Exact conjugate of a piecewise-linear function: the sup is attained at a
    /// vertex, so β*(s) = max_i (s·r_i − β_i). This is the cached-conjugate
    /// representation; the brute-force oracle reproduces it on any refinement
    /// of the same vertex set.
    fn conj(&self, s: f64) -> f64 {
        self.r
            .iter()
            .zip(&self.v)
            .map(|(&ri, &vi)| s * ri - vi)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// ∂β*(s): {r_0} below the first slope, the segment's vertex strictly
    /// between consecutive slopes, the full segment at a slope value.
    fn conj_subgrad(&self, s: f64) -> SubgradInterval {
        let n = self.slope.len();
        if s < self.slope[0] {
            return SubgradInterval::point(self.r[0]);
        }
        if s > self.slope[n - 1] {
            return SubgradInterval::point(self.r[n]);
        }
        // first segment whose slope is ≥ s
        let mut lo = self.r[0];
        let mut hi = self.r[n];
        for i in 0..n {
            if self.slope[i] < s {
                continue;
            }
            if self.slope[i] > s {
                lo = self.r[i];
                hi = self.r[i];
                break;
            }
            // slope == s: the whole segment [r_i, r_{i+1}] maximizes, and
            // consecutive equal slopes extend the interval.
            lo = self.r[i];
            let mut j = i;
            while j < n && self.slope[j] == s {
                j += 1;
            }
            hi = self.r[j];
            break;
        }
        SubgradInterval { lo, hi }
    }

    /// prox_{λβ}: scan segments and vertices of the monotone graph r + λ∂β(r) ∋ s.
    fn prox(&self, lambda: f64, s: f64) -> f64 {
        let n = self.slope.len();
        if s <= self.r[0] + lambda * self.slope[0] {
            return self.r[0];
        }
        if s >= self.r[n] + lambda * self.slope[n - 1] {
            return self.r[n];
        }
        for i in 0..n {
            // vertex r_i (i ≥ 1): matches if s ∈ [r_i + λ slope_{i-1}, r_i + λ slope_i]
            if i > 0 && s <= self.r[i] + lambda * self.slope[i] {
                return self.r[i];
            }
            // interior of segment i
            let x = s - lambda * self.slope[i];
            if x > self.r[i] && x < self.r[i + 1] {
                return x;
            }
        }
        *self.r.last().unwrap()
    }
}

#[derive(Clone, Debug)]
pub enum NonlinearityKind {
    /// β(r) = r²/2, the linear-diffusion density (η = ρ).
    Quadratic,
    /// β(r) = |r|^{m+1}/(m+1): porous-medium density, η = |ρ|^{m−1}ρ.
    Pme { m: f64 },
    /// Two-phase density with latent-heat plateau: η = (r−a1)⁺ − (a2+r)⁻.
    Stefan { a1: f64, a2: f64 },
    /// Saturation constraint: β = indicator of [−1,1], β* = |s|.
    HeleShaw,
    /// User-supplied piecewise-linear density.
    Sampled(SampledBeta),
}

/// A (β, β*) conjugate pair with prox maps and subgradient selections.
#[derive(Clone, Debug)]
pub struct NonlinearityEntry {
    pub kind: NonlinearityKind,
    /// Positive spatial weight a(x); β(x,r) = a(x)·β₀(r).
    pub weight: Coef,
}

impl NonlinearityEntry {
    pub fn quadratic() -> Self {
        Self { kind: NonlinearityKind::Quadratic, weight: Coef::constant(1.0) }
    }

    pub fn pme(m: f64) -> Self {
        assert!(m >= 1.0, "porous-medium exponent must satisfy m ≥ 1");
        Self { kind: NonlinearityKind::Pme { m }, weight: Coef::constant(1.0) }
    }

    pub fn stefan(a1: f64, a2: f64) -> Self {
        assert!(a1 >= 0.0 && a2 >= 0.0, "stefan plateau bounds must be ≥ 0");
        Self { kind: NonlinearityKind::Stefan { a1, a2 }, weight: Coef::constant(1.0) }
    }

    pub fn hele_shaw() -> Self {
        Self { kind: NonlinearityKind::HeleShaw, weight: Coef::constant(1.0) }
    }

    /// Hele-Shaw with spatial scaling a(x) of the dual variable: ρ ∈ Sign(η/a(x)).
    pub fn hele_shaw_scaled(a: Coef) -> Self {
        Self { kind: NonlinearityKind::HeleShaw, weight: a }
    }

    pub fn sampled(points: &[(f64, f64)]) -> Result<Self, NonlinearityError> {
        Ok(Self {
            kind: NonlinearityKind::Sampled(SampledBeta::new(points)?),
            weight: Coef::constant(1.0),
        })
    }

    pub fn with_weight(mut self, w: Coef) -> Self {
        self.weight = w;
        self
    }

    /// Effective domain of β (independent of the positive weight).
    pub fn domain(&self) -> (f64, f64) {
        match &self.kind {
            NonlinearityKind::HeleShaw => (-1.0, 1.0),
            NonlinearityKind::Sampled(s) => (s.r[0], *s.r.last().unwrap()),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Whether β*(x,·) is continuously differentiable (single-valued ∂β*),
    /// the smoothness the Newton oracle needs.
    pub fn smooth_conjugate(&self) -> bool {
        match &self.kind {
            NonlinearityKind::Quadratic | NonlinearityKind::Pme { .. } => true,
            NonlinearityKind::Stefan { .. }
            | NonlinearityKind::HeleShaw
            | NonlinearityKind::Sampled(_) => false,
        }
    }

    /// Uniform convexity modulus of β(x,·) over probe positions, when one is
    /// known; drives the accelerated variant of the primal-dual solver.
    pub(crate) fn strong_convexity(&self) -> Option<f64> {
        match (&self.kind, &self.weight) {
            (NonlinearityKind::Quadratic, Coef::Const(w)) => Some(*w),
            _ => None,
        }
    }

    fn w(&self, pos: Position) -> f64 {
        let w = self.weight.eval(pos);
        debug_assert!(w > 0.0, "nonlinearity weight must be positive");
        w
    }

    /// β(pos, r); +∞ outside the effective domain.
    pub fn eval(&self, pos: Position, r: f64) -> f64 {
        let w = self.w(pos);
        w * match &self.kind {
            NonlinearityKind::Quadratic => 0.5 * r * r,
            NonlinearityKind::Pme { m } => r.abs().powf(m + 1.0) / (m + 1.0),
            NonlinearityKind::Stefan { a1, a2 } => {
                let up = (r - a1).max(0.0);
                let dn = (r + a2).min(0.0);
                0.5 * (up * up + dn * dn)
            }
            NonlinearityKind::HeleShaw => {
                if r.abs() <= 1.0 {
                    0.0
                } else {
                    return f64::INFINITY;
                }
            }
            NonlinearityKind::Sampled(s) => {
                let v = s.eval(r);
                if !v.is_finite() {
                    return f64::INFINITY;
                }
                v
            }
        }
    }

    /// β*(pos, s) = w·β₀*(s/w); finite on all of ℝ for every catalog entry.
    pub fn conj(&self, pos: Position, s: f64) -> f64 {
        let w = self.w(pos);
        let u = s / w;
        w * match &self.kind {
            NonlinearityKind::Quadratic => 0.5 * u * u,
            NonlinearityKind::Pme { m } => {
                let q = (m + 1.0) / m;
                u.abs().powf(q) / q
            }
            NonlinearityKind::Stefan { a1, a2 } => {
                if u >= 0.0 {
                    0.5 * u * u + a1 * u
                } else {
                    0.5 * u * u - a2 * u
                }
            }
            NonlinearityKind::HeleShaw => u.abs(),
            NonlinearityKind::Sampled(sb) => sb.conj(u),
        }
    }

    /// The full interval ∂β*(pos, s); singleton where β* is differentiable.
    pub fn conj_subgrad(&self, pos: Position, s: f64) -> SubgradInterval {
        let u = s / self.w(pos);
        match &self.kind {
            NonlinearityKind::Quadratic => SubgradInterval::point(u),
            NonlinearityKind::Pme { m } => {
                SubgradInterval::point(u.abs().powf(1.0 / m).copysign(u))
            }
            NonlinearityKind::Stefan { a1, a2 } => {
                if u > 0.0 {
                    SubgradInterval::point(u + a1)
                } else if u < 0.0 {
                    SubgradInterval::point(u - a2)
                } else {
                    SubgradInterval { lo: -a2, hi: *a1 }
                }
            }
            NonlinearityKind::HeleShaw => {
                if u > 0.0 {
                    SubgradInterval::point(1.0)
                } else if u < 0.0 {
                    SubgradInterval::point(-1.0)
                } else {
                    SubgradInterval { lo: -1.0, hi: 1.0 }
                }
            }
            NonlinearityKind::Sampled(sb) => sb.conj_subgrad(u),
        }
    }

    /// ∂β(pos, r) as an interval (used by the generic prox bisection); callers
    /// must stay inside the effective domain.
    pub(crate) fn subgrad(&self, pos: Position, r: f64) -> SubgradInterval {
        let w = self.w(pos);
        let scale = |iv: SubgradInterval| SubgradInterval { lo: w * iv.lo, hi: w * iv.hi };
        match &self.kind {
            NonlinearityKind::Quadratic => scale(SubgradInterval::point(r)),
            NonlinearityKind::Pme { m } => {
                scale(SubgradInterval::point(r.abs().powf(*m).copysign(r)))
            }
            NonlinearityKind::Stefan { a1, a2 } => scale(SubgradInterval::point(
                (r - a1).max(0.0) + (r + a2).min(0.0),
            )),
            NonlinearityKind::HeleShaw => {
                // interior: {0}; at the saturation bounds: half-lines
                if r >= 1.0 {
                    SubgradInterval { lo: 0.0, hi: f64::INFINITY }
                } else if r <= -1.0 {
                    SubgradInterval { lo: f64::NEG_INFINITY, hi: 0.0 }
                } else {
                    SubgradInterval::point(0.0)
                }
            }
            NonlinearityKind::Sampled(sb) => {
                let n = sb.slope.len();
                let iv = if r <= sb.r[0] {
                    SubgradInterval { lo: f64::NEG_INFINITY, hi: sb.slope[0] }
                } else if r >= sb.r[n] {
                    SubgradInterval { lo: sb.slope[n - 1], hi: f64::INFINITY }
                } else {
                    match sb.r.binary_search_by(|a| a.partial_cmp(&r).unwrap()) {
                        Ok(i) => SubgradInterval { lo: sb.slope[i - 1], hi: sb.slope[i] },
                        Err(i) => SubgradInterval::point(sb.slope[i - 1]),
                    }
                };
                scale(iv)
            }
        }
    }

    /// prox_{λβ(pos,·)}(s): unique minimizer of (1/2)(r−s)² + λβ(pos,r).
    /// Closed form where available, else safeguarded bisection on the
    /// optimality inclusion s − r ∈ λ∂β(pos,r) to absolute tolerance 1e−12.
    pub fn prox(&self, pos: Position, lambda: f64, s: f64) -> f64 {
        debug_assert!(lambda > 0.0);
        let lw = lambda * self.w(pos); // prox_{λ·wβ₀} = prox_{(λw)β₀}
        match &self.kind {
            NonlinearityKind::Quadratic => s / (1.0 + lw),
            NonlinearityKind::Stefan { a1, a2 } => {
                if s > *a1 {
                    (s + lw * a1) / (1.0 + lw)
                } else if s < -*a2 {
                    (s - lw * a2) / (1.0 + lw)
                } else {
                    s
                }
            }
            NonlinearityKind::HeleShaw => s.clamp(-1.0, 1.0),
            NonlinearityKind::Sampled(sb) => sb.prox(lw, s),
            NonlinearityKind::Pme { m } => {
                // r + λw·|r|^{m-1}r = s; r has the sign of s.
                let t = positive_root(|t| t + lw * t.powf(*m), s.abs());
                t.copysign(s)
            }
        }
    }

    /// prox_{λβ*(pos,·)}(s); satisfies the Moreau identity with `prox`.
    pub fn prox_conj(&self, pos: Position, lambda: f64, s: f64) -> f64 {
        debug_assert!(lambda > 0.0);
        let w = self.w(pos);
        // prox_{λ·wβ₀*(·/w)}(s) = w·prox_{(λ/w)β₀*}(s/w)
        let l = lambda / w;
        let u = s / w;
        w * match &self.kind {
            NonlinearityKind::Quadratic => u / (1.0 + l),
            NonlinearityKind::Stefan { a1, a2 } => {
                if u > l * a1 {
                    (u - l * a1) / (1.0 + l)
                } else if u < -l * a2 {
                    (u + l * a2) / (1.0 + l)
                } else {
                    0.0
                }
            }
            NonlinearityKind::HeleShaw => {
                // soft threshold of |·|
                if u > l {
                    u - l
                } else if u < -l {
                    u + l
                } else {
                    0.0
                }
            }
            NonlinearityKind::Pme { m } => {
                // x + l·|x|^{1/m}sgn x = u
                let t = positive_root(|t| t + l * t.powf(1.0 / m), u.abs());
                t.copysign(u)
            }
            // Moreau: prox_{lβ*}(u) = u − l·prox_{β/l}(u/l); the sampled prox
            // is exact (segment scan), so this is exact too.
            NonlinearityKind::Sampled(sb) => u - l * sb.prox(1.0 / l, u / l),
        }
    }

    /// Generic safeguarded-bisection prox on the inclusion s − r ∈ λ∂β(r),
    /// bracket expanded geometrically from [−1−|s|, 1+|s|]. Reference
    /// implementation the closed forms are tested against.
    pub fn prox_bisect(&self, pos: Position, lambda: f64, s: f64) -> f64 {
        let (dlo, dhi) = self.domain();
        // h(r) = r − s + λ∂β(r): monotone interval-valued; find the sign change.
        let hlo = |r: f64| r - s + lambda * self.subgrad(pos, r).lo;
        let hhi = |r: f64| r - s + lambda * self.subgrad(pos, r).hi;
        let mut a = (-1.0 - s.abs()).max(dlo);
        let mut b = (1.0 + s.abs()).min(dhi);
        let mut grow = 1.0 + s.abs();
        while hhi(a) > 0.0 && a > dlo {
            grow *= 2.0;
            a = (-grow).max(dlo);
        }
        while hlo(b) < 0.0 && b < dhi {
            grow *= 2.0;
            b = grow.min(dhi);
        }
        while b - a > PROX_TOL {
            let mid = 0.5 * (a + b);
            if hhi(mid) < 0.0 {
                a = mid;
            } else if hlo(mid) > 0.0 {
                b = mid;
            } else {
                return mid; // 0 ∈ h(mid): optimality inclusion satisfied
            }
        }
        0.5 * (a + b)
    }
}

/// Solve f(t) = target for t ≥ 0 with f increasing, f(0)=0, by bisection on
/// [0, target] (f(t) ≥ t makes the right end valid) to `PROX_TOL`.
fn positive_root(f: impl Fn(f64) -> f64, target: f64) -> f64 {
    if target <= 0.0 {
        return 0.0;
    }
    let (mut a, mut b) = (0.0, target);
    while b - a > PROX_TOL {
        let mid = 0.5 * (a + b);
        if f(mid) < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

// ---------------------------------------------------------------------------
// Flux costs
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum CostKind {
    /// F(x,B) = |B|²/(2k(x)), so F*(x,A) = k(x)|A|²/2 and φ = k∇η.
    Quadratic,
    /// F*(x,A) = k(x)|A|^p/p, so φ = k|∇η|^{p−2}∇η and F(x,B) = |B|^{p'}/(p'·k^{p'−1}).
    PPower { p: f64 },
}

/// A (F, F*) conjugate pair on flux vectors; `k` is the positive mobility.
#[derive(Clone, Debug)]
pub struct CostEntry {
    pub kind: CostKind,
    pub k: Coef,
}

impl CostEntry {
    pub fn quadratic(k: Coef) -> Self {
        Self { kind: CostKind::Quadratic, k }
    }

    pub fn ppower(p: f64, k: Coef) -> Self {
        assert!(p > 1.0, "gradient growth exponent must satisfy p > 1");
        Self { kind: CostKind::PPower { p }, k }
    }

    /// Gradient-growth exponent p.
    pub fn p(&self) -> f64 {
        match self.kind {
            CostKind::Quadratic => 2.0,
            CostKind::PPower { p } => p,
        }
    }

    /// Flux-growth exponent p' = p/(p−1).
    pub fn p_conj(&self) -> f64 {
        let p = self.p();
        p / (p - 1.0)
    }

    pub(crate) fn k_at(&self, pos: Position) -> f64 {
        let k = self.k.eval(pos);
        debug_assert!(k > 0.0, "cost mobility must be positive");
        k
    }

    /// Uniform convexity modulus of F(x,·) when one is known (quadratic only).
    pub(crate) fn strong_convexity(&self) -> Option<f64> {
        match (&self.kind, &self.k) {
            (CostKind::Quadratic, Coef::Const(k)) => Some(1.0 / k),
            _ => None,
        }
    }

    /// F(pos, B) on the magnitude |B| (costs are radial).
    pub fn eval_mag(&self, pos: Position, b: f64) -> f64 {
        let k = self.k_at(pos);
        let b = b.abs();
        match self.kind {
            CostKind::Quadratic => 0.5 * b * b / k,
            CostKind::PPower { p } => {
                let q = p / (p - 1.0);
                b.powf(q) / (q * k.powf(q - 1.0))
            }
        }
    }

    /// F*(pos, A) on the magnitude |A|.
    pub fn conj_mag(&self, pos: Position, a: f64) -> f64 {
        let k = self.k_at(pos);
        let a = a.abs();
        match self.kind {
            CostKind::Quadratic => 0.5 * k * a * a,
            CostKind::PPower { p } => k * a.powf(p) / p,
        }
    }

    /// d/da F*(pos, a) for a ≥ 0 (radial derivative).
    pub fn conj_grad_mag(&self, pos: Position, a: f64) -> f64 {
        let k = self.k_at(pos);
        let a = a.abs();
        match self.kind {
            CostKind::Quadratic => k * a,
            CostKind::PPower { p } => k * a.powf(p - 1.0),
        }
    }

    /// Second radial derivative of F*, regularized near 0 for p < 2; the
    /// Newton oracle's Jacobian weight.
    pub fn conj_hess_mag(&self, pos: Position, a: f64) -> f64 {
        let k = self.k_at(pos);
        let a = a.abs().max(1e-10);
        match self.kind {
            CostKind::Quadratic => k,
            CostKind::PPower { p } => k * (p - 1.0) * a.powf(p - 2.0),
        }
    }

    /// F(pos, ·) on vectors.
    pub fn eval(&self, pos: Position, b: &[f64]) -> f64 {
        self.eval_mag(pos, norm(b))
    }

    /// F*(pos, ·) on vectors.
    pub fn conj(&self, pos: Position, a: &[f64]) -> f64 {
        self.conj_mag(pos, norm(a))
    }

    /// ∂F*(pos, A) = conj_grad_mag(|A|)·A/|A| (single-valued for p > 1).
    pub fn conj_grad(&self, pos: Position, a: &[f64]) -> Vec<f64> {
        let n = norm(a);
        if n == 0.0 {
            return vec![0.0; a.len()];
        }
        let g = self.conj_grad_mag(pos, n) / n;
        a.iter().map(|&x| g * x).collect()
    }

    /// Scalar version of `conj_grad` for face-normal components.
    pub fn conj_grad_scalar(&self, pos: Position, a: f64) -> f64 {
        self.conj_grad_mag(pos, a.abs()).copysign(a)
    }

    /// prox_{λF(pos,·)} on the magnitude: the radial reduction of the vector
    /// prox. Closed form for quadratic; scalar bisection (tol 1e−12) otherwise.
    pub fn prox_mag(&self, pos: Position, lambda: f64, a: f64) -> f64 {
        debug_assert!(lambda > 0.0);
        let k = self.k_at(pos);
        let a = a.abs();
        match self.kind {
            CostKind::Quadratic => a / (1.0 + lambda / k),
            CostKind::PPower { p } => {
                let q = p / (p - 1.0);
                // u + λ·u^{q-1}/k^{q-1} = a, u ∈ [0, a]
                positive_root(|u| u + lambda * (u / k).powf(q - 1.0), a)
            }
        }
    }

    /// prox_{λF(pos,·)}(A): direction of A preserved.
    pub fn prox(&self, pos: Position, lambda: f64, a: &[f64]) -> Vec<f64> {
        let n = norm(a);
        if n == 0.0 {
            return vec![0.0; a.len()];
        }
        let u = self.prox_mag(pos, lambda, n) / n;
        a.iter().map(|&x| u * x).collect()
    }

    /// Scalar version of `prox` for face-normal components.
    pub fn prox_scalar(&self, pos: Position, lambda: f64, a: f64) -> f64 {
        self.prox_mag(pos, lambda, a.abs()).copysign(a)
    }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Assumption validation
// ---------------------------------------------------------------------------

/// Empirical report of the growth/convexity assumptions the well-posedness
/// theory needs: p'-growth envelope of F (constants C1 ≤ C2), zero midpoint
/// convexity violations, coercivity of β beyond a plateau radius M
/// (β(x,r) ≥ C3·(|r|−M)⁺^{p'}), and smoothness of β* by kind.
#[derive(Clone, Debug)]
pub struct AssumptionReport {
    pub c1: f64,
    pub c2: f64,
    pub convexity_violations: usize,
    pub c3: f64,
    pub m_shift: f64,
    pub h5_smooth_dual: bool,
}

/// Canonical probe positions in the unit square for spatial coefficients.
pub const PROBE_POSITIONS: [Position; 5] =
    [(0.5, 0.5), (0.13, 0.37), (0.87, 0.21), (0.0, 0.0), (1.0, 1.0)];

pub fn validate_assumptions(
    beta: &NonlinearityEntry,
    cost: &CostEntry,
    p: f64,
) -> Result<AssumptionReport, NonlinearityError> {
    validate_assumptions_at(beta, cost, p, &PROBE_POSITIONS)
}

/// Like [`validate_assumptions`] but probing user-chosen positions (the CLI
/// passes actual cell centers so spatial coefficients are exercised where the
/// run will evaluate them).
pub fn validate_assumptions_at(
    beta: &NonlinearityEntry,
    cost: &CostEntry,
    p: f64,
    probes: &[Position],
) -> Result<AssumptionReport, NonlinearityError> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(NonlinearityError::InvalidEntry(format!(
            "growth exponent p must lie in (1,∞), got {p}"
        )));
    }
    if (cost.p() - p).abs() > 1e-12 {
        return Err(NonlinearityError::ValidationFailure {
            assumption: "H1 (cost growth exponent)".into(),
            witness: format!("declared p={p} but cost has p={}", cost.p()),
        });
    }
    let pp = p / (p - 1.0);

    // log-spaced magnitudes, both signs
    let mags: Vec<f64> = (0..60).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 59.0)).collect();

    // (H1) envelope C1|ξ|^{p'} ≤ F(x,ξ) ≤ C2|ξ|^{p'}
    let (mut c1, mut c2) = (f64::INFINITY, 0.0f64);
    for &pos in probes {
        for &m in &mags {
            let ratio = cost.eval_mag(pos, m) / m.powf(pp);
            c1 = c1.min(ratio);
            c2 = c2.max(ratio);
        }
    }
    if !(c1 > 0.0) || !c2.is_finite() {
        return Err(NonlinearityError::ValidationFailure {
            assumption: "H1 (p'-growth of F)".into(),
            witness: format!("empirical envelope [{c1:.3e}, {c2:.3e}] not positive-finite"),
        });
    }

    // midpoint convexity of β and F on sampled pairs
    let (dlo, dhi) = beta.domain();
    let mut violations = 0usize;
    let mut witness = String::new();
    let mut rs: Vec<f64> = mags.iter().flat_map(|&m| [m, -m]).collect();
    rs.push(0.0);
    let clampd = |r: f64| r.clamp(dlo.max(-1e6), dhi.min(1e6));
    for &pos in probes {
        for i in 0..rs.len() {
            for j in (i + 1)..rs.len() {
                let (r1, r2) = (clampd(rs[i]), clampd(rs[j]));
                let mid = 0.5 * (r1 + r2);
                let lhs = beta.eval(pos, mid);
                let rhs = 0.5 * (beta.eval(pos, r1) + beta.eval(pos, r2));
                if lhs > rhs + 1e-9 * (1.0 + rhs.abs()) {
                    violations += 1;
                    if witness.is_empty() {
                        witness = format!("β midpoint at x={pos:?}, r1={r1}, r2={r2}");
                    }
                }
                let flhs = cost.eval_mag(pos, mid.abs());
                // convexity of the radial profile along a fixed direction
                let frhs = 0.5 * (cost.eval_mag(pos, r1.abs()) + cost.eval_mag(pos, r2.abs()));
                if r1.signum() == r2.signum() && flhs > frhs + 1e-9 * (1.0 + frhs.abs()) {
                    violations += 1;
                    if witness.is_empty() {
                        witness = format!("F midpoint at x={pos:?}, |B|∈{{{r1},{r2}}}");
                    }
                }
            }
        }
    }
    if violations > 0 {
        return Err(NonlinearityError::ValidationFailure {
            assumption: "H3 (convexity)".into(),
            witness,
        });
    }

    // (H4): β(x,r) ≥ C3 (|r|−M)⁺^{p'} beyond the plateau radius M
    let m_shift = match &beta.kind {
        NonlinearityKind::Stefan { a1, a2 } => a1.max(*a2).max(1.0),
        NonlinearityKind::Sampled(sb) => {
            let flat = sb
                .r
                .iter()
                .zip(&sb.v)
                .filter(|(_, &v)| v <= 0.0)
                .map(|(&r, _)| r.abs())
                .fold(0.0f64, f64::max);
            flat.max(1.0)
        }
        _ => 1.0,
    };
    let mut c3 = f64::INFINITY;
    for &pos in probes {
        for &m in &mags {
            for r in [m, -m] {
                let r = clampd(r);
                if r.abs() <= m_shift {
                    continue;
                }
                let b = beta.eval(pos, r);
                if !b.is_finite() {
                    continue; // +∞ dominates any lower bound
                }
                c3 = c3.min(b / (r.abs() - m_shift).powf(pp));
            }
        }
    }
    if c3 < 1e-9 {
        return Err(NonlinearityError::ValidationFailure {
            assumption: "H4 (coercivity of β at rate p')".into(),
            witness: format!("empirical C3={c3:.3e} with M={m_shift}; β grows slower than |r|^{pp:.3}"),
        });
    }
    // A sampled envelope can't see asymptotics, so additionally compare the
    // log-log growth rate of β at large |r| against p' (skipped for entries
    // whose domain is bounded: their coercivity is vacuous).
    if dlo.is_infinite() || dhi.is_infinite() {
        let pos = probes[0];
        for r in [1e3, -1e3f64] {
            let (b1, b2) = (beta.eval(pos, r), beta.eval(pos, 2.0 * r));
            if !(b1.is_finite() && b2.is_finite() && b1 > 0.0) {
                continue;
            }
            let slope = (b2 / b1).ln() / 2f64.ln();
            if slope < pp - 0.05 {
                return Err(NonlinearityError::ValidationFailure {
                    assumption: "H4 (coercivity of β at rate p')".into(),
                    witness: format!(
                        "β grows like |r|^{slope:.3} near r={r:.0}, below the required rate p'={pp:.3}"
                    ),
                });
            }
        }
    }

    Ok(AssumptionReport {
        c1,
        c2,
        convexity_violations: 0,
        c3,
        m_shift,
        h5_smooth_dual: beta.smooth_conjugate(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const O: Position = (0.3, 0.7);

    fn catalog() -> Vec<NonlinearityEntry> {
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

    #[test]
    fn catalog_point_values() {
        let q = NonlinearityEntry::quadratic();
        assert_eq!(q.eval(O, 2.0), 2.0);
        assert_eq!(q.conj(O, 1.0), 0.5);
        assert_eq!(q.conj_subgrad(O, 3.0), SubgradInterval::point(3.0));
        assert_eq!(q.prox(O, 1.0, 2.0), 1.0);
        assert_eq!(q.prox_conj(O, 1.0, 2.0), 1.0);

        let pme = NonlinearityEntry::pme(2.0);
        assert_eq!(pme.eval(O, 3.0), 9.0);
        assert!((pme.conj(O, 1.0) - 2.0 / 3.0).abs() < 1e-12);
        // prox: root of r + r² = 2 is exactly 1
        assert!((pme.prox(O, 1.0, 2.0) - 1.0).abs() < 1e-11);

        let hs = NonlinearityEntry::hele_shaw();
        assert_eq!(hs.eval(O, 2.0), f64::INFINITY);
        assert_eq!(hs.eval(O, 0.3), 0.0);
        assert_eq!(hs.conj(O, -2.0), 2.0);
        assert_eq!(hs.conj_subgrad(O, 0.0), SubgradInterval { lo: -1.0, hi: 1.0 });
        assert_eq!(hs.prox(O, 7.0, 5.0), 1.0);
        assert!((hs.prox_conj(O, 1.0, 2.5) - 1.5).abs() < 1e-12);

        let st = NonlinearityEntry::stefan(1.0, 0.0);
        assert_eq!(st.conj_subgrad(O, 0.0), SubgradInterval { lo: 0.0, hi: 1.0 });
        assert_eq!(st.eval(O, 0.5), 0.0);
        assert!((st.conj(O, 2.0) - 4.0).abs() < 1e-12); // 2²/2 + 1·2
    }

    #[test]
    fn fenchel_young_holds_on_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for entry in catalog() {
            for _ in 0..10_000 {
                let r = rng.gen_range(-10.0..10.0);
                let s = rng.gen_range(-10.0..10.0);
                let b = entry.eval(O, r);
                if !b.is_finite() {
                    continue;
                }
                let gap = b + entry.conj(O, s) - r * s;
                assert!(gap >= -1e-9, "Fenchel–Young violated: kind={:?} r={r} s={s} gap={gap}", entry.kind);
            }
        }
    }

    #[test]
    fn fenchel_equality_at_subgradient_selections() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for entry in catalog() {
            for _ in 0..2_000 {
                let s = rng.gen_range(-10.0..10.0);
                let iv = entry.conj_subgrad(O, s);
                for r in [iv.lo, iv.hi, 0.5 * (iv.lo + iv.hi)] {
                    if !r.is_finite() {
                        continue;
                    }
                    let gap = entry.eval(O, r) + entry.conj(O, s) - r * s;
                    assert!(
                        gap.abs() <= 1e-7 * (1.0 + (r * s).abs()),
                        "graph point not tight: kind={:?} s={s} r={r} gap={gap}",
                        entry.kind
                    );
                }
            }
        }
    }

    #[test]
    fn moreau_identity_relates_the_prox_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for entry in catalog() {
            for _ in 0..1_000 {
                let lambda = 10f64.powf(rng.gen_range(-3.0..3.0));
                let s = rng.gen_range(-10.0..10.0);
                let lhs = entry.prox(O, lambda, s) + lambda * entry.prox_conj(O, 1.0 / lambda, s / lambda);
                assert!(
                    (lhs - s).abs() <= 1e-8 * (1.0 + s.abs()),
                    "Moreau identity broken: kind={:?} λ={lambda} s={s} lhs={lhs}",
                    entry.kind
                );
            }
        }
    }

    #[test]
    fn prox_closed_forms_match_generic_bisection() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for entry in catalog() {
            for _ in 0..300 {
                let lambda = 10f64.powf(rng.gen_range(-2.0..2.0));
                let s = rng.gen_range(-8.0..8.0);
                let a = entry.prox(O, lambda, s);
                let b = entry.prox_bisect(O, lambda, s);
                assert!(
                    (a - b).abs() <= 5e-11 * (1.0 + s.abs()),
                    "prox mismatch: kind={:?} λ={lambda} s={s}: closed {a} vs bisect {b}",
                    entry.kind
                );
            }
        }
    }

    #[test]
    fn prox_minimizes_its_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for entry in catalog() {
            for _ in 0..200 {
                let lambda = 10f64.powf(rng.gen_range(-1.5..1.5));
                let s = rng.gen_range(-5.0..5.0);
                let r = entry.prox(O, lambda, s);
                let obj = |x: f64| 0.5 * (x - s).powi(2) + lambda * entry.eval(O, x);
                let best = obj(r);
                assert!(best.is_finite(), "prox left the domain: {:?}", entry.kind);
                for dr in [-1e-3, -1e-6, 1e-6, 1e-3] {
                    assert!(
                        best <= obj(r + dr) + 1e-10 * (1.0 + best.abs()),
                        "prox not a minimizer: kind={:?} λ={lambda} s={s} r={r} dr={dr}",
                        entry.kind
                    );
                }
            }
        }
    }

    #[test]
    fn graph_monotonicity_of_conjugate_subgradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for entry in catalog() {
            let mut ss: Vec<f64> = (0..500).map(|_| rng.gen_range(-10.0..10.0)).collect();
            ss.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for w in ss.windows(2) {
                if w[0] == w[1] {
                    continue;
                }
                let a = entry.conj_subgrad(O, w[0]);
                let b = entry.conj_subgrad(O, w[1]);
                assert!(
                    a.hi <= b.lo,
                    "monotonicity violated: kind={:?} s={}→{} hi={} lo={}",
                    entry.kind,
                    w[0],
                    w[1],
                    a.hi,
                    b.lo
                );
            }
        }
    }

    #[test]
    fn cost_point_values_and_conjugacy() {
        let q1 = CostEntry::quadratic(Coef::constant(1.0));
        assert_eq!(q1.conj(O, &[3.0, 4.0]), 12.5);
        let q2 = CostEntry::quadratic(Coef::constant(2.0));
        assert_eq!(q2.conj(O, &[2.0, 0.0]), 4.0);
        assert_eq!(q2.conj_grad(O, &[1.0, 0.0]), vec![2.0, 0.0]);
        let p3 = CostEntry::ppower(3.0, Coef::constant(1.0));
        assert!((p3.conj(O, &[1.0, 0.0]) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(p3.conj_grad(O, &[2.0, 0.0]), vec![4.0, 0.0]);
        assert_eq!(q1.prox(O, 1.0, &[2.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(p3.prox(O, 1.0, &[0.0, 0.0]), vec![0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for cost in [
            q1.clone(),
            q2,
            p3,
            CostEntry::ppower(1.5, Coef::constant(0.7)),
            CostEntry::quadratic(Coef::from_fn(|(x, _)| 1.0 + x)),
        ] {
            for _ in 0..10_000 {
                let a = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
                let g = cost.conj_grad(O, &a);
                // F(∂F*(A)) + F*(A) = ∂F*(A)·A on the graph
                let lhs = cost.eval(O, &g) + cost.conj(O, &a);
                let rhs = g[0] * a[0] + g[1] * a[1];
                let n = norm(&a);
                assert!(
                    (lhs - rhs).abs() <= 1e-9 * (1.0 + n.powf(cost.p())),
                    "cost conjugacy broken: {:?} A={a:?}",
                    cost.kind
                );
            }
        }
    }

    #[test]
    fn cost_conj_grad_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for cost in [
            CostEntry::quadratic(Coef::constant(2.0)),
            CostEntry::ppower(1.5, Coef::constant(1.0)),
            CostEntry::ppower(3.0, Coef::constant(0.5)),
        ] {
            for _ in 0..10_000 {
                let a = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
                let b = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
                let ga = cost.conj_grad(O, &a);
                let gb = cost.conj_grad(O, &b);
                let dot = (ga[0] - gb[0]) * (a[0] - b[0]) + (ga[1] - gb[1]) * (a[1] - b[1]);
                assert!(dot >= -1e-12, "∂F* not monotone: {:?}", cost.kind);
            }
        }
    }

    #[test]
    fn ppower_prox_solves_the_scalar_optimality_equation() {
        // magnitude u satisfies u + λ(u/k)^{p'−1} = |A|; check against a dense
        // 1-D minimization of the full objective.
        let cost = CostEntry::ppower(3.0, Coef::constant(1.0)); // p'=1.5
        let a = [2.0, 0.0];
        let got = cost.prox(O, 1.0, &a);
        assert_eq!(got[1], 0.0);
        let obj = |u: f64| 0.5 * (u - 2.0).powi(2) + cost.eval_mag(O, u);
        let mut best = (f64::INFINITY, 0.0);
        let mut u = 0.0;
        while u <= 2.0 {
            if obj(u) < best.0 {
                best = (obj(u), u);
            }
            u += 1e-6;
        }
        assert!((got[0] - best.1).abs() < 1e-5, "{} vs {}", got[0], best.1);
    }

    #[test]
    fn validation_reports_expected_constants() {
        let rep = validate_assumptions(
            &NonlinearityEntry::quadratic(),
            &CostEntry::quadratic(Coef::constant(1.0)),
            2.0,
        )
        .unwrap();
        assert!((rep.c1 - 0.5).abs() < 1e-12 && (rep.c2 - 0.5).abs() < 1e-12);
        assert_eq!(rep.convexity_violations, 0);
        assert!(rep.h5_smooth_dual);
        assert!((rep.c3 - 0.5).abs() < 0.1, "quadratic C3 ≈ 1/2, got {}", rep.c3);

        // Hele-Shaw passes H4 vacuously (β = +∞ beyond [−1,1], plateau M=1).
        let rep = validate_assumptions(
            &NonlinearityEntry::hele_shaw(),
            &CostEntry::quadratic(Coef::constant(1.0)),
            2.0,
        )
        .unwrap();
        assert_eq!(rep.m_shift, 1.0);
        assert!(rep.c3.is_infinite());
        assert!(!rep.h5_smooth_dual);

        // pme{2} with p'=3/2 has positive sampled C3.
        let rep = validate_assumptions(
            &NonlinearityEntry::pme(2.0),
            &CostEntry::ppower(3.0, Coef::constant(1.0)),
            3.0,
        )
        .unwrap();
        assert!(rep.c3 > 0.0 && rep.c3.is_finite());

        // quadratic β grows too slowly for p' = 3: H4 must fail.
        let err = validate_assumptions(
            &NonlinearityEntry::quadratic(),
            &CostEntry::ppower(1.5, Coef::constant(1.0)),
            1.5,
        )
        .unwrap_err();
        assert!(matches!(err, NonlinearityError::ValidationFailure { .. }), "{err}");
    }

    #[test]
    fn sampled_entry_rejects_nonconvex_data() {
        assert!(NonlinearityEntry::sampled(&[(-1.0, 1.0), (0.0, -2.0), (1.0, -1.0), (2.0, -3.0)])
            .is_err());
        assert!(NonlinearityEntry::sampled(&[(0.5, 0.0), (1.0, 1.0)]).is_err()); // 0 ∉ domain
    }
}
