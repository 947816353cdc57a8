//! Staggered (marker-and-cell) tensor grids in one and two dimensions.
//!
//! Scalars (density ρ, potential η) live at cell centers; flux components φ
//! live at face centers and represent the normal component along the face's
//! axis. The discrete gradient G_g (with Dirichlet data g folded in) and the
//! discrete divergence D satisfy an exact summation-by-parts identity,
//!
//!   Σ_f (G_g η)_f φ_f w_f + Σ_c η_c (D φ)_c w_c
//!     = Σ_{Dirichlet f} φ_f ν_f g_f a_f + Σ_{Neumann f} φ_f ν_f η_adj(f) a_f,
//!
//! where ν_f = ±1 is the outward orientation of a boundary face along its
//! axis, a_f the face area, and η_adj the value in the cell touching the face.
//! Face quadrature weights are w_f = h·a_f on interior faces and (h/2)·a_f on
//! boundary faces (the half-cell a boundary face controls); `green_defect`
//! evaluates the identity's residual and is pinned to roundoff by tests.
//!
//! Conventions:
//! - gradient on an interior face: (η_plus − η_minus)/h along the face axis;
//! - gradient on a Dirichlet face: ν·(g − η_adj)/(h/2), the one-sided
//!   difference with the datum sitting on the face itself;
//! - gradient on a Neumann face: 0 (flux boundary conditions enter the
//!   variational problem through the data, not through G);
//! - divergence: per axis, (φ_plusface − φ_minusface)/h, summed over axes.

use crate::Position;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Bottom => "bottom",
            Side::Top => "top",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    /// Prescribed trace of the potential η.
    Dirichlet,
    /// Prescribed inward normal flux of φ + χ.
    Neumann,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundaryFace {
    pub side: Side,
    pub kind: BoundaryKind,
    /// Outward orientation along the face axis: −1 on left/bottom, +1 on right/top.
    pub nu: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct Face {
    pub axis: usize,
    /// Cell on the − side of the face (None on left/bottom boundary faces).
    pub minus: Option<usize>,
    /// Cell on the + side of the face (None on right/top boundary faces).
    pub plus: Option<usize>,
    pub boundary: Option<BoundaryFace>,
}

impl Face {
    /// The unique neighboring cell of a boundary face.
    pub fn adjacent(&self) -> usize {
        self.minus.or(self.plus).expect("face with no neighbor")
    }

    pub fn is_interior(&self) -> bool {
        self.boundary.is_none()
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum GridError {
    #[error("invalid grid specification: {0}")]
    InvalidSpec(String),
    #[error("size mismatch for {what}: expected {expected}, got {got}")]
    SizeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("advection step dt={dt:.3e} exceeds the Courant bound {limit:.3e}")]
    CFLViolation { dt: f64, limit: f64 },
}

/// Cell-centered scalar field, indexed c = j·nx + i.
pub type CellField = Vec<f64>;
/// Face-normal scalar field; x-faces first (f = j·(nx+1) + i), then y-faces.
pub type FaceField = Vec<f64>;

#[derive(Clone, Debug)]
pub struct Grid {
    dim: usize,
    counts: [usize; 2],
    h: [f64; 2],
    faces: Vec<Face>,
    dirichlet: Vec<usize>,
    neumann: Vec<usize>,
}

/// Build a tensor grid on (0,lx) or (0,lx)×(0,ly) with every side labeled.
///
/// All-Neumann layouts are rejected here (the potential would only be
/// determined up to the kernel of the nonlinearities); callers that accept
/// that must opt in through [`build_grid_all_neumann`].
pub fn build_grid(
    dim: usize,
    counts: &[usize],
    lengths: &[f64],
    labels: &[(Side, BoundaryKind)],
) -> Result<Grid, GridError> {
    let grid = build_grid_all_neumann(dim, counts, lengths, labels)?;
    if grid.dirichlet.is_empty() {
        return Err(GridError::InvalidSpec(
            "all sides are Neumann; use build_grid_all_neumann if intended".into(),
        ));
    }
    Ok(grid)
}

/// Like [`build_grid`] but permits layouts without any Dirichlet side.
pub fn build_grid_all_neumann(
    dim: usize,
    counts: &[usize],
    lengths: &[f64],
    labels: &[(Side, BoundaryKind)],
) -> Result<Grid, GridError> {
    if dim != 1 && dim != 2 {
        return Err(GridError::InvalidSpec(format!("dim must be 1 or 2, got {dim}")));
    }
    if counts.len() != dim || lengths.len() != dim {
        return Err(GridError::InvalidSpec(format!(
            "expected {dim} counts and lengths, got {} and {}",
            counts.len(),
            lengths.len()
        )));
    }
    if counts.iter().any(|&n| n < 2) {
        return Err(GridError::InvalidSpec("need at least 2 cells per direction".into()));
    }
    if lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(GridError::InvalidSpec("side lengths must be positive and finite".into()));
    }
    let sides: &[Side] = if dim == 1 {
        &[Side::Left, Side::Right]
    } else {
        &[Side::Left, Side::Right, Side::Bottom, Side::Top]
    };
    let kind_of = |side: Side| -> Result<BoundaryKind, GridError> {
        let mut found = None;
        for &(s, k) in labels {
            if s == side {
                if found.is_some() {
                    return Err(GridError::InvalidSpec(format!(
                        "side {} labeled more than once",
                        side.name()
                    )));
                }
                found = Some(k);
            }
        }
        found.ok_or_else(|| {
            GridError::InvalidSpec(format!("side {} has no boundary label", side.name()))
        })
    };
    for &(s, _) in labels {
        if !sides.contains(&s) {
            return Err(GridError::InvalidSpec(format!(
                "side {} does not exist in dimension {dim}",
                s.name()
            )));
        }
    }
    let left = kind_of(Side::Left)?;
    let right = kind_of(Side::Right)?;
    let (bottom, top) = if dim == 2 {
        (Some(kind_of(Side::Bottom)?), Some(kind_of(Side::Top)?))
    } else {
        (None, None)
    };

    let nx = counts[0];
    let ny = if dim == 2 { counts[1] } else { 1 };
    let hx = lengths[0] / nx as f64;
    let hy = if dim == 2 { lengths[1] / ny as f64 } else { 1.0 };

    let bface = |side: Side, kind: BoundaryKind| {
        let nu = match side {
            Side::Left | Side::Bottom => -1.0,
            Side::Right | Side::Top => 1.0,
        };
        Some(BoundaryFace { side, kind, nu })
    };

    let mut faces = Vec::new();
    // x-faces, row-major over (i, j), i = 0..=nx
    for j in 0..ny {
        for i in 0..=nx {
            let minus = (i > 0).then(|| j * nx + i - 1);
            let plus = (i < nx).then(|| j * nx + i);
            let boundary = if i == 0 {
                bface(Side::Left, left)
            } else if i == nx {
                bface(Side::Right, right)
            } else {
                None
            };
            faces.push(Face { axis: 0, minus, plus, boundary });
        }
    }
    if dim == 2 {
        for j in 0..=ny {
            for i in 0..nx {
                let minus = (j > 0).then(|| (j - 1) * nx + i);
                let plus = (j < ny).then(|| j * nx + i);
                let boundary = if j == 0 {
                    bface(Side::Bottom, bottom.unwrap())
                } else if j == ny {
                    bface(Side::Top, top.unwrap())
                } else {
                    None
                };
                faces.push(Face { axis: 1, minus, plus, boundary });
            }
        }
    }

    let mut dirichlet = Vec::new();
    let mut neumann = Vec::new();
    for (f, face) in faces.iter().enumerate() {
        match face.boundary.map(|b| b.kind) {
            Some(BoundaryKind::Dirichlet) => dirichlet.push(f),
            Some(BoundaryKind::Neumann) => neumann.push(f),
            None => {}
        }
    }

    Ok(Grid { dim, counts: [nx, ny], h: [hx, hy], faces, dirichlet, neumann })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self) -> [usize; 2] {
        self.counts
    }

    pub fn n_cells(&self) -> usize {
        self.counts[0] * self.counts[1]
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    pub fn h_min(&self) -> f64 {
        if self.dim == 2 { self.h[0].min(self.h[1]) } else { self.h[0] }
    }

    /// Volume of every cell (the grid is uniform).
    pub fn cell_weight(&self) -> f64 {
        self.h[0] * self.h[1]
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn dirichlet_faces(&self) -> &[usize] {
        &self.dirichlet
    }

    pub fn neumann_faces(&self) -> &[usize] {
        &self.neumann
    }

    pub fn has_dirichlet(&self) -> bool {
        !self.dirichlet.is_empty()
    }

    /// Area of face f (length of the transverse section; 1 in 1D).
    pub fn face_area(&self, f: usize) -> f64 {
        match self.faces[f].axis {
            0 => self.h[1],
            _ => self.h[0],
        }
    }

    /// Quadrature weight of face f: h·a on interior faces, (h/2)·a on the boundary.
    pub fn face_weight(&self, f: usize) -> f64 {
        let face = &self.faces[f];
        let w = self.h[face.axis] * self.face_area(f);
        if face.is_interior() { w } else { 0.5 * w }
    }

    pub fn cell_pos(&self, c: usize) -> Position {
        let i = c % self.counts[0];
        let j = c / self.counts[0];
        let x = (i as f64 + 0.5) * self.h[0];
        let y = if self.dim == 2 { (j as f64 + 0.5) * self.h[1] } else { 0.0 };
        (x, y)
    }

    pub fn face_pos(&self, f: usize) -> Position {
        let nx = self.counts[0];
        let nxf = (nx + 1) * self.counts[1];
        if f < nxf {
            let i = f % (nx + 1);
            let j = f / (nx + 1);
            let y = if self.dim == 2 { (j as f64 + 0.5) * self.h[1] } else { 0.0 };
            (i as f64 * self.h[0], y)
        } else {
            let g = f - nxf;
            let i = g % nx;
            let j = g / nx;
            ((i as f64 + 0.5) * self.h[0], j as f64 * self.h[1])
        }
    }

    /// Face ids (minus, plus) bounding cell c along `axis`.
    pub fn cell_face_pair(&self, c: usize, axis: usize) -> (usize, usize) {
        let nx = self.counts[0];
        let i = c % nx;
        let j = c / nx;
        if axis == 0 {
            (j * (nx + 1) + i, j * (nx + 1) + i + 1)
        } else {
            let nxf = (nx + 1) * self.counts[1];
            (nxf + j * nx + i, nxf + (j + 1) * nx + i)
        }
    }

    pub fn zeros_cells(&self) -> CellField {
        vec![0.0; self.n_cells()]
    }

    pub fn zeros_faces(&self) -> FaceField {
        vec![0.0; self.n_faces()]
    }

    pub(crate) fn check_cells(&self, v: &[f64], what: &'static str) -> Result<(), GridError> {
        if v.len() != self.n_cells() {
            return Err(GridError::SizeMismatch { what, expected: self.n_cells(), got: v.len() });
        }
        Ok(())
    }

    pub(crate) fn check_faces(&self, v: &[f64], what: &'static str) -> Result<(), GridError> {
        if v.len() != self.n_faces() {
            return Err(GridError::SizeMismatch { what, expected: self.n_faces(), got: v.len() });
        }
        Ok(())
    }
}

/// Boundary data attached to a grid: Dirichlet trace g and inward Neumann
/// flux π, stored as full face fields whose entries are meaningful only on
/// faces of the matching type.
#[derive(Clone, Debug)]
pub struct BoundaryData {
    pub g: FaceField,
    pub pi: FaceField,
}

impl BoundaryData {
    pub fn zeros(grid: &Grid) -> Self {
        Self { g: grid.zeros_faces(), pi: grid.zeros_faces() }
    }

    /// Evaluate g on Dirichlet faces and π on Neumann faces at face centroids.
    pub fn from_fns(
        grid: &Grid,
        g: impl Fn(Position) -> f64,
        pi: impl Fn(Position) -> f64,
    ) -> Self {
        let mut data = Self::zeros(grid);
        for &f in grid.dirichlet_faces() {
            data.g[f] = g(grid.face_pos(f));
        }
        for &f in grid.neumann_faces() {
            data.pi[f] = pi(grid.face_pos(f));
        }
        data
    }
}

/// Discrete gradient with Dirichlet data g folded in; Neumann entries are 0.
pub fn gradient(grid: &Grid, eta: &[f64], g: &[f64]) -> Result<FaceField, GridError> {
    grid.check_cells(eta, "eta")?;
    grid.check_faces(g, "g")?;
    let mut out = grid.zeros_faces();
    gradient_into(grid, eta, g, &mut out);
    Ok(out)
}

/// Allocation-free form of [`gradient`]; sizes must already match.
pub(crate) fn gradient_into(grid: &Grid, eta: &[f64], g: &[f64], out: &mut [f64]) {
    for (f, face) in grid.faces().iter().enumerate() {
        let h = grid.h(face.axis);
        out[f] = match (face.minus, face.plus, face.boundary) {
            (Some(m), Some(p), _) => (eta[p] - eta[m]) / h,
            (_, _, Some(b)) if b.kind == BoundaryKind::Dirichlet => {
                b.nu * (g[f] - eta[face.adjacent()]) / (0.5 * h)
            }
            _ => 0.0,
        };
    }
}

/// Discrete divergence of a face-normal field.
pub fn divergence(grid: &Grid, phi: &[f64]) -> Result<CellField, GridError> {
    grid.check_faces(phi, "phi")?;
    let mut out = grid.zeros_cells();
    divergence_into(grid, phi, &mut out);
    Ok(out)
}

/// Allocation-free form of [`divergence`]; sizes must already match.
pub(crate) fn divergence_into(grid: &Grid, phi: &[f64], out: &mut [f64]) {
    for c in 0..grid.n_cells() {
        let mut d = 0.0;
        for axis in 0..grid.dim() {
            let (fm, fp) = grid.cell_face_pair(c, axis);
            d += (phi[fp] - phi[fm]) / grid.h(axis);
        }
        out[c] = d;
    }
}

/// Residual of the summation-by-parts identity relating G_g and D; exactly
/// zero in real arithmetic for any η, φ, g.
pub fn green_defect(grid: &Grid, eta: &[f64], phi: &[f64], g: &[f64]) -> Result<f64, GridError> {
    grid.check_cells(eta, "eta")?;
    grid.check_faces(phi, "phi")?;
    let grad = gradient(grid, eta, g)?;
    let div = divergence(grid, phi)?;
    let mut lhs = crate::accum::Kahan::new();
    for f in 0..grid.n_faces() {
        lhs.add(grad[f] * phi[f] * grid.face_weight(f));
    }
    let wc = grid.cell_weight();
    for c in 0..grid.n_cells() {
        lhs.add(eta[c] * div[c] * wc);
    }
    let mut rhs = crate::accum::Kahan::new();
    for &f in grid.dirichlet_faces() {
        let b = grid.face(f).boundary.unwrap();
        rhs.add(phi[f] * b.nu * g[f] * grid.face_area(f));
    }
    for &f in grid.neumann_faces() {
        let face = grid.face(f);
        let b = face.boundary.unwrap();
        rhs.add(phi[f] * b.nu * eta[face.adjacent()] * grid.face_area(f));
    }
    Ok(lhs.value() - rhs.value())
}

/// One explicit donor-cell (upwind) transport step with no-flux boundaries.
///
/// `v` holds face-normal velocities; the flux through an interior face is
/// v_f·ρ_donor with the donor chosen by the sign of v_f, and boundary faces
/// carry no flux, so total mass is conserved exactly. Fails with
/// [`GridError::CFLViolation`] when dt exceeds `max_courant` cell-crossing
/// times (the scheme is monotone up to Courant number 1; callers usually pass
/// 0.5 for margin).
pub fn upwind_advect(
    grid: &Grid,
    rho: &[f64],
    v: &[f64],
    dt: f64,
    max_courant: f64,
) -> Result<CellField, GridError> {
    grid.check_cells(rho, "rho")?;
    grid.check_faces(v, "v")?;
    if !(dt > 0.0) {
        return Err(GridError::InvalidSpec(format!("advection step dt must be > 0, got {dt}")));
    }
    // Courant number per cell: dt·Σ_axes max(|v| on the cell's faces)/h.
    let mut worst = 0.0f64;
    for c in 0..grid.n_cells() {
        let mut rate = 0.0;
        for axis in 0..grid.dim() {
            let (fm, fp) = grid.cell_face_pair(c, axis);
            rate += v[fm].abs().max(v[fp].abs()) / grid.h(axis);
        }
        worst = worst.max(rate);
    }
    if dt * worst > max_courant * (1.0 + 1e-12) {
        return Err(GridError::CFLViolation { dt, limit: max_courant / worst });
    }

    let flux = upwind_flux(grid, rho, v);
    let div = divergence(grid, &flux)?;
    Ok((0..grid.n_cells()).map(|c| rho[c] - dt * div[c]).collect())
}

/// Donor-cell face flux v_f·ρ_donor for the conservative form ∂_tρ + D(ρv);
/// the donor is the minus cell when v_f ≥ 0 and boundary faces carry none.
pub(crate) fn upwind_flux(grid: &Grid, rho: &[f64], v: &[f64]) -> FaceField {
    let mut flux = grid.zeros_faces();
    for (f, face) in grid.faces().iter().enumerate() {
        if let (Some(m), Some(p)) = (face.minus, face.plus) {
            let donor = if v[f] >= 0.0 { rho[m] } else { rho[p] };
            flux[f] = v[f] * donor;
        }
    }
    flux
}

/// Arithmetic cell-to-face average; boundary faces copy the adjacent cell.
pub fn cell_to_face(grid: &Grid, field: &[f64]) -> Result<FaceField, GridError> {
    grid.check_cells(field, "field")?;
    let mut out = grid.zeros_faces();
    for (f, face) in grid.faces().iter().enumerate() {
        out[f] = match (face.minus, face.plus) {
            (Some(m), Some(p)) => 0.5 * (field[m] + field[p]),
            _ => field[face.adjacent()],
        };
    }
    Ok(out)
}
