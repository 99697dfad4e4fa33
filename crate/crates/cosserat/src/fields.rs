//! Discretization: uniform grids over a cube or (punctured) ball, per-node
//! vector/quaternion fields, finite-difference derivative operators, sampling
//! of the analytic reference configurations, and state-file serialization.
//!
//! Nodes live at `x(i,j,k) = (-L + i h, -L + j h, -L + k h)` with
//! `h = 2L/(n-1)`, stored x-fastest (`index = i + n (j + n k)`). Every
//! per-node array has length `n^3`; slots of inactive nodes hold neutral
//! values (zeros, identity quaternions) and are ignored by all operators.

use crate::algebra::{cover, norm3, AlgebraError, Mat3, UnitQuat, Vec3};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Errors from grid construction, field sampling, stencils, and state IO.
#[derive(Debug, Error)]
pub enum FieldsError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("{0} requires a punctured grid (puncture_radius > 0); the closed form is undefined at the origin")]
    RequiresPuncture(&'static str),
    #[error("active node {index} has no active axis neighbors at all; derivatives undefined")]
    IsolatedNode { index: usize },
    #[error("{what}: expected {expected} entries, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("state file does not match its grid spec: {0}")]
    SpecMismatch(String),
    #[error("quaternion at node {index} deviates from unit norm by {deviation} (limit 1e-6)")]
    BadQuaternion { index: usize, deviation: f64 },
    #[error("non-finite {what} value at node {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("dirichlet mask must pin every boundary node (node {0} is boundary but unpinned)")]
    UnpinnedBoundary(usize),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("state io: {0}")]
    Io(#[from] std::io::Error),
    #[error("state file parse: {0}")]
    Json(#[from] serde_json::Error),
}

/// Shape of the active region inside the bounding cube `[-L, L]^3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainShape {
    /// The whole cube.
    Cube,
    /// The ball `|x| <= L`.
    Ball,
}

/// Geometry description of a grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    /// Nodes per axis; odd and >= 5 so a center node exists.
    pub n: usize,
    /// Half-width L of the bounding cube.
    pub extent: f64,
    /// Active-region shape.
    pub shape: DomainShape,
    /// Nodes with `|x| < puncture_radius` are masked out; 0 disables.
    pub puncture_radius: f64,
}

impl GridSpec {
    /// Grid spacing `h = 2L/(n-1)`.
    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / (self.n as f64 - 1.0)
    }

    pub fn validate(&self) -> Result<(), FieldsError> {
        if self.n < 5 || self.n % 2 == 0 {
            return Err(FieldsError::InvalidSpec(format!(
                "n = {} must be odd and >= 5",
                self.n
            )));
        }
        if !(self.extent > 0.0) || !self.extent.is_finite() {
            return Err(FieldsError::InvalidSpec(format!(
                "extent = {} must be finite and > 0",
                self.extent
            )));
        }
        if !(self.puncture_radius >= 0.0) || !self.puncture_radius.is_finite() {
            return Err(FieldsError::InvalidSpec(format!(
                "puncture_radius = {} must be finite and >= 0",
                self.puncture_radius
            )));
        }
        if self.puncture_radius >= self.extent {
            return Err(FieldsError::InvalidSpec(format!(
                "puncture_radius = {} must be < extent = {}",
                self.puncture_radius, self.extent
            )));
        }
        Ok(())
    }
}

/// Immutable grid geometry: coordinates, activity/boundary masks, and
/// trapezoid quadrature weights.
#[derive(Debug, Clone)]
pub struct Grid {
    spec: GridSpec,
    h: f64,
    active: Vec<bool>,
    boundary: Vec<bool>,
    weight: Vec<f64>,
    active_count: usize,
}

impl Grid {
    /// Build the geometry for a spec.
    ///
    /// Active nodes are those inside the domain shape (with a 1e-12 relative
    /// slack so nodes exactly on the sphere `|x| = L` count) and outside the
    /// puncture. Boundary nodes are active nodes missing at least one of
    /// their six axis neighbors (outer shell, ball rim, and puncture rim
    /// alike). Quadrature weights follow the tensor-product trapezoid rule where the
    /// active set is clipped by the bounding lattice (flat cube faces: the
    /// half-cell really is absent, so the factor 1/2 per clipped axis is
    /// exact on constants). Where the active set is clipped by a curved rim
    /// (ball surface, puncture), nodes keep full weight: on a staircase
    /// boundary the over- and undershoot of full cells largely cancel, and
    /// halving entire rim shells would introduce a first-order deficit.
    pub fn build(spec: GridSpec) -> Result<Self, FieldsError> {
        spec.validate()?;
        let n = spec.n;
        let total = n * n * n;
        let h = spec.spacing();
        let mut grid = Grid {
            spec,
            h,
            active: vec![false; total],
            boundary: vec![false; total],
            weight: vec![0.0; total],
            active_count: 0,
        };
        for idx in 0..total {
            let x = grid.coord(idx);
            let r = norm3(&x);
            let inside = match spec.shape {
                DomainShape::Cube => true,
                DomainShape::Ball => r <= spec.extent * (1.0 + 1e-12),
            };
            let outside_puncture =
                spec.puncture_radius == 0.0 || r >= spec.puncture_radius * (1.0 - 1e-12);
            grid.active[idx] = inside && outside_puncture;
            if grid.active[idx] {
                grid.active_count += 1;
            }
        }
        for idx in 0..total {
            if !grid.active[idx] {
                continue;
            }
            let (i, j, k) = grid.lattice(idx);
            let lattice = [i, j, k];
            let mut w = 1.0;
            let mut on_boundary = false;
            for axis in 0..3 {
                let minus = grid.neighbor(idx, axis, -1);
                let plus = grid.neighbor(idx, axis, 1);
                if minus.is_none() || plus.is_none() {
                    on_boundary = true;
                }
                if lattice[axis] == 0 || lattice[axis] == n - 1 {
                    w *= 0.5;
                }
            }
            grid.weight[idx] = w;
            grid.boundary[idx] = on_boundary;
        }
        Ok(grid)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Nodes per axis.
    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// Grid spacing.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Total node count `n^3` (active or not).
    pub fn node_count(&self) -> usize {
        self.spec.n.pow(3)
    }

    /// Number of active nodes.
    pub fn active_count(&self) -> usize {
        self.active_count
    }

    /// Flat index of the node at lattice coordinates `(i, j, k)`.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.spec.n * (j + self.spec.n * k)
    }

    /// Lattice coordinates of a flat index.
    pub fn lattice(&self, idx: usize) -> (usize, usize, usize) {
        let n = self.spec.n;
        (idx % n, (idx / n) % n, idx / (n * n))
    }

    /// Spatial coordinates of a node.
    pub fn coord(&self, idx: usize) -> Vec3 {
        let (i, j, k) = self.lattice(idx);
        let l = self.spec.extent;
        [
            -l + self.h * i as f64,
            -l + self.h * j as f64,
            -l + self.h * k as f64,
        ]
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.active[idx]
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.boundary[idx]
    }

    /// Trapezoid weight (0 for inactive nodes).
    pub fn quad_weight(&self, idx: usize) -> f64 {
        self.weight[idx]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    /// Index of the active axis neighbor `step` lattice units along `axis`,
    /// if it exists (in the lattice and active).
    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> Option<usize> {
        let n = self.spec.n as isize;
        let (i, j, k) = self.lattice(idx);
        let mut c = [i as isize, j as isize, k as isize];
        c[axis] += step;
        if c[axis] < 0 || c[axis] >= n {
            return None;
        }
        let nb = self.index(c[0] as usize, c[1] as usize, c[2] as usize);
        if self.active[nb] {
            Some(nb)
        } else {
            None
        }
    }

    /// Iterate over active node indices.
    pub fn active_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&i| self.active[i])
    }
}

// ---------------------------------------------------------------------------
// Stencils and derivative operators
// ---------------------------------------------------------------------------

/// First-derivative stencil of a node along one axis: central where both
/// neighbors are active, one-sided otherwise. `Flat` marks an axis with no
/// active neighbor on either side (a ball grid's axis poles have two such
/// tangential axes); the derivative along a flat axis is defined as zero,
/// the constant extension. A node flat along all three axes carries no
/// derivative information at all, and the gradient operators reject it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisStencil {
    Central { plus: usize, minus: usize },
    Forward { plus: usize },
    Backward { minus: usize },
    Flat,
}

/// Pick the stencil for `idx` along `axis`.
pub fn axis_stencil(grid: &Grid, idx: usize, axis: usize) -> AxisStencil {
    let plus = grid.neighbor(idx, axis, 1);
    let minus = grid.neighbor(idx, axis, -1);
    match (plus, minus) {
        (Some(p), Some(m)) => AxisStencil::Central { plus: p, minus: m },
        (Some(p), None) => AxisStencil::Forward { plus: p },
        (None, Some(m)) => AxisStencil::Backward { minus: m },
        (None, None) => AxisStencil::Flat,
    }
}

/// The three axis stencils of a node, or an error if the node is fully
/// isolated.
pub fn node_stencils(grid: &Grid, idx: usize) -> Result<[AxisStencil; 3], FieldsError> {
    let st = [
        axis_stencil(grid, idx, 0),
        axis_stencil(grid, idx, 1),
        axis_stencil(grid, idx, 2),
    ];
    if st.iter().all(|s| matches!(s, AxisStencil::Flat)) {
        return Err(FieldsError::IsolatedNode { index: idx });
    }
    Ok(st)
}

fn check_len<T>(what: &'static str, values: &[T], expected: usize) -> Result<(), FieldsError> {
    if values.len() != expected {
        return Err(FieldsError::LengthMismatch {
            what,
            expected,
            got: values.len(),
        });
    }
    Ok(())
}

/// Apply a stencil to per-node scalars extracted by `get`.
fn stencil_derivative<F: Fn(usize) -> f64>(
    stencil: AxisStencil,
    idx: usize,
    h: f64,
    get: F,
) -> f64 {
    match stencil {
        AxisStencil::Central { plus, minus } => (get(plus) - get(minus)) / (2.0 * h),
        AxisStencil::Forward { plus } => (get(plus) - get(idx)) / h,
        AxisStencil::Backward { minus } => (get(idx) - get(minus)) / h,
        AxisStencil::Flat => 0.0,
    }
}

/// Discrete Jacobian of a vector field: at each active node a `Mat3` with
/// rows indexing the field component and columns the derivative direction.
pub fn gradient_vector(grid: &Grid, phi: &[Vec3]) -> Result<Vec<Mat3>, FieldsError> {
    check_len("phi", phi, grid.node_count())?;
    let mut out = vec![Mat3::zero(); grid.node_count()];
    for idx in grid.active_nodes() {
        let st = node_stencils(grid, idx)?;
        let mut d = Mat3::zero();
        for axis in 0..3 {
            for a in 0..3 {
                d.0[a][axis] = stencil_derivative(st[axis], idx, grid.h(), |nb| phi[nb][a]);
            }
        }
        out[idx] = d;
    }
    Ok(out)
}

/// Entrywise discrete gradient of a matrix field: per node, one `Mat3` of
/// partial derivatives per axis.
pub fn gradient_mat3(grid: &Grid, field: &[Mat3]) -> Result<Vec<[Mat3; 3]>, FieldsError> {
    check_len("matrix field", field, grid.node_count())?;
    let mut out = vec![[Mat3::zero(); 3]; grid.node_count()];
    for idx in grid.active_nodes() {
        let st = node_stencils(grid, idx)?;
        for axis in 0..3 {
            let mut d = Mat3::zero();
            for a in 0..3 {
                for b in 0..3 {
                    d.0[a][b] = stencil_derivative(st[axis], idx, grid.h(), |nb| field[nb].0[a][b]);
                }
            }
            out[idx][axis] = d;
        }
    }
    Ok(out)
}

/// Reconstruct the rotation matrices of a quaternion field node by node.
pub fn rotation_field(quat: &[UnitQuat]) -> Vec<Mat3> {
    quat.iter().map(|q| *cover(q).matrix()).collect()
}

/// Discrete curvature tensor `DR`: entrywise derivatives of the
/// reconstructed rotation matrices (never of raw quaternion coordinates, so
/// the result is insensitive to the sign ambiguity of the double cover).
pub fn gradient_rotation(grid: &Grid, quat: &[UnitQuat]) -> Result<Vec<[Mat3; 3]>, FieldsError> {
    check_len("quat", quat, grid.node_count())?;
    gradient_mat3(grid, &rotation_field(quat))
}

/// Discrete Jacobian of the quaternion field itself, viewed as a map into
/// the 3-sphere: per node and axis, the derivative of the four components.
///
/// Stencil neighbors are sign-aligned to the center value before
/// differencing (both lifts of a rotation are admissible; without alignment
/// an antipodal flip between adjacent nodes would produce O(1/h) garbage).
pub fn gradient_quat_components(
    grid: &Grid,
    quat: &[UnitQuat],
) -> Result<Vec<[[f64; 4]; 3]>, FieldsError> {
    check_len("quat", quat, grid.node_count())?;
    let mut out = vec![[[0.0; 4]; 3]; grid.node_count()];
    for idx in grid.active_nodes() {
        let qc = quat[idx];
        let aligned = |nb: usize| -> [f64; 4] {
            let q = quat[nb];
            let c = q.components();
            if q.dot(&qc) < 0.0 {
                [-c[0], -c[1], -c[2], -c[3]]
            } else {
                c
            }
        };
        let stencils = node_stencils(grid, idx)?;
        for axis in 0..3 {
            let h = grid.h();
            let d = match stencils[axis] {
                AxisStencil::Central { plus, minus } => {
                    let p = aligned(plus);
                    let m = aligned(minus);
                    [0, 1, 2, 3].map(|c| (p[c] - m[c]) / (2.0 * h))
                }
                AxisStencil::Forward { plus } => {
                    let p = aligned(plus);
                    let s = qc.components();
                    [0, 1, 2, 3].map(|c| (p[c] - s[c]) / h)
                }
                AxisStencil::Backward { minus } => {
                    let m = aligned(minus);
                    let s = qc.components();
                    [0, 1, 2, 3].map(|c| (s[c] - m[c]) / h)
                }
                AxisStencil::Flat => [0.0; 4],
            };
            out[idx][axis] = d;
        }
    }
    Ok(out)
}

/// Row-wise divergence of a matrix field: `(div S)_a = sum_i d_i S_{a i}`.
pub fn divergence_mat3(grid: &Grid, field: &[Mat3]) -> Result<Vec<Vec3>, FieldsError> {
    check_len("matrix field", field, grid.node_count())?;
    let mut out = vec![[0.0; 3]; grid.node_count()];
    for idx in grid.active_nodes() {
        let st = node_stencils(grid, idx)?;
        let mut v = [0.0; 3];
        for axis in 0..3 {
            for a in 0..3 {
                v[a] += stencil_derivative(st[axis], idx, grid.h(), |nb| field[nb].0[a][axis]);
            }
        }
        out[idx] = v;
    }
    Ok(out)
}

/// Divergence of a 3-tensor field over its derivative index:
/// `(div T)_{ab} = sum_k d_k T[k]_{ab}`.
pub fn divergence_tensor3(grid: &Grid, field: &[[Mat3; 3]]) -> Result<Vec<Mat3>, FieldsError> {
    check_len("tensor field", field, grid.node_count())?;
    let mut out = vec![Mat3::zero(); grid.node_count()];
    for idx in grid.active_nodes() {
        let st = node_stencils(grid, idx)?;
        let mut m = Mat3::zero();
        for axis in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    m.0[a][b] +=
                        stencil_derivative(st[axis], idx, grid.h(), |nb| field[nb][axis].0[a][b]);
                }
            }
        }
        out[idx] = m;
    }
    Ok(out)
}

/// Like [`divergence_mat3`] but restricted to nodes whose six axis neighbors
/// are all active (pure central stencils); elsewhere `None`. Used for
/// Euler-Lagrange residuals, where one-sided boundary noise would drown the
/// interior signal.
pub fn central_divergence_mat3(grid: &Grid, field: &[Mat3]) -> Result<Vec<Option<Vec3>>, FieldsError> {
    check_len("matrix field", field, grid.node_count())?;
    let mut out = vec![None; grid.node_count()];
    for idx in grid.active_nodes() {
        let mut v = [0.0; 3];
        let mut full = true;
        for axis in 0..3 {
            match (grid.neighbor(idx, axis, 1), grid.neighbor(idx, axis, -1)) {
                (Some(p), Some(m)) => {
                    for a in 0..3 {
                        v[a] += (field[p].0[a][axis] - field[m].0[a][axis]) / (2.0 * grid.h());
                    }
                }
                _ => {
                    full = false;
                    break;
                }
            }
        }
        if full {
            out[idx] = Some(v);
        }
    }
    Ok(out)
}

/// Central-only divergence of a 3-tensor field; `None` off the full-stencil
/// interior. See [`central_divergence_mat3`].
pub fn central_divergence_tensor3(
    grid: &Grid,
    field: &[[Mat3; 3]],
) -> Result<Vec<Option<Mat3>>, FieldsError> {
    check_len("tensor field", field, grid.node_count())?;
    let mut out = vec![None; grid.node_count()];
    for idx in grid.active_nodes() {
        let mut m = Mat3::zero();
        let mut full = true;
        for axis in 0..3 {
            match (grid.neighbor(idx, axis, 1), grid.neighbor(idx, axis, -1)) {
                (Some(p), Some(mi)) => {
                    for a in 0..3 {
                        for b in 0..3 {
                            m.0[a][b] +=
                                (field[p][axis].0[a][b] - field[mi][axis].0[a][b]) / (2.0 * grid.h());
                        }
                    }
                }
                _ => {
                    full = false;
                    break;
                }
            }
        }
        if full {
            out[idx] = Some(m);
        }
    }
    Ok(out)
}

/// Trapezoid quadrature of a nodal density: `h^3 sum_active w(node) d(node)`.
pub fn integrate_nodal(grid: &Grid, density: &[f64]) -> f64 {
    let h3 = grid.h().powi(3);
    let mut acc = 0.0;
    for idx in grid.active_nodes() {
        acc += grid.quad_weight(idx) * density[idx];
    }
    acc * h3
}

// ---------------------------------------------------------------------------
// States
// ---------------------------------------------------------------------------

/// A full discrete configuration: displacement and microrotation per node,
/// plus the mask of nodes frozen to their boundary data.
#[derive(Debug, Clone)]
pub struct GridState {
    pub grid: Grid,
    /// Displacement, `n^3` entries, zeros at inactive nodes.
    pub phi: Vec<Vec3>,
    /// Microrotation as unit quaternions, identity at inactive nodes.
    pub quat: Vec<UnitQuat>,
    /// Frozen nodes; must include every boundary node.
    pub dirichlet: Vec<bool>,
}

impl GridState {
    /// The rest configuration: `phi = 0`, identity rotations, boundary pinned.
    pub fn new(grid: Grid) -> Self {
        let total = grid.node_count();
        let dirichlet = grid.boundary_mask().to_vec();
        GridState {
            grid,
            phi: vec![[0.0; 3]; total],
            quat: vec![UnitQuat::identity(); total],
            dirichlet,
        }
    }

    /// The stress-free configuration: `phi(x) = x`, identity rotations.
    pub fn stress_free(grid: Grid) -> Self {
        let mut st = GridState::new(grid);
        for idx in st.grid.active_nodes() {
            st.phi[idx] = st.grid.coord(idx);
        }
        st
    }

    /// Check array lengths, value finiteness, and that the Dirichlet mask
    /// pins every boundary node.
    pub fn validate(&self) -> Result<(), FieldsError> {
        let total = self.grid.node_count();
        check_len("phi", &self.phi, total)?;
        check_len("quat", &self.quat, total)?;
        check_len("dirichlet", &self.dirichlet, total)?;
        for idx in self.grid.active_nodes() {
            if self.phi[idx].iter().any(|v| !v.is_finite()) {
                return Err(FieldsError::NonFinite { what: "phi", index: idx });
            }
            if self.grid.is_boundary(idx) && !self.dirichlet[idx] {
                return Err(FieldsError::UnpinnedBoundary(idx));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Analytic field sampling
// ---------------------------------------------------------------------------

/// Named closed-form displacement fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiField {
    /// `phi = 0`.
    Zero,
    /// `phi(x) = x` (stress-free placement).
    Identity,
    /// `phi(x) = (4/3) x log|x|` — the displacement of the singular pair.
    Singular,
}

/// Named closed-form rotation fields (as quaternion lifts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotField {
    /// Constant field `q0`.
    Constant(UnitQuatRepr),
    /// The singular microrotation `2 x^ (x^)^t - I`, delivered as its lift
    /// `q = (0, x/|x|)` so that `cover` reproduces it exactly.
    Singular,
    /// The equator configuration `q = (0, x/|x|)` viewed as a sphere-valued
    /// map; samples identically to `Singular` (they are the same lift).
    Equator,
}

/// Serializable quaternion components `[w, x, y, z]` for configs and files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuatRepr(pub [f64; 4]);

impl UnitQuatRepr {
    pub fn to_quat(&self) -> Result<UnitQuat, AlgebraError> {
        UnitQuat::normalized(self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

/// Evaluate a displacement field at every active node.
pub fn sample_phi(grid: &Grid, field: &PhiField) -> Result<Vec<Vec3>, FieldsError> {
    if matches!(field, PhiField::Singular) && grid.spec().puncture_radius == 0.0 {
        return Err(FieldsError::RequiresPuncture("singular displacement"));
    }
    let mut out = vec![[0.0; 3]; grid.node_count()];
    for idx in grid.active_nodes() {
        let x = grid.coord(idx);
        out[idx] = match field {
            PhiField::Zero => [0.0; 3],
            PhiField::Identity => x,
            PhiField::Singular => {
                let r = norm3(&x);
                let s = (4.0 / 3.0) * r.ln();
                [s * x[0], s * x[1], s * x[2]]
            }
        };
    }
    Ok(out)
}

/// Evaluate a rotation field (as quaternions) at every active node.
pub fn sample_quat(grid: &Grid, field: &RotField) -> Result<Vec<UnitQuat>, FieldsError> {
    if matches!(field, RotField::Singular | RotField::Equator)
        && grid.spec().puncture_radius == 0.0
    {
        return Err(FieldsError::RequiresPuncture("singular/equator rotation"));
    }
    let mut out = vec![UnitQuat::identity(); grid.node_count()];
    for idx in grid.active_nodes() {
        out[idx] = match field {
            RotField::Constant(q0) => q0.to_quat()?,
            RotField::Singular | RotField::Equator => {
                let x = grid.coord(idx);
                let r = norm3(&x);
                UnitQuat::normalized(0.0, x[0] / r, x[1] / r, x[2] / r)?
            }
        };
    }
    Ok(out)
}

/// Sample a full state (Dirichlet mask = boundary nodes).
pub fn sample_state(grid: &Grid, phi: &PhiField, rot: &RotField) -> Result<GridState, FieldsError> {
    let phi_values = sample_phi(grid, phi)?;
    let quat_values = sample_quat(grid, rot)?;
    let dirichlet = grid.boundary_mask().to_vec();
    let st = GridState {
        grid: grid.clone(),
        phi: phi_values,
        quat: quat_values,
        dirichlet,
    };
    st.validate()?;
    Ok(st)
}

// ---------------------------------------------------------------------------
// State files
// ---------------------------------------------------------------------------

/// On-disk layout: flat arrays in x-fastest node order, inactive slots
/// zero-filled. `phi` has `3 n^3` reals, `quat` has `4 n^3` reals in
/// `(w, x, y, z)` order, masks are 0/1 bytes of length `n^3`.
#[derive(Debug, Serialize, Deserialize)]
struct StateFile {
    spec: GridSpec,
    phi: Vec<f64>,
    quat: Vec<f64>,
    active: Vec<u8>,
    dirichlet: Vec<u8>,
}

/// Serialize a state to a structured-text (JSON) file.
pub fn write_state(state: &GridState, path: &Path) -> Result<(), FieldsError> {
    state.validate()?;
    let grid = &state.grid;
    let total = grid.node_count();
    let mut phi = vec![0.0; 3 * total];
    let mut quat = vec![0.0; 4 * total];
    let mut active = vec![0u8; total];
    let mut dirichlet = vec![0u8; total];
    for idx in 0..total {
        dirichlet[idx] = state.dirichlet[idx] as u8;
        if !grid.is_active(idx) {
            continue;
        }
        active[idx] = 1;
        for c in 0..3 {
            phi[3 * idx + c] = state.phi[idx][c];
        }
        let q = state.quat[idx].components();
        for c in 0..4 {
            quat[4 * idx + c] = q[c];
        }
    }
    let file = StateFile {
        spec: *grid.spec(),
        phi,
        quat,
        active,
        dirichlet,
    };
    let mut text = serde_json::to_string(&file)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Read a state file back; inverse of [`write_state`].
///
/// Quaternions deviating from unit norm by more than 1e-6 are rejected;
/// smaller drift is renormalized (bit-exact values within 1e-12 are kept
/// untouched, so write/read round trips are bit-identical).
pub fn read_state(path: &Path) -> Result<GridState, FieldsError> {
    let text = std::fs::read_to_string(path)?;
    let file: StateFile = serde_json::from_str(&text)?;
    let grid = Grid::build(file.spec)?;
    let total = grid.node_count();
    check_len("phi array", &file.phi, 3 * total)?;
    check_len("quat array", &file.quat, 4 * total)?;
    check_len("active mask", &file.active, total)?;
    check_len("dirichlet mask", &file.dirichlet, total)?;
    for idx in 0..total {
        if (file.active[idx] != 0) != grid.is_active(idx) {
            return Err(FieldsError::SpecMismatch(format!(
                "active mask disagrees with the grid geometry at node {idx}"
            )));
        }
    }
    let mut state = GridState::new(grid);
    for idx in 0..total {
        state.dirichlet[idx] = file.dirichlet[idx] != 0;
        if !state.grid.is_active(idx) {
            continue;
        }
        let p = [file.phi[3 * idx], file.phi[3 * idx + 1], file.phi[3 * idx + 2]];
        if p.iter().any(|v| !v.is_finite()) {
            return Err(FieldsError::NonFinite { what: "phi", index: idx });
        }
        state.phi[idx] = p;
        let q = [
            file.quat[4 * idx],
            file.quat[4 * idx + 1],
            file.quat[4 * idx + 2],
            file.quat[4 * idx + 3],
        ];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(FieldsError::BadQuaternion {
                index: idx,
                deviation: if norm.is_finite() { (norm - 1.0).abs() } else { f64::INFINITY },
            });
        }
        state.quat[idx] = UnitQuat::normalized(q[0], q[1], q[2], q[3])?;
    }
    state.validate()?;
    Ok(state)
}
