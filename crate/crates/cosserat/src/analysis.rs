//! Analytic diagnostics: closed forms of the log-singular pair, the
//! monotonicity profile and its radial comparison construction, the
//! sharpened Kato constant, and the nonexistence coefficient scan with its
//! p-threshold.

use crate::algebra::{
    apply_p, cover, norm3, scale3, sub3, tangent_project, MaterialParams, Mat3,
    UnitQuat, Vec3,
};
use crate::energy::{el_residuals, EnergyError, LoadSpec};
use crate::fields::{
    gradient_quat_components, gradient_vector, rotation_field, DomainShape, FieldsError, Grid,
    GridSpec, GridState, PhiField, RotField,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Fields(#[from] FieldsError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Algebra(#[from] crate::algebra::AlgebraError),
}

// ---------------------------------------------------------------------------
// The log-singular pair, pointwise
// ---------------------------------------------------------------------------

/// Closed-form data of the singular pair
///
/// `phi(x) = (4/3) x log|x|,   R(x) = 2 x^ (x^)t - I`
///
/// at one point, together with first derivatives and the divergence
/// identities it satisfies.
#[derive(Debug, Clone)]
pub struct SingularBundle {
    pub phi: Vec3,
    pub rot: Mat3,
    /// `Dphi = (4/3)(log|x| I + x^ (x^)t)`.
    pub d_phi: Mat3,
    /// `DR[k] = (2/|x|)(e_k (x^)t + x^ e_k^t - 2 x^_k x^ (x^)t)`.
    pub d_rot: [Mat3; 3],
    /// `lap phi = 4 x / |x|^2`.
    pub lap_phi: Vec3,
    /// `div R`, contracted from `d_rot`; equals `lap_phi`.
    pub div_rot: Vec3,
    /// `div(|DR|^{p-2} DR)` under the half-Frobenius curvature norm
    /// `|DR| = |DR|_F / 2` (on this pair `|DR|^2 = 4/|x|^2`), which yields
    /// the tidy closed form `(2^p/|x|^p)(I - 3 x^ (x^)t)`. Under the plain
    /// Frobenius convention used throughout this crate (`|DR|^2 = 16/|x|^2`)
    /// the observed divergence is `2^{2p-2}/|x|^p (I - 3 x^ (x^)t)`, i.e.
    /// `2^{p-2}` times this field; the two agree exactly at p = 2.
    pub div_stress_half_frobenius: Mat3,
}

/// Evaluate the singular pair and its derivatives at `x != 0`, `2 <= p <= 3`.
pub fn singular_bundle(x: &Vec3, p: f64) -> Result<SingularBundle, AnalysisError> {
    let r = norm3(x);
    if !(r > 1e-8) {
        return Err(AnalysisError::InvalidInput(format!(
            "point too close to the singularity: |x| = {r:e} <= 1e-8"
        )));
    }
    if !(2.0..=3.0).contains(&p) {
        return Err(AnalysisError::InvalidInput(format!(
            "p = {p} outside [2, 3]"
        )));
    }
    let xh = scale3(x, 1.0 / r);
    let u = Mat3::outer(&xh, &xh);
    let log_r = r.ln();

    let phi = scale3(x, 4.0 / 3.0 * log_r);
    let rot = u * 2.0 - Mat3::identity();
    let d_phi = (Mat3::identity() * log_r + u) * (4.0 / 3.0);

    let mut d_rot = [Mat3::zero(); 3];
    for k in 0..3 {
        let mut e_k = [0.0; 3];
        e_k[k] = 1.0;
        d_rot[k] =
            (Mat3::outer(&e_k, &xh) + Mat3::outer(&xh, &e_k) - u * (2.0 * xh[k])) * (2.0 / r);
    }

    let lap_phi = scale3(x, 4.0 / (r * r));
    let mut div_rot = [0.0; 3];
    for i in 0..3 {
        for k in 0..3 {
            div_rot[i] += d_rot[k].0[i][k];
        }
    }

    let div_stress_half_frobenius = (Mat3::identity() - u * 3.0) * (2f64.powf(p) / r.powf(p));

    Ok(SingularBundle {
        phi,
        rot,
        d_phi,
        d_rot,
        lap_phi,
        div_rot,
        div_stress_half_frobenius,
    })
}

// ---------------------------------------------------------------------------
// Grid verification of the singular pair
// ---------------------------------------------------------------------------

/// Residual norms over an annulus.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AnnulusNorms {
    pub phi_max: f64,
    pub phi_l2: f64,
    pub rot_max: f64,
    pub rot_l2: f64,
    pub nodes: usize,
}

/// Two-grid residual study of the sampled singular pair.
#[derive(Debug, Clone, Serialize)]
pub struct SingularReport {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub p: f64,
    /// Physical puncture radius, shared by both grids.
    pub r0: f64,
    /// Annulus (inner, outer) over which residuals are measured.
    pub annulus: (f64, f64),
    pub coarse: AnnulusNorms,
    pub fine: AnnulusNorms,
    /// Observed convergence orders `log2(coarse/fine)`.
    pub order_phi_max: f64,
    pub order_phi_l2: f64,
    pub order_rot_max: f64,
    pub order_rot_l2: f64,
    /// Largest entry of `tangent_project(R(x), aI + b x (x)t)` over the
    /// random orthogonality probe (analytically zero).
    pub ortho_max: f64,
}

impl SingularReport {
    /// The smallest of the four observed orders.
    pub fn min_order(&self) -> f64 {
        self.order_phi_max
            .min(self.order_phi_l2)
            .min(self.order_rot_max)
            .min(self.order_rot_l2)
    }
}

fn singular_state(n: usize, r0: f64) -> Result<GridState, AnalysisError> {
    let grid = Grid::build(GridSpec {
        n,
        extent: 1.0,
        shape: DomainShape::Ball,
        puncture_radius: r0,
    })?;
    Ok(crate::fields::sample_state(
        &grid,
        &PhiField::Singular,
        &RotField::Singular,
    )?)
}

/// Sample the singular pair on a punctured unit ball at two resolutions
/// (coarse `n`, fine `2(n-1)+1`, same physical puncture `r0 = 3 h_coarse`),
/// measure both strong-form residuals over a shared interior annulus, and
/// report the observed convergence orders, which should be near 2 for the
/// central stencils. Both equations hold exactly in the continuum at the
/// identity weighting `(mu_e, mu_c, mu_0) = (1, 1, 1/9)` (the parameter
/// point where the stress projector is the identity map), so the residuals
/// are pure discretization error and must shrink under refinement.
///
/// The orthogonality mechanism behind the rotation equation is probed
/// directly at `10^3` random points and scalars: every combination
/// `aI + b x (x)t` is normal to the rotation's tangent space, so
/// `tangent_project` annihilates it to roundoff.
pub fn verify_singular(n_coarse: usize, p: f64, seed: u64) -> Result<SingularReport, AnalysisError> {
    if n_coarse < 17 {
        return Err(AnalysisError::InvalidInput(format!(
            "n_coarse = {n_coarse} too small: the puncture (3h) plus two stencil layers \
             on each side must leave a nonempty annulus, which needs n >= 17"
        )));
    }
    if !(2.0..3.0).contains(&p) {
        return Err(AnalysisError::InvalidInput(format!(
            "p = {p} outside [2, 3)"
        )));
    }
    let n_fine = 2 * (n_coarse - 1) + 1;
    let h_coarse = 2.0 / (n_coarse as f64 - 1.0);
    let r0 = 3.0 * h_coarse;
    let c = MaterialParams::identity_weighting(p)?;
    let loads = LoadSpec::default();

    let margin = 0.01;
    let inner = r0 + 2.0 * h_coarse + margin;
    let outer = 1.0 - 2.0 * h_coarse - margin;
    if inner >= outer {
        return Err(AnalysisError::InvalidInput(format!(
            "annulus degenerate at n = {n_coarse}: [{inner}, {outer}]"
        )));
    }

    let mut norms = Vec::with_capacity(2);
    for n in [n_coarse, n_fine] {
        let state = singular_state(n, r0)?;
        let res = el_residuals(&state, &c, &loads)?;
        let (phi_max, phi_l2, rot_max, rot_l2, nodes) = res.annulus_norms(&state, inner, outer);
        norms.push(AnnulusNorms {
            phi_max,
            phi_l2,
            rot_max,
            rot_l2,
            nodes,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ortho_max = 0.0f64;
    let mut drawn = 0usize;
    while drawn < 1000 {
        let x = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let r = norm3(&x);
        if !(0.3..=1.0).contains(&r) {
            continue;
        }
        drawn += 1;
        let a: f64 = rng.random_range(-2.0..2.0);
        let b: f64 = rng.random_range(-2.0..2.0);
        let xh = scale3(&x, 1.0 / r);
        let rot = cover(&UnitQuat::normalized(0.0, xh[0], xh[1], xh[2])?);
        let probe = Mat3::identity() * a + Mat3::outer(&x, &x) * b;
        ortho_max = ortho_max.max(tangent_project(&rot, &probe).max_abs());
    }

    let order = |c: f64, f: f64| (c / f).log2();
    Ok(SingularReport {
        n_coarse,
        n_fine,
        p,
        r0,
        annulus: (inner, outer),
        coarse: norms[0],
        fine: norms[1],
        order_phi_max: order(norms[0].phi_max, norms[1].phi_max),
        order_phi_l2: order(norms[0].phi_l2, norms[1].phi_l2),
        order_rot_max: order(norms[0].rot_max, norms[1].rot_max),
        order_rot_l2: order(norms[0].rot_l2, norms[1].rot_l2),
        ortho_max,
    })
}

// ---------------------------------------------------------------------------
// Monotonicity quantities
// ---------------------------------------------------------------------------

/// The pointwise comparison density
///
/// `Q = |P(M)|^2 - |P(M - (M r^) (r^)t)|^2`
///
/// for `M = R^t Dphi` and the unit radial direction `r^`: the excess of the
/// full stress norm over the stress with its radial column removed. For a
/// conformal weighting (`mu_e = mu_c = 9 mu_0`, where `|P A|^2` is a
/// multiple of `|A|^2`) the removal is an orthogonal projection and `Q =
/// mu |M r^|^2 >= 0`; for lopsided weightings `Q` can be negative (the
/// cross terms between symmetric and skew parts no longer cancel), which is
/// why the monotonicity diagnostics run at conformal constants.
pub fn q_density(c: &MaterialParams, m: &Mat3, radial: &Vec3) -> f64 {
    let len = norm3(radial);
    if len <= 1e-14 {
        return 0.0;
    }
    let rh = scale3(radial, 1.0 / len);
    let m_rh = m.mul_vec(&rh);
    let removed = *m - Mat3::outer(&m_rh, &rh);
    let full = apply_p(m, c).norm_sq();
    let rest = apply_p(&removed, c).norm_sq();
    full - rest
}

/// The density `|P(R^t Dphi)|^2 + |DR|^p` (no identity subtraction), the
/// radial derivative of R, and Q, per active node.
struct MonotonicityFields {
    density: Vec<f64>,
    radial_term: Vec<f64>,
    q: Vec<f64>,
}

fn monotonicity_fields(
    state: &GridState,
    c: &MaterialParams,
    center: &Vec3,
) -> Result<MonotonicityFields, AnalysisError> {
    let grid = &state.grid;
    let rot = rotation_field(&state.quat);
    let d_phi = gradient_vector(grid, &state.phi)?;
    let d_rot = crate::fields::gradient_mat3(grid, &rot)?;
    let total = grid.node_count();
    let mut out = MonotonicityFields {
        density: vec![0.0; total],
        radial_term: vec![0.0; total],
        q: vec![0.0; total],
    };
    for idx in grid.active_nodes() {
        let rel = sub3(&grid.coord(idx), center);
        let m = rot[idx].transpose() * d_phi[idx];
        let dr2: f64 = d_rot[idx].iter().map(|a| a.norm_sq()).sum();
        out.density[idx] = apply_p(&m, c).norm_sq() + dr2.powf(c.p / 2.0);
        out.q[idx] = q_density(c, &m, &rel);
        let len = norm3(&rel);
        if len > 1e-14 {
            let rh = scale3(&rel, 1.0 / len);
            let mut radial_dr = Mat3::zero();
            for k in 0..3 {
                radial_dr = radial_dr + d_rot[idx][k] * rh[k];
            }
            let weight = if dr2 > 0.0 || c.p == 2.0 {
                dr2.powf((c.p - 2.0) / 2.0)
            } else {
                0.0
            };
            out.radial_term[idx] = weight * radial_dr.norm_sq();
        }
    }
    Ok(out)
}

/// Scaled energy profile and monotonicity deficit.
#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub radii: Vec<f64>,
    /// `Phi(r) = r^{p-3} Int_{B_r} (|P(R^t Dphi)|^2 + |DR|^p)`.
    pub phi_profile: Vec<f64>,
    /// Annulus integrals of `|x|^{p-3} (|DR|^{p-2} |d_rad R|^2 + Q)`
    /// between consecutive radii (length `radii.len() - 1`).
    pub deficits: Vec<f64>,
    /// Minimum of Q over active nodes within the largest radius.
    pub q_min: f64,
}

/// Evaluate the monotonicity profile around `center` at the given radii.
/// Ball integrals use node-indicator quadrature: a node contributes its full
/// trapezoid weight iff `|x - center| <= r`.
pub fn monotonicity_profile(
    state: &GridState,
    c: &MaterialParams,
    center: &Vec3,
    radii: &[f64],
) -> Result<MonotonicityReport, AnalysisError> {
    c.validate()?;
    if radii.is_empty() {
        return Err(AnalysisError::InvalidInput("no radii given".into()));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] <= 0.0 {
        return Err(AnalysisError::InvalidInput(
            "radii must be positive and strictly increasing".into(),
        ));
    }
    let grid = &state.grid;
    let l = grid.spec().extent;
    let r_max = *radii.last().unwrap();
    if r_max > l * (1.0 + 1e-12) {
        return Err(AnalysisError::InvalidInput(format!(
            "radius {r_max} exceeds the grid extent {l}"
        )));
    }
    let fields = monotonicity_fields(state, c, center)?;
    let h3 = grid.h().powi(3);
    let mut phi_profile = vec![0.0; radii.len()];
    let mut deficits = vec![0.0; radii.len().saturating_sub(1)];
    let mut q_min = f64::INFINITY;
    for idx in grid.active_nodes() {
        let dist = norm3(&sub3(&grid.coord(idx), center));
        if dist > r_max {
            continue;
        }
        let wh3 = grid.quad_weight(idx) * h3;
        for (i, &r) in radii.iter().enumerate() {
            if dist <= r {
                phi_profile[i] += wh3 * fields.density[idx];
            }
        }
        for i in 0..deficits.len() {
            if dist > radii[i] && dist <= radii[i + 1] {
                deficits[i] += wh3
                    * dist.powf(c.p - 3.0)
                    * (fields.radial_term[idx] + fields.q[idx]);
            }
        }
        q_min = q_min.min(fields.q[idx]);
    }
    for (i, &r) in radii.iter().enumerate() {
        phi_profile[i] *= r.powf(c.p - 3.0);
    }
    if !q_min.is_finite() {
        q_min = 0.0;
    }
    Ok(MonotonicityReport {
        radii: radii.to_vec(),
        phi_profile,
        deficits,
        q_min,
    })
}

/// Pointwise Q on every active node (0 where inactive), radial directions
/// taken from `center`.
pub fn pointwise_q(
    state: &GridState,
    c: &MaterialParams,
    center: &Vec3,
) -> Result<Vec<f64>, AnalysisError> {
    c.validate()?;
    Ok(monotonicity_fields(state, c, center)?.q)
}

/// Radial comparison construction: inside the ball of radius `t` around
/// `center`, replace the fields by their values at the radial projection
/// onto the sphere of radius `t` (trilinear interpolation; quaternions are
/// sign-aligned to the first cell corner before blending and renormalized).
/// Nodes outside the ball, and the degenerate center node if present, are
/// returned unchanged.
pub fn radial_comparison(
    state: &GridState,
    center: &Vec3,
    t: f64,
) -> Result<GridState, AnalysisError> {
    let grid = &state.grid;
    let l = grid.spec().extent;
    let h = grid.h();
    if !(t > 0.0) || t > l - h {
        return Err(AnalysisError::InvalidInput(format!(
            "comparison radius t = {t} outside (0, extent - h = {}]",
            l - h
        )));
    }
    let n = grid.n();
    let mut out = state.clone();
    for idx in grid.active_nodes() {
        let rel = sub3(&grid.coord(idx), center);
        let dist = norm3(&rel);
        if dist >= t * (1.0 - 1e-12) || dist <= 1e-14 {
            continue;
        }
        let y = crate::algebra::add3(center, &scale3(&rel, t / dist));
        // Cell containing y.
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let s = (y[a] + l) / h;
            let mut i0 = s.floor() as isize;
            i0 = i0.clamp(0, n as isize - 2);
            base[a] = i0 as usize;
            frac[a] = (s - i0 as f64).clamp(0.0, 1.0);
        }
        let mut phi = [0.0f64; 3];
        let mut quat = [0.0f64; 4];
        let mut ref_q: Option<[f64; 4]> = None;
        for di in 0..2 {
            for dj in 0..2 {
                for dk in 0..2 {
                    let corner = grid.index(base[0] + di, base[1] + dj, base[2] + dk);
                    if !grid.is_active(corner) {
                        return Err(AnalysisError::InvalidInput(format!(
                            "radial projection of node {idx} lands in a cell with \
                             inactive corner {corner}"
                        )));
                    }
                    let w = (if di == 1 { frac[0] } else { 1.0 - frac[0] })
                        * (if dj == 1 { frac[1] } else { 1.0 - frac[1] })
                        * (if dk == 1 { frac[2] } else { 1.0 - frac[2] });
                    for a in 0..3 {
                        phi[a] += w * state.phi[corner][a];
                    }
                    let mut qc = state.quat[corner].components();
                    match &ref_q {
                        None => ref_q = Some(qc),
                        Some(r) => {
                            let d: f64 = (0..4).map(|i| qc[i] * r[i]).sum();
                            if d < 0.0 {
                                for v in qc.iter_mut() {
                                    *v = -*v;
                                }
                            }
                        }
                    }
                    for a in 0..4 {
                        quat[a] += w * qc[a];
                    }
                }
            }
        }
        out.phi[idx] = phi;
        out.quat[idx] = UnitQuat::normalized(quat[0], quat[1], quat[2], quat[3])?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Kato constant and the nonexistence scan
// ---------------------------------------------------------------------------

/// The sharpened Kato constant
///
/// `kappa(m, p, eps) = (m - 1 + (1/eps - 1)(p-2)^2) / (m - eps)`,
///
/// always `> 1/2` for `m >= 2`, `eps` in (0, 1].
pub fn kato_kappa(m: u32, p: f64, eps: f64) -> Result<f64, AnalysisError> {
    if m < 2 {
        return Err(AnalysisError::InvalidInput(format!("m = {m} must be >= 2")));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(AnalysisError::InvalidInput(format!(
            "eps = {eps} outside (0, 1]"
        )));
    }
    if !p.is_finite() {
        return Err(AnalysisError::InvalidInput(format!("p = {p} not finite")));
    }
    let s = (p - 2.0) * (p - 2.0);
    let m = m as f64;
    Ok((m - 1.0 + (1.0 / eps - 1.0) * s) / (m - eps))
}

/// The closed-form epsilon
///
/// `eps(m, p) = ((p-2)^2 + sqrt((p-2)^4 + m (m-1-(p-2)^2)(p-2)^2))
///              / (m - 1 - (p-2)^2)`,
///
/// clamped to (0, 1]; returns 0 at p = 2 (callers floor it, e.g. at 1e-9).
/// For p near 2 it behaves like `sqrt(m/(m-1)) (p-2)`. It tracks the
/// minimizer of `kappa` in eps to leading order but is not its exact
/// stationary point (the true stationary point solves
/// `(m-1-s) eps^2 + 2 s eps - m s = 0`, `s = (p-2)^2`, whose root carries
/// `-s`, not `+s`, in the numerator); the value it attains stays within a
/// percent of the minimum over the scanned range, which the tests pin down.
pub fn optimal_eps(m: u32, p: f64) -> Result<f64, AnalysisError> {
    if m < 2 {
        return Err(AnalysisError::InvalidInput(format!("m = {m} must be >= 2")));
    }
    if !p.is_finite() {
        return Err(AnalysisError::InvalidInput(format!("p = {p} not finite")));
    }
    let s = (p - 2.0) * (p - 2.0);
    let m = m as f64;
    let denom = m - 1.0 - s;
    if denom <= 0.0 {
        return Err(AnalysisError::InvalidInput(format!(
            "m - 1 - (p-2)^2 = {denom} must be > 0"
        )));
    }
    let eps = (s + (s * s + m * denom * s).sqrt()) / denom;
    Ok(eps.min(1.0))
}

/// The two coefficients of the nonexistence criterion at `(p, eps)`:
///
/// `G = (2 - eps)/(1 + (1/eps - 1)(p-2)^2) + (p - 2)`,
/// `A = (3-p)/(1+p) G - 1/2`,   `B = (3-p)^2/4 G - 1`.
///
/// The criterion certifies nonexistence when `A > 0` and `B <= 0`.
pub fn nonexistence_coefficients(p: f64, eps: f64) -> Result<(f64, f64), AnalysisError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(AnalysisError::InvalidInput(format!(
            "eps = {eps} outside (0, 1]"
        )));
    }
    if !(2.0..3.0).contains(&p) {
        return Err(AnalysisError::InvalidInput(format!(
            "p = {p} outside [2, 3)"
        )));
    }
    let s = (p - 2.0) * (p - 2.0);
    let g = (2.0 - eps) / (1.0 + (1.0 / eps - 1.0) * s) + (p - 2.0);
    let a = (3.0 - p) / (1.0 + p) * g - 0.5;
    let b = (3.0 - p) * (3.0 - p) / 4.0 * g - 1.0;
    Ok((a, b))
}

/// One row of the nonexistence scan.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScanRow {
    pub p: f64,
    /// `optimal_eps(2, p)` floored at 1e-9.
    pub eps_star: f64,
    /// `kato_kappa(2, p, eps_star)`.
    pub kappa: f64,
    pub coeff_a: f64,
    pub coeff_b: f64,
    /// `coeff_a > 0 && coeff_b <= 0`.
    pub admissible: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub rows: Vec<ScanRow>,
    /// Largest `p` in the admissible prefix starting at the first row
    /// (NaN if the very first row already fails).
    pub threshold: f64,
}

/// Scan `p` over `[p_min, p_max]` with the given step and report where the
/// nonexistence criterion stops holding.
pub fn scan_nonexistence(p_min: f64, p_max: f64, step: f64) -> Result<ScanReport, AnalysisError> {
    if !(2.0 <= p_min && p_min < p_max && p_max < 3.0) {
        return Err(AnalysisError::InvalidInput(format!(
            "need 2 <= p_min < p_max < 3, got [{p_min}, {p_max}]"
        )));
    }
    if !(step > 0.0) {
        return Err(AnalysisError::InvalidInput(format!(
            "step = {step} must be > 0"
        )));
    }
    let mut rows = Vec::new();
    let count = ((p_max - p_min) / step).round() as usize;
    for i in 0..=count {
        let p = (p_min + i as f64 * step).min(p_max);
        let eps_star = optimal_eps(2, p)?.max(1e-9);
        let kappa = kato_kappa(2, p, eps_star)?;
        let (coeff_a, coeff_b) = nonexistence_coefficients(p, eps_star)?;
        rows.push(ScanRow {
            p,
            eps_star,
            kappa,
            coeff_a,
            coeff_b,
            admissible: coeff_a > 0.0 && coeff_b <= 0.0,
        });
    }
    let mut threshold = f64::NAN;
    for row in &rows {
        if row.admissible {
            threshold = row.p;
        } else {
            break;
        }
    }
    Ok(ScanReport { rows, threshold })
}

// ---------------------------------------------------------------------------
// Equator map energy
// ---------------------------------------------------------------------------

/// Quadrature vs closed form for the p-energy of the equator map
/// `u(x) = (0, x/|x|)` on the punctured unit ball.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EquatorReport {
    pub n: usize,
    pub p: f64,
    pub r0: f64,
    /// Grid quadrature of `|Du|^p` (sphere-valued derivative, so
    /// `|Du|^2 = 2/|x|^2` in the continuum).
    pub numeric: f64,
    /// `2^{p/2} 4 pi (1 - r0^{3-p}) / (3 - p)`.
    pub closed_form: f64,
    pub rel_error: f64,
}

/// Measure the equator map's p-energy on an `n`-per-axis punctured ball
/// with `r0 = puncture_cells * h`.
pub fn equator_energy(
    n: usize,
    p: f64,
    puncture_cells: usize,
) -> Result<EquatorReport, AnalysisError> {
    if !(2.0..3.0).contains(&p) {
        return Err(AnalysisError::InvalidInput(format!(
            "p = {p} outside [2, 3): the integral diverges at 3"
        )));
    }
    if puncture_cells == 0 {
        return Err(AnalysisError::InvalidInput(
            "puncture_cells must be >= 1 (the map is singular at 0)".into(),
        ));
    }
    let spec = GridSpec {
        n,
        extent: 1.0,
        shape: DomainShape::Ball,
        puncture_radius: 0.0,
    };
    spec.validate()?;
    let h = spec.spacing();
    let r0 = puncture_cells as f64 * h;
    let grid = Grid::build(GridSpec {
        puncture_radius: r0,
        ..spec
    })?;
    let state = crate::fields::sample_state(&grid, &PhiField::Zero, &RotField::Equator)?;
    let grads = gradient_quat_components(&grid, &state.quat)?;
    let total = grid.node_count();
    let mut density = vec![0.0; total];
    for idx in grid.active_nodes() {
        let mut du2 = 0.0;
        for axis in 0..3 {
            for comp in 0..4 {
                du2 += grads[idx][axis][comp] * grads[idx][axis][comp];
            }
        }
        density[idx] = du2.powf(p / 2.0);
    }
    let numeric = crate::fields::integrate_nodal(&grid, &density);
    let closed_form =
        2f64.powf(p / 2.0) * 4.0 * std::f64::consts::PI * (1.0 - r0.powf(3.0 - p)) / (3.0 - p);
    Ok(EquatorReport {
        n,
        p,
        r0,
        numeric,
        closed_form,
        rel_error: (numeric - closed_form).abs() / closed_form,
    })
}
