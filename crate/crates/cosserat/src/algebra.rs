//! Pointwise algebra for micropolar states: 3x3 matrices with the Frobenius
//! inner product, the dev/skew/trace splitting and the material weighting
//! built on it, unit quaternions, and the two-to-one quaternion covering of
//! SO(3) together with its differential.
//!
//! Everything here is exact node-level arithmetic; discretization lives in
//! [`crate::fields`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point or vector in R^3.
pub type Vec3 = [f64; 3];

/// Euclidean inner product of two 3-vectors.
pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Euclidean norm of a 3-vector.
pub fn norm3(a: &Vec3) -> f64 {
    dot3(a, a).sqrt()
}

/// Component-wise sum `a + b`.
pub fn add3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Component-wise difference `a - b`.
pub fn sub3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Scalar multiple `s * a`.
pub fn scale3(a: &Vec3, s: f64) -> Vec3 {
    [s * a[0], s * a[1], s * a[2]]
}

/// Errors from constructing or combining the algebraic primitives.
#[derive(Debug, Error)]
pub enum AlgebraError {
    /// Quaternion norm is too far from one for the requested operation.
    #[error("quaternion norm {norm} violates the unit constraint (tolerance {tol})")]
    NonUnitQuaternion { norm: f64, tol: f64 },
    /// Quaternion (or candidate) has a norm too small to normalize reliably.
    #[error("quaternion norm {0} is too small to normalize")]
    DegenerateQuaternion(f64),
    /// `retract` was fed `v = -q`, which has no well-defined direction.
    #[error("retraction hit the zero vector; step direction is undefined")]
    DegenerateRetraction,
    /// `cover_differential` requires a direction tangent to the unit sphere.
    #[error("direction is not tangent at the base quaternion (<q,v> = {0})")]
    NonTangentDirection(f64),
    /// A matrix failed the orthogonality / determinant test for SO(3).
    #[error("matrix is not a rotation (defect {0})")]
    NotARotation(f64),
    /// Material constants outside the admissible range.
    #[error("invalid material constants: {0}")]
    InvalidMaterial(String),
}

// ---------------------------------------------------------------------------
// 3x3 matrices
// ---------------------------------------------------------------------------

/// A real 3x3 matrix, row-major: `m.0[row][col]`.
///
/// When a matrix holds a Jacobian `Dphi`, rows index the target component and
/// columns the derivative direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    /// The zero matrix.
    pub fn zero() -> Self {
        Mat3([[0.0; 3]; 3])
    }

    /// The identity matrix.
    pub fn identity() -> Self {
        Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Rank-one matrix `a b^t` (entries `a_i b_j`).
    pub fn outer(a: &Vec3, b: &Vec3) -> Self {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = a[i] * b[j];
            }
        }
        Mat3(m)
    }

    /// Transpose.
    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    /// Trace.
    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Determinant.
    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Symmetric part `(A + A^t) / 2`.
    pub fn sym(&self) -> Self {
        let m = &self.0;
        let mut s = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] = 0.5 * (m[i][j] + m[j][i]);
            }
        }
        Mat3(s)
    }

    /// Skew part `(A - A^t) / 2`.
    pub fn skew(&self) -> Self {
        let m = &self.0;
        let mut s = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] = 0.5 * (m[i][j] - m[j][i]);
            }
        }
        Mat3(s)
    }

    /// Frobenius inner product `sum_ij A_ij B_ij`.
    pub fn dot(&self, other: &Mat3) -> f64 {
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                acc += self.0[i][j] * other.0[i][j];
            }
        }
        acc
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Matrix-vector product `A v`.
    pub fn mul_vec(&self, v: &Vec3) -> Vec3 {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// Maximum absolute entry.
    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for row in &self.0 {
            for &v in row {
                m = m.max(v.abs());
            }
        }
        m
    }
}

impl std::ops::Add for Mat3 {
    type Output = Mat3;
    fn add(self, rhs: Mat3) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.0[i][j] + rhs.0[i][j];
            }
        }
        Mat3(m)
    }
}

impl std::ops::Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, rhs: Mat3) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.0[i][j] - rhs.0[i][j];
            }
        }
        Mat3(m)
    }
}

impl std::ops::Mul<f64> for Mat3 {
    type Output = Mat3;
    fn mul(self, s: f64) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = s * self.0[i][j];
            }
        }
        Mat3(m)
    }
}

impl std::ops::Mul<Mat3> for Mat3 {
    type Output = Mat3;
    fn mul(self, rhs: Mat3) -> Mat3 {
        let a = &self.0;
        let b = &rhs.0;
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Mat3(m)
    }
}

// ---------------------------------------------------------------------------
// Material constants and the weighting map P
// ---------------------------------------------------------------------------

/// Material constants `(mu_e, mu_c, mu_0)` of the strain weighting together
/// with the curvature exponent `p`.
///
/// All three moduli must be strictly positive (a vanishing rotational
/// coupling `mu_c = 0` changes the character of the problem and is rejected),
/// and `p >= 2` so the curvature term stays convex and differentiable.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaterialParams {
    pub mu_e: f64,
    pub mu_c: f64,
    pub mu_0: f64,
    pub p: f64,
}

impl MaterialParams {
    /// Validated constructor.
    pub fn new(mu_e: f64, mu_c: f64, mu_0: f64, p: f64) -> Result<Self, AlgebraError> {
        let c = MaterialParams { mu_e, mu_c, mu_0, p };
        c.validate()?;
        Ok(c)
    }

    /// Check the admissibility of the constants.
    pub fn validate(&self) -> Result<(), AlgebraError> {
        for (name, v) in [("mu_e", self.mu_e), ("mu_c", self.mu_c), ("mu_0", self.mu_0)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(AlgebraError::InvalidMaterial(format!(
                    "{name} = {v} must be finite and > 0 (the mu_c = 0 limit is unsupported)"
                )));
            }
        }
        if !(self.p >= 2.0) || !self.p.is_finite() {
            return Err(AlgebraError::InvalidMaterial(format!(
                "curvature exponent p = {} must be finite and >= 2",
                self.p
            )));
        }
        Ok(())
    }

    /// Constants for which the weighting `P` is the identity map:
    /// `mu_e = mu_c = 1`, `mu_0 = 1/9`.
    ///
    /// On the orthogonal splitting A = dev + skew + (tr/3) I the map `P`
    /// scales the three parts by `sqrt(mu_e)`, `sqrt(mu_c)` and
    /// `3 sqrt(mu_0)`, so this is the unique choice with `P A = A`. The
    /// analytic singular configuration solves the Euler-Lagrange equations
    /// exactly in this regime, which is what the verification paths use.
    pub fn identity_weighting(p: f64) -> Result<Self, AlgebraError> {
        MaterialParams::new(1.0, 1.0, 1.0 / 9.0, p)
    }

    /// Constants with `P` a multiple of the identity (`mu_e = mu_c = 9 mu_0 = s`).
    ///
    /// In this conformal family the weighting commutes with column
    /// projections, which makes the radial-deficit integrand provably
    /// pointwise nonnegative; see [`crate::analysis::monotonicity_profile`].
    pub fn conformal_weighting(s: f64, p: f64) -> Result<Self, AlgebraError> {
        MaterialParams::new(s, s, s / 9.0, p)
    }
}

/// Orthogonal splitting of a matrix into trace-free symmetric part, skew
/// part, and trace: returns `(dev, skw, tr)` with
/// `A = dev + skw + (tr/3) I` and `dev` symmetric with zero trace.
///
/// The three summands are pairwise orthogonal in the Frobenius inner
/// product, so `|A|^2 = |dev|^2 + |skw|^2 + tr^2 / 3`.
pub fn decompose(a: &Mat3) -> (Mat3, Mat3, f64) {
    let tr = a.trace();
    let sym = a.sym();
    let mut dev = sym;
    for i in 0..3 {
        dev.0[i][i] -= tr / 3.0;
    }
    (dev, a.skew(), tr)
}

/// The material weighting
/// `P A = sqrt(mu_e) dev sym A + sqrt(mu_c) skew A + sqrt(mu_0) (tr A) I`.
///
/// Because the splitting is orthogonal,
/// `|P A|^2 = mu_e |dev|^2 + mu_c |skw|^2 + 3 mu_0 (tr A)^2`.
pub fn apply_p(a: &Mat3, c: &MaterialParams) -> Mat3 {
    let (dev, skw, tr) = decompose(a);
    let mut out = dev * c.mu_e.sqrt() + skw * c.mu_c.sqrt();
    let t = c.mu_0.sqrt() * tr;
    for i in 0..3 {
        out.0[i][i] += t;
    }
    out
}

/// The squared weighting `P(P A) = mu_e dev sym A + mu_c skew A + 3 mu_0 (tr A) I`.
///
/// This closed form is what `apply_p` composed with itself produces; it is
/// the map that appears in the Euler-Lagrange equations.
pub fn apply_p_twice(a: &Mat3, c: &MaterialParams) -> Mat3 {
    let (dev, skw, tr) = decompose(a);
    let mut out = dev * c.mu_e + skw * c.mu_c;
    let t = 3.0 * c.mu_0 * tr;
    for i in 0..3 {
        out.0[i][i] += t;
    }
    out
}

/// Weighted squared norm `|P A|^2` without forming `P A`.
pub fn weighted_norm_sq(a: &Mat3, c: &MaterialParams) -> f64 {
    let (dev, skw, tr) = decompose(a);
    c.mu_e * dev.norm_sq() + c.mu_c * skw.norm_sq() + 3.0 * c.mu_0 * tr * tr
}

// ---------------------------------------------------------------------------
// Rotations
// ---------------------------------------------------------------------------

/// A validated element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot(Mat3);

impl Rot {
    /// Validate `R^t R = I` and `det R = 1` to 1e-10 and wrap.
    pub fn try_new(m: Mat3) -> Result<Self, AlgebraError> {
        let defect = (m.transpose() * m - Mat3::identity()).max_abs();
        let det_defect = (m.det() - 1.0).abs();
        let worst = defect.max(det_defect);
        if worst > 1e-10 {
            return Err(AlgebraError::NotARotation(worst));
        }
        Ok(Rot(m))
    }

    pub(crate) fn new_unchecked(m: Mat3) -> Self {
        Rot(m)
    }

    /// The underlying matrix.
    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }
}

/// Project a matrix onto the tangent space of SO(3) at `R`:
/// `A  |->  R skew(R^t A)`.
///
/// The image is `{R W : W skew}`; the map is idempotent and self-adjoint in
/// the Frobenius inner product, and a matrix projects to zero exactly when
/// `R^t A` is symmetric.
pub fn tangent_project(r: &Rot, a: &Mat3) -> Mat3 {
    let rm = r.matrix();
    *rm * (rm.transpose() * *a).skew()
}

// ---------------------------------------------------------------------------
// Unit quaternions and the covering of SO(3)
// ---------------------------------------------------------------------------

/// A unit quaternion `(w, x, y, z)`, scalar part first.
///
/// Construction enforces the unit constraint to 1e-12, so downstream code can
/// rely on the invariant instead of re-checking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuat {
    /// Wrap components that already satisfy the unit constraint (to 1e-12).
    pub fn try_new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, AlgebraError> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(AlgebraError::NonUnitQuaternion { norm, tol: 1e-12 });
        }
        Ok(UnitQuat { w, x, y, z })
    }

    /// Normalize arbitrary components onto the unit sphere.
    ///
    /// Components already unit to 1e-12 are kept bit-for-bit (so round trips
    /// through files do not churn low bits); anything with norm below 1e-6
    /// is rejected as degenerate.
    pub fn normalized(w: f64, x: f64, y: f64, z: f64) -> Result<Self, AlgebraError> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm < 1e-6 {
            return Err(AlgebraError::DegenerateQuaternion(norm));
        }
        if (norm - 1.0).abs() <= 1e-12 {
            return Ok(UnitQuat { w, x, y, z });
        }
        Ok(UnitQuat {
            w: w / norm,
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    /// The identity rotation `(1, 0, 0, 0)`.
    pub fn identity() -> Self {
        UnitQuat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    /// Components as `[w, x, y, z]`.
    pub fn components(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Inner product of the component 4-vectors.
    pub fn dot(&self, other: &UnitQuat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// The antipode `-q` (covers the same rotation).
    pub fn neg(&self) -> Self {
        UnitQuat { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// Hamilton product `self * other`.
    pub fn mul(&self, o: &UnitQuat) -> Self {
        let (w1, x1, y1, z1) = (self.w, self.x, self.y, self.z);
        let (w2, x2, y2, z2) = (o.w, o.x, o.y, o.z);
        // Norms multiply, so the product of unit quaternions stays unit up to
        // rounding; renormalize quietly to keep the invariant tight.
        let w = w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2;
        let x = w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2;
        let y = w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2;
        let z = w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2;
        UnitQuat::normalized(w, x, y, z).expect("product of unit quaternions is non-degenerate")
    }
}

/// The covering map from unit quaternions onto SO(3).
///
/// For `q = (w, x, y, z)` the image is the standard rotation matrix; the map
/// is a group homomorphism for the Hamilton product and is even
/// (`cover(-q) = cover(q)`). A purely imaginary quaternion `(0, n)` with
/// `|n| = 1` maps to the half-turn `2 n n^t - I` about `n`.
pub fn cover(q: &UnitQuat) -> Rot {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    Rot::new_unchecked(Mat3([
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]))
}

/// Directional derivative of [`cover`] at `q` along an arbitrary 4-vector
/// `v`, with no tangency requirement. Each matrix entry is a quadratic form
/// in the components, so this is plain bilinear differentiation.
pub(crate) fn cover_differential_raw(q: &UnitQuat, v: &[f64; 4]) -> Mat3 {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let (vw, vx, vy, vz) = (v[0], v[1], v[2], v[3]);
    Mat3([
        [
            -4.0 * (y * vy + z * vz),
            2.0 * (vx * y + x * vy) - 2.0 * (vz * w + z * vw),
            2.0 * (vx * z + x * vz) + 2.0 * (vy * w + y * vw),
        ],
        [
            2.0 * (vx * y + x * vy) + 2.0 * (vz * w + z * vw),
            -4.0 * (x * vx + z * vz),
            2.0 * (vy * z + y * vz) - 2.0 * (vx * w + x * vw),
        ],
        [
            2.0 * (vx * z + x * vz) - 2.0 * (vy * w + y * vw),
            2.0 * (vy * z + y * vz) + 2.0 * (vx * w + x * vw),
            -4.0 * (x * vx + y * vy),
        ],
    ])
}

/// Differential of [`cover`] at `q` applied to a tangent direction `v`
/// (`<q, v> = 0` required, to 1e-10).
///
/// The covering is a constant conformal map on tangent spaces: for tangent
/// `v` the image satisfies `|dcover(q)[v]|^2 = 8 |v|^2` in the Frobenius
/// norm.
pub fn cover_differential(q: &UnitQuat, v: &[f64; 4]) -> Result<Mat3, AlgebraError> {
    let qc = q.components();
    let dot = qc[0] * v[0] + qc[1] * v[1] + qc[2] * v[2] + qc[3] * v[3];
    if dot.abs() > 1e-10 {
        return Err(AlgebraError::NonTangentDirection(dot));
    }
    Ok(cover_differential_raw(q, v))
}

/// Retraction onto the unit sphere: `(q + v) / |q + v|`.
///
/// Fails only when `q + v` vanishes (antipodal step), where no direction is
/// defined.
pub fn retract(q: &UnitQuat, v: &[f64; 4]) -> Result<UnitQuat, AlgebraError> {
    let c = q.components();
    let s = [c[0] + v[0], c[1] + v[1], c[2] + v[2], c[3] + v[3]];
    let norm = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2] + s[3] * s[3]).sqrt();
    if !(norm > 1e-12) {
        return Err(AlgebraError::DegenerateRetraction);
    }
    UnitQuat::normalized(s[0], s[1], s[2], s[3])
}

/// Draw a uniformly distributed unit quaternion (rejection sampling from the
/// unit ball, then normalization).
pub fn random_unit_quat<R: rand::Rng>(rng: &mut R) -> UnitQuat {
    loop {
        let c: [f64; 4] = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n2: f64 = c.iter().map(|v| v * v).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            return UnitQuat::normalized(c[0], c[1], c[2], c[3])
                .expect("rejection sampling keeps the norm well away from zero");
        }
    }
}
