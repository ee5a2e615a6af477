//! Attitude representations and the static maps between S³, SO(3) and the
//! one-point compactified MRP space R̄³.
//!
//! Conventions:
//! - quaternions are `(q0, q1)` with scalar part first;
//! - rotation matrices map body-frame vectors to the inertial frame, so the
//!   kinematics read `Ṙ = R[ω]×` with `ω` in body coordinates;
//! - `[v]×` is the cross-product matrix, `[v]× s = v × s`.
//!
//! Every function in this module is pure. The point at infinity of R̄³ is a
//! tagged variant of [`Mrp`], never an IEEE infinity.

use std::fmt;
use std::ops::Neg;

use nalgebra::{Matrix3, SymmetricEigen, Vector3, Vector4};
use thiserror::Error;

/// Inputs farther than this from their constraint manifold are rejected.
pub const MANIFOLD_REJECT_TOL: f64 = 1e-6;

/// `mrp_from_quat` reports infinity when `1 + q0` drops below this value
/// (and `shadow_mrp_from_quat` when `1 - q0` does).
pub const POLE_THRESHOLD: f64 = 1e-12;

/// Matrices already orthogonal to this residual are stored bit-for-bit.
const PROJECTION_SKIP_RESIDUAL: f64 = 1e-12;

const INERTIA_SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttitudeError {
    #[error("non-finite component in {0}")]
    NonFinite(&'static str),
    #[error("quaternion norm {norm} is farther than {tol} from 1")]
    NotUnit { norm: f64, tol: f64 },
    #[error("matrix is not a rotation: orthogonality residual {orthogonality:e}, determinant {determinant}")]
    NotRotation { orthogonality: f64, determinant: f64 },
    #[error("inertia tensor is not symmetric (asymmetry {0:e})")]
    InertiaNotSymmetric(f64),
    #[error("inertia tensor is not positive definite (smallest eigenvalue {0})")]
    InertiaNotPositiveDefinite(f64),
    #[error("MRP kinematics evaluated at the point at infinity")]
    SingularState,
}

/// Unit quaternion `(q0, q1) ∈ S³`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    q0: f64,
    q1: Vector3<f64>,
}

impl UnitQuaternion {
    /// Builds a unit quaternion, rescaling inputs whose norm is within
    /// [`MANIFOLD_REJECT_TOL`] of one.
    pub fn new(q0: f64, q1: Vector3<f64>) -> Result<Self, AttitudeError> {
        if !q0.is_finite() || !q1.iter().all(|c| c.is_finite()) {
            return Err(AttitudeError::NonFinite("quaternion"));
        }
        let norm = (q0 * q0 + q1.norm_squared()).sqrt();
        if (norm - 1.0).abs() > MANIFOLD_REJECT_TOL {
            return Err(AttitudeError::NotUnit {
                norm,
                tol: MANIFOLD_REJECT_TOL,
            });
        }
        Ok(Self {
            q0: q0 / norm,
            q1: q1 / norm,
        })
    }

    pub fn from_array(c: [f64; 4]) -> Result<Self, AttitudeError> {
        Self::new(c[0], Vector3::new(c[1], c[2], c[3]))
    }

    /// Normalizes an arbitrary nonzero 4-vector onto S³.
    pub fn normalize(v: Vector4<f64>) -> Option<Self> {
        let norm = v.norm();
        if !norm.is_finite() || norm < f64::MIN_POSITIVE.sqrt() {
            return None;
        }
        let v = v / norm;
        Some(Self {
            q0: v[0],
            q1: Vector3::new(v[1], v[2], v[3]),
        })
    }

    /// North pole `n = (1, 0, 0, 0)`, the identity rotation.
    pub fn identity() -> Self {
        Self {
            q0: 1.0,
            q1: Vector3::zeros(),
        }
    }

    /// South pole `s = (-1, 0, 0, 0)`.
    pub fn south() -> Self {
        Self {
            q0: -1.0,
            q1: Vector3::zeros(),
        }
    }

    pub fn scalar(&self) -> f64 {
        self.q0
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.q1
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.q0, self.q1.x, self.q1.y, self.q1.z]
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.q0 * other.q0 + self.q1.dot(&other.q1)
    }

    /// Multiplies by `±1`.
    pub fn signed(self, m: i8) -> Self {
        if m < 0 {
            -self
        } else {
            self
        }
    }

    /// True when the first nonzero component, scanning `q0, q1x, q1y, q1z`,
    /// is positive.
    pub fn is_canonical(&self) -> bool {
        self.to_array()
            .iter()
            .find(|c| **c != 0.0)
            .is_some_and(|c| *c > 0.0)
    }
}

impl Neg for UnitQuaternion {
    type Output = Self;

    fn neg(self) -> Self {
        Self {
            q0: -self.q0,
            q1: -self.q1,
        }
    }
}

impl fmt::Display for UnitQuaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.q0, self.q1.x, self.q1.y, self.q1.z
        )
    }
}

/// Element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    /// Accepts matrices within [`MANIFOLD_REJECT_TOL`] of SO(3) and moves
    /// them onto the group with a polar (nearest-orthogonal) correction.
    pub fn new(m: Matrix3<f64>) -> Result<Self, AttitudeError> {
        if !m.iter().all(|c| c.is_finite()) {
            return Err(AttitudeError::NonFinite("rotation matrix"));
        }
        let orthogonality = orthogonality_residual(&m);
        let determinant = m.determinant();
        if orthogonality > MANIFOLD_REJECT_TOL || (determinant - 1.0).abs() > MANIFOLD_REJECT_TOL {
            return Err(AttitudeError::NotRotation {
                orthogonality,
                determinant,
            });
        }
        if orthogonality <= PROJECTION_SKIP_RESIDUAL {
            return Ok(Self(m));
        }
        Ok(Self(nearest_orthogonal(&m)))
    }

    /// Nearest rotation to any finite matrix with positive determinant.
    /// Used for drift correction; unlike [`RotationMatrix::new`] it does not
    /// bound the distance to SO(3).
    pub fn project(m: &Matrix3<f64>) -> Result<Self, AttitudeError> {
        if !m.iter().all(|c| c.is_finite()) {
            return Err(AttitudeError::NonFinite("rotation matrix"));
        }
        let determinant = m.determinant();
        if determinant <= 0.0 {
            return Err(AttitudeError::NotRotation {
                orthogonality: orthogonality_residual(m),
                determinant,
            });
        }
        Ok(Self(nearest_orthogonal(m)))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Row-major entries `r11, r12, ..., r33`.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_row_major(c: &[f64]) -> Result<Self, AttitudeError> {
        Self::new(matrix_from_row_major(c))
    }

    /// Rotation angle of `selfᵀ other`, in `[0, π]`.
    pub fn angle_to(&self, other: &Self) -> f64 {
        let rel = self.0.transpose() * other.0;
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

pub(crate) fn matrix_from_row_major(c: &[f64]) -> Matrix3<f64> {
    Matrix3::new(c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7], c[8])
}

/// `‖mᵀm − I‖_F`.
pub fn orthogonality_residual(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).norm()
}

fn nearest_orthogonal(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u requested");
    let v_t = svd.v_t.expect("svd v_t requested");
    let mut correction = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        correction[(2, 2)] = -1.0;
    }
    u * correction * v_t
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum MrpRepr {
    Finite(Vector3<f64>),
    Infinity,
}

/// Modified Rodrigues parameters: a point of `R³ ∪ {∞}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mrp(MrpRepr);

impl Mrp {
    pub fn new(v: Vector3<f64>) -> Result<Self, AttitudeError> {
        if v.iter().all(|c| c.is_finite()) {
            Ok(Self(MrpRepr::Finite(v)))
        } else {
            Err(AttitudeError::NonFinite("MRP"))
        }
    }

    pub fn zero() -> Self {
        Self(MrpRepr::Finite(Vector3::zeros()))
    }

    pub fn infinity() -> Self {
        Self(MrpRepr::Infinity)
    }

    fn finite_or_infinity(v: Vector3<f64>) -> Self {
        Self::new(v).unwrap_or_else(|_| Self::infinity())
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self.0, MrpRepr::Infinity)
    }

    pub fn as_finite(&self) -> Option<&Vector3<f64>> {
        match &self.0 {
            MrpRepr::Finite(v) => Some(v),
            MrpRepr::Infinity => None,
        }
    }

    /// Euclidean norm; `f64::INFINITY` for the point at infinity so that
    /// set-membership comparisons stay well defined.
    pub fn norm(&self) -> f64 {
        match &self.0 {
            MrpRepr::Finite(v) => scaled_norm(v),
            MrpRepr::Infinity => f64::INFINITY,
        }
    }
}

impl fmt::Display for Mrp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            MrpRepr::Finite(v) => write!(f, "({}, {}, {})", v.x, v.y, v.z),
            MrpRepr::Infinity => write!(f, "∞"),
        }
    }
}

/// Body angular velocity in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularVelocity(Vector3<f64>);

impl AngularVelocity {
    pub fn new(w: Vector3<f64>) -> Result<Self, AttitudeError> {
        if w.iter().all(|c| c.is_finite()) {
            Ok(Self(w))
        } else {
            Err(AttitudeError::NonFinite("angular velocity"))
        }
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Symmetric positive-definite inertia tensor in kg·m².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertiaTensor {
    j: Matrix3<f64>,
    j_inv: Matrix3<f64>,
}

impl InertiaTensor {
    pub fn new(j: Matrix3<f64>) -> Result<Self, AttitudeError> {
        if !j.iter().all(|c| c.is_finite()) {
            return Err(AttitudeError::NonFinite("inertia tensor"));
        }
        let asymmetry = (j - j.transpose()).amax();
        if asymmetry > INERTIA_SYMMETRY_TOL {
            return Err(AttitudeError::InertiaNotSymmetric(asymmetry));
        }
        let j = (j + j.transpose()) * 0.5;
        let smallest = SymmetricEigen::new(j).eigenvalues.min();
        if smallest <= 0.0 {
            return Err(AttitudeError::InertiaNotPositiveDefinite(smallest));
        }
        let j_inv = j
            .try_inverse()
            .ok_or(AttitudeError::InertiaNotPositiveDefinite(smallest))?;
        Ok(Self { j, j_inv })
    }

    pub fn diagonal(a: f64, b: f64, c: f64) -> Result<Self, AttitudeError> {
        Self::new(Matrix3::from_diagonal(&Vector3::new(a, b, c)))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.j
    }

    pub fn inverse(&self) -> &Matrix3<f64> {
        &self.j_inv
    }
}

/// Cross-product matrix `[v]×`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `R(q) = I + 2 q0 [q1]× + 2 [q1]×²`.
pub fn quat_to_rotation(q: &UnitQuaternion) -> RotationMatrix {
    let k = skew(&q.q1);
    RotationMatrix(Matrix3::identity() + k * (2.0 * q.q0) + k * k * 2.0)
}

/// Both preimages `{q, −q}` of a rotation under the quaternion map. The
/// first element is canonical (see [`UnitQuaternion::is_canonical`]).
pub fn rotation_to_quats(r: &RotationMatrix) -> [UnitQuaternion; 2] {
    let q = quat_from_matrix_raw(&r.0);
    let q = if q.is_canonical() { q } else { -q };
    [q, -q]
}

/// Largest-pivot extraction of a quaternion from a (nearly) orthogonal
/// matrix. The sign of the result is whatever the pivot produces.
pub(crate) fn quat_from_matrix_raw(m: &Matrix3<f64>) -> UnitQuaternion {
    let trace = m.trace();
    let pivots = [
        1.0 + trace,
        1.0 + 2.0 * m[(0, 0)] - trace,
        1.0 + 2.0 * m[(1, 1)] - trace,
        1.0 + 2.0 * m[(2, 2)] - trace,
    ];
    let (k, &pivot) = pivots
        .iter()
        .enumerate()
        .fold((0, &pivots[0]), |best, cur| if cur.1 > best.1 { cur } else { best });
    let s = 0.5 * pivot.max(0.0).sqrt();
    let d = 0.25 / s;
    let c = match k {
        0 => [
            s,
            (m[(2, 1)] - m[(1, 2)]) * d,
            (m[(0, 2)] - m[(2, 0)]) * d,
            (m[(1, 0)] - m[(0, 1)]) * d,
        ],
        1 => [
            (m[(2, 1)] - m[(1, 2)]) * d,
            s,
            (m[(0, 1)] + m[(1, 0)]) * d,
            (m[(0, 2)] + m[(2, 0)]) * d,
        ],
        2 => [
            (m[(0, 2)] - m[(2, 0)]) * d,
            (m[(0, 1)] + m[(1, 0)]) * d,
            s,
            (m[(1, 2)] + m[(2, 1)]) * d,
        ],
        _ => [
            (m[(1, 0)] - m[(0, 1)]) * d,
            (m[(0, 2)] + m[(2, 0)]) * d,
            (m[(1, 2)] + m[(2, 1)]) * d,
            s,
        ],
    };
    UnitQuaternion::normalize(Vector4::new(c[0], c[1], c[2], c[3]))
        .unwrap_or_else(UnitQuaternion::identity)
}

/// Stereographic projection from the south pole: `q1 / (1 + q0)`, or `∞`
/// at `s`.
pub fn mrp_from_quat(q: &UnitQuaternion) -> Mrp {
    if 1.0 + q.q0 < POLE_THRESHOLD {
        Mrp::infinity()
    } else {
        // 1 + q0 = ‖q1‖² / (1 − q0) avoids cancellation near the south pole
        let denom = if q.q0 < 0.0 { q.q1.norm_squared() / (1.0 - q.q0) } else { 1.0 + q.q0 };
        Mrp::finite_or_infinity(q.q1 / denom)
    }
}

/// Shadow set: `−q1 / (1 − q0)`, or `∞` at `n`.
pub fn shadow_mrp_from_quat(q: &UnitQuaternion) -> Mrp {
    if 1.0 - q.q0 < POLE_THRESHOLD {
        Mrp::infinity()
    } else {
        let denom = if q.q0 > 0.0 { q.q1.norm_squared() / (1.0 + q.q0) } else { 1.0 - q.q0 };
        Mrp::finite_or_infinity(-q.q1 / denom)
    }
}

/// Euclidean norm that neither underflows nor overflows for extreme entries.
pub(crate) fn scaled_norm(v: &Vector3<f64>) -> f64 {
    let m = v.amax();
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * (v / m).norm()
}

/// `Υ(v) = −v / ‖v‖²`, exchanging `0` and `∞`.
pub fn shadow(v: &Mrp) -> Mrp {
    match v.as_finite() {
        None => Mrp::zero(),
        Some(v) => {
            let n = scaled_norm(v);
            if n == 0.0 {
                Mrp::infinity()
            } else {
                Mrp::finite_or_infinity(-(v / n) / n)
            }
        }
    }
}

/// `T(v) = ((1 − ‖v‖²) I + 2 [v]× + 2 v vᵀ) / 4`, so that `v̇ = T(v) ω`.
pub fn mrp_kinematics_matrix(v: &Mrp) -> Result<Matrix3<f64>, AttitudeError> {
    let v = v.as_finite().ok_or(AttitudeError::SingularState)?;
    Ok(mrp_kinematics_matrix_finite(v))
}

pub(crate) fn mrp_kinematics_matrix_finite(v: &Vector3<f64>) -> Matrix3<f64> {
    let s = v.norm_squared();
    (Matrix3::identity() * (1.0 - s) + skew(v) * 2.0 + v * v.transpose() * 2.0) * 0.25
}

/// Rotation matrix of an MRP; the identity at `∞`.
pub fn mrp_to_rotation(v: &Mrp) -> RotationMatrix {
    let Some(v) = v.as_finite() else {
        return RotationMatrix::identity();
    };
    let n = scaled_norm(v);
    let m = if n <= 1.0 {
        let s = n * n;
        let k = skew(v);
        let den = (1.0 + s) * (1.0 + s);
        Matrix3::identity() + (k * k * 8.0 + k * (4.0 * (1.0 - s))) / den
    } else {
        // same expression rewritten in u = 1/‖v‖ so large inputs never overflow
        let u = 1.0 / n;
        let kw = skew(&(v * u));
        let den = (1.0 + u * u) * (1.0 + u * u);
        Matrix3::identity() + (kw * kw * (8.0 * u * u) + kw * (4.0 * u * (u * u - 1.0))) / den
    };
    RotationMatrix(m)
}

/// Inverse stereographic projection R̄³ → S³:
/// `((1 − ‖v‖²)/(1 + ‖v‖²), 2 v/(1 + ‖v‖²))`, and `s` at `∞`.
///
/// A finite input never lands exactly on `s`, while [`mrp_from_quat`]
/// reports `∞` slightly before reaching it.
pub fn stereo_inv(v: &Mrp) -> UnitQuaternion {
    let Some(v) = v.as_finite() else {
        return UnitQuaternion::south();
    };
    let n = scaled_norm(v);
    let (q0, q1) = if n <= 1.0 {
        let s = n * n;
        ((1.0 - s) / (1.0 + s), v * (2.0 / (1.0 + s)))
    } else {
        let u = 1.0 / n;
        let w = v * u;
        ((u * u - 1.0) / (u * u + 1.0), w * (2.0 * u / (1.0 + u * u)))
    };
    UnitQuaternion::normalize(Vector4::new(q0, q1.x, q1.y, q1.z))
        .unwrap_or_else(UnitQuaternion::south)
}

/// Inverse of [`stereo_inv`]; identical to [`mrp_from_quat`].
pub fn stereo(q: &UnitQuaternion) -> Mrp {
    mrp_from_quat(q)
}

/// `1 − aᵀb`, in `[0, 2]`.
pub fn geodesic_quat_distance(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    (1.0 - a.dot(b)).clamp(0.0, 2.0)
}
