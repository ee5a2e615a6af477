//! Hybrid path-lifting of a continuous rotation signal `R(t)` to MRPs.
//!
//! The lifter keeps a memory quaternion `q̂` and a logic variable
//! `m ∈ {−1, 1}`. Its output is `ϑ = stereo(m Φ(q̂, R))`, where `Φ` picks
//! the element of `Q(R)` closest to `q̂`. Two hysteresis pairs govern the
//! jumps:
//!
//! * `C_m: ‖ϑ‖ ≤ 1 + δ`, `D_m: ‖ϑ‖ ≥ 1 + δ`, jump `m⁺ = −m`;
//! * `C_l: dist(q̂, Q(R)) ≤ α`, `D_l: dist(q̂, Q(R)) ≥ α`, jump `q̂⁺ = Φ(q̂, R)`.

mod filter;
mod source;
mod system;

pub use filter::{
    arc_rows, FilterError, FilterEvent, FilterRow, LiftFilter, SampleWarning, MAX_JUMPS_PER_SAMPLE,
};
pub use source::{ConstantRotation, PiecewiseSpin, PrincipalRamp, RotationSource};
pub use system::{
    lift_state_from_vector, lift_state_to_vector, make_lift_system, verify_lift_arc,
    verify_lift_rows,
    LiftArcReport, LiftSystem, LIFT_CONSISTENCY_TOL, LIFT_JUMP_TOL,
};

use nalgebra::Matrix3;
use thiserror::Error;

use crate::attitude::{
    quat_from_matrix_raw, rotation_to_quats, stereo, Mrp, RotationMatrix, UnitQuaternion,
};

/// `|q̂ᵀp|` at or below this value counts as a tie between `±p`.
pub const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LiftError {
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("delta must be > 0, got {0}")]
    InvalidDelta(f64),
    #[error("logic variable m must be -1 or 1, got {0}")]
    InvalidLogic(i8),
    #[error("{which} jump requested outside its jump set ({detail})")]
    ContractViolation { which: JumpKind, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftParams {
    alpha: f64,
    delta: f64,
}

impl LiftParams {
    pub fn new(alpha: f64, delta: f64) -> Result<Self, LiftError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(LiftError::InvalidAlpha(alpha));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(LiftError::InvalidDelta(delta));
        }
        Ok(Self { alpha, delta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// The switching radius `1 + δ`.
    pub fn radius(&self) -> f64 {
        1.0 + self.delta
    }
}

impl Default for LiftParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            delta: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftState {
    q_hat: UnitQuaternion,
    m: i8,
}

impl LiftState {
    pub fn new(q_hat: UnitQuaternion, m: i8) -> Result<Self, LiftError> {
        if m != 1 && m != -1 {
            return Err(LiftError::InvalidLogic(m));
        }
        Ok(Self { q_hat, m })
    }

    /// Memory set to the tie-broken `Φ(guess, R)`, so `dist(q̂, Q(R)) = 0`.
    pub fn initialize(guess: &UnitQuaternion, r: &RotationMatrix, m: i8) -> Result<Self, LiftError> {
        let (q_hat, _) = phi_select(guess, r).select();
        Self::new(q_hat, m)
    }

    pub fn q_hat(&self) -> &UnitQuaternion {
        &self.q_hat
    }

    pub fn m(&self) -> i8 {
        self.m
    }
}

/// Result of `Φ(q̂, R) = argmax_{p ∈ Q(R)} q̂ᵀp`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiSelection {
    Unique(UnitQuaternion),
    /// Both elements of `Q(R)`; the first is canonical.
    Tie([UnitQuaternion; 2]),
}

impl PhiSelection {
    /// The chosen quaternion and whether a tie had to be broken.
    pub fn select(&self) -> (UnitQuaternion, bool) {
        match self {
            Self::Unique(q) => (*q, false),
            Self::Tie(pair) => (pair[0], true),
        }
    }

    pub fn is_tie(&self) -> bool {
        matches!(self, Self::Tie(_))
    }

    pub fn elements(&self) -> Vec<UnitQuaternion> {
        match self {
            Self::Unique(q) => vec![*q],
            Self::Tie(pair) => pair.to_vec(),
        }
    }
}

fn select_from_pair(q_hat: &UnitQuaternion, p: UnitQuaternion) -> PhiSelection {
    let p = if p.is_canonical() { p } else { -p };
    let d = q_hat.dot(&p);
    if d.abs() <= TIE_TOL {
        PhiSelection::Tie([p, -p])
    } else if d > 0.0 {
        PhiSelection::Unique(p)
    } else {
        PhiSelection::Unique(-p)
    }
}

pub fn phi_select(q_hat: &UnitQuaternion, r: &RotationMatrix) -> PhiSelection {
    select_from_pair(q_hat, rotation_to_quats(r)[0])
}

/// `Φ` evaluated on a matrix that is only approximately orthogonal, such
/// as an intermediate integrator stage.
pub(crate) fn phi_select_raw(q_hat: &UnitQuaternion, m: &Matrix3<f64>) -> PhiSelection {
    select_from_pair(q_hat, quat_from_matrix_raw(m))
}

fn distance_from_pair(q_hat: &UnitQuaternion, p: &UnitQuaternion) -> f64 {
    (1.0 - q_hat.dot(p).abs()).clamp(0.0, 1.0)
}

/// `dist(q̂, Q(R)) = min_{p ∈ Q(R)} (1 − q̂ᵀp) = 1 − |q̂ᵀp|`.
pub fn quat_set_distance(q_hat: &UnitQuaternion, r: &RotationMatrix) -> f64 {
    distance_from_pair(q_hat, &rotation_to_quats(r)[0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftOutput {
    pub theta: Mrp,
    /// Membership in `C_m ∩ C_l`; when false the output is formally `∅`
    /// and `theta` is only informative.
    pub in_flow_set: bool,
}

/// Everything the hysteresis logic needs at one `(q̂, R, m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftEvaluation {
    pub theta: Mrp,
    pub dist: f64,
    pub tie: bool,
    /// `1 + δ − ‖ϑ‖`; nonnegative on `C_m`.
    pub norm_slack: f64,
    /// `α − dist`; nonnegative on `C_l`.
    pub dist_slack: f64,
}

impl LiftEvaluation {
    fn from_pair(state: &LiftState, p: UnitQuaternion, params: &LiftParams) -> Self {
        let sel = select_from_pair(&state.q_hat, p);
        let (phi, tie) = sel.select();
        let theta = stereo(&phi.signed(state.m));
        let dist = distance_from_pair(&state.q_hat, &phi);
        Self {
            theta,
            dist,
            tie,
            norm_slack: params.radius() - theta.norm(),
            dist_slack: params.alpha - dist,
        }
    }

    pub fn in_flow_set(&self) -> bool {
        self.norm_slack >= 0.0 && self.dist_slack >= 0.0
    }

    /// Flow-set membership with a tolerance band on both inequalities.
    pub fn in_flow_set_tol(&self, tol: f64) -> bool {
        self.norm_slack >= -tol && self.dist_slack >= -tol
    }

    pub fn in_jump_dm(&self) -> bool {
        self.norm_slack <= 0.0
    }

    pub fn in_jump_dl(&self) -> bool {
        self.dist_slack <= 0.0
    }

    pub fn flow_margin(&self) -> f64 {
        self.norm_slack.min(self.dist_slack)
    }

    pub fn jump_margin(&self) -> f64 {
        (-self.norm_slack).max(-self.dist_slack)
    }
}

pub fn evaluate(state: &LiftState, r: &RotationMatrix, params: &LiftParams) -> LiftEvaluation {
    LiftEvaluation::from_pair(state, rotation_to_quats(r)[0], params)
}

pub(crate) fn evaluate_raw(state: &LiftState, m: &Matrix3<f64>, params: &LiftParams) -> LiftEvaluation {
    LiftEvaluation::from_pair(state, quat_from_matrix_raw(m), params)
}

/// `ϑ = stereo(m Φ(q̂, R))`, with the tie broken deterministically.
pub fn lift_output(state: &LiftState, r: &RotationMatrix, params: &LiftParams) -> LiftOutput {
    let e = evaluate(state, r, params);
    LiftOutput {
        theta: e.theta,
        in_flow_set: e.in_flow_set(),
    }
}

pub fn in_flow_set(state: &LiftState, r: &RotationMatrix, params: &LiftParams) -> bool {
    evaluate(state, r, params).in_flow_set()
}

pub fn in_jump_dm(state: &LiftState, r: &RotationMatrix, params: &LiftParams) -> bool {
    evaluate(state, r, params).in_jump_dm()
}

pub fn in_jump_dl(state: &LiftState, r: &RotationMatrix, params: &LiftParams) -> bool {
    evaluate(state, r, params).in_jump_dl()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JumpKind {
    Dl,
    Dm,
}

impl JumpKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Dl => "Dl",
            Self::Dm => "Dm",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "Dl" => Some(Self::Dl),
            "Dm" => Some(Self::Dm),
            _ => None,
        }
    }
}

impl std::fmt::Display for JumpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

pub(crate) fn jump_unchecked(state: &LiftState, phi: UnitQuaternion, which: JumpKind) -> LiftState {
    match which {
        JumpKind::Dl => LiftState {
            q_hat: phi,
            m: state.m,
        },
        JumpKind::Dm => LiftState {
            q_hat: state.q_hat,
            m: -state.m,
        },
    }
}

/// `D_l: q̂⁺ = Φ(q̂, R), m⁺ = m`; `D_m: q̂⁺ = q̂, m⁺ = −m`.
pub fn lift_jump(
    state: &LiftState,
    r: &RotationMatrix,
    params: &LiftParams,
    which: JumpKind,
) -> Result<LiftState, LiftError> {
    let e = evaluate(state, r, params);
    let allowed = match which {
        JumpKind::Dl => e.in_jump_dl(),
        JumpKind::Dm => e.in_jump_dm(),
    };
    if !allowed {
        let detail = match which {
            JumpKind::Dl => format!("dist = {} < alpha = {}", e.dist, params.alpha),
            JumpKind::Dm => format!("|theta| = {} < 1 + delta = {}", e.theta.norm(), params.radius()),
        };
        return Err(LiftError::ContractViolation { which, detail });
    }
    let (phi, _) = phi_select(&state.q_hat, r).select();
    Ok(jump_unchecked(state, phi, which))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn q(c: [f64; 4]) -> UnitQuaternion {
        UnitQuaternion::from_array(c).unwrap()
    }

    fn flip_x() -> RotationMatrix {
        RotationMatrix::new(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(matches!(LiftParams::new(1.5, 0.5), Err(LiftError::InvalidAlpha(_))));
        assert!(matches!(LiftParams::new(0.0, 0.5), Err(LiftError::InvalidAlpha(_))));
        assert!(matches!(LiftParams::new(0.5, 0.0), Err(LiftError::InvalidDelta(_))));
        let msg = LiftParams::new(1.5, 0.5).unwrap_err().to_string();
        assert!(msg.contains("(0, 1)"));
        assert_eq!(LiftParams::default(), LiftParams::new(0.5, 0.5).unwrap());
        assert!(matches!(
            LiftState::new(UnitQuaternion::identity(), 0),
            Err(LiftError::InvalidLogic(0))
        ));
    }

    #[test]
    fn phi_examples() {
        let id = UnitQuaternion::identity();
        assert_eq!(
            phi_select(&id, &RotationMatrix::identity()),
            PhiSelection::Unique(id)
        );
        let sel = phi_select(&q([0.8, 0.6, 0.0, 0.0]), &flip_x());
        assert_eq!(sel.elements().len(), 1);
        assert_eq!(sel.select().0.to_array(), [0.0, 1.0, 0.0, 0.0]);

        let tie = phi_select(&id, &flip_x());
        assert!(tie.is_tie());
        let (chosen, broken) = tie.select();
        assert!(broken);
        assert_eq!(chosen.to_array(), [0.0, 1.0, 0.0, 0.0]);
        let elems = tie.elements();
        assert_eq!(elems.len(), 2);
        assert_eq!(elems[1].to_array(), (-q([0.0, 1.0, 0.0, 0.0])).to_array());
    }

    #[test]
    fn set_distance_examples() {
        let id = UnitQuaternion::identity();
        assert_eq!(quat_set_distance(&id, &RotationMatrix::identity()), 0.0);
        assert_eq!(quat_set_distance(&id, &flip_x()), 1.0);
        assert!((quat_set_distance(&q([0.8, 0.6, 0.0, 0.0]), &flip_x()) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn output_examples() {
        let p = LiftParams::default();
        let id = UnitQuaternion::identity();
        let out = lift_output(&LiftState::new(id, 1).unwrap(), &RotationMatrix::identity(), &p);
        assert_eq!(out.theta, Mrp::zero());
        assert!(out.in_flow_set);

        let out = lift_output(&LiftState::new(id, -1).unwrap(), &RotationMatrix::identity(), &p);
        assert!(out.theta.is_infinite());
        assert!(!out.in_flow_set);
        assert!(in_jump_dm(&LiftState::new(id, -1).unwrap(), &RotationMatrix::identity(), &p));

        let s = LiftState::new(q([0.0, 1.0, 0.0, 0.0]), 1).unwrap();
        let out = lift_output(&s, &flip_x(), &p);
        assert_eq!(out.theta.as_finite().copied(), Some(Vector3::x()));
    }

    #[test]
    fn closed_set_boundaries() {
        // ‖ϑ‖ = 1 + δ exactly: the principal angle with tan(φ/4) = 1 + δ
        let delta = 0.25;
        let p = LiftParams::new(0.5, delta).unwrap();
        let v = Mrp::new(Vector3::new(0.0, 0.0, 1.0 + delta)).unwrap();
        let quat = crate::attitude::stereo_inv(&v);
        let r = crate::attitude::quat_to_rotation(&quat);
        let e = evaluate(&LiftState::new(quat, 1).unwrap(), &r, &p);
        assert!((e.theta.norm() - (1.0 + delta)).abs() < 1e-15);
        // exact boundary value, with the computed norm substituted in
        let p_exact = LiftParams::new(0.5, e.theta.norm() - 1.0).unwrap();
        let e = evaluate(&LiftState::new(quat, 1).unwrap(), &r, &p_exact);
        assert!(e.in_flow_set() && e.in_jump_dm());

        // dist = α exactly: q̂ = (0.8, 0.6, 0, 0) against diag(1, −1, −1) gives 0.4
        let s = LiftState::new(q([0.8, 0.6, 0.0, 0.0]), 1).unwrap();
        let d = quat_set_distance(s.q_hat(), &flip_x());
        let p = LiftParams::new(d, 10.0).unwrap();
        let e = evaluate(&s, &flip_x(), &p);
        assert!(e.in_flow_set() && e.in_jump_dl());

        let e = evaluate(
            &LiftState::new(UnitQuaternion::identity(), 1).unwrap(),
            &RotationMatrix::identity(),
            &LiftParams::default(),
        );
        assert!(e.in_flow_set() && !e.in_jump_dl() && !e.in_jump_dm());
    }

    #[test]
    fn jump_examples() {
        let p = LiftParams::default();
        let id = UnitQuaternion::identity();
        let s = LiftState::new(id, -1).unwrap();
        let after = lift_jump(&s, &RotationMatrix::identity(), &p, JumpKind::Dm).unwrap();
        assert_eq!(after.m(), 1);
        assert_eq!(after.q_hat(), &id);

        // q̂ far from Q(R): D_l lands on Q(R)
        let s = LiftState::new(q([0.8, 0.6, 0.0, 0.0]), 1).unwrap();
        let p = LiftParams::new(0.3, 10.0).unwrap();
        let after = lift_jump(&s, &flip_x(), &p, JumpKind::Dl).unwrap();
        assert_eq!(quat_set_distance(after.q_hat(), &flip_x()), 0.0);
        assert_eq!(after.m(), 1);
        // fixed point: already at the argmax
        let again = evaluate(&after, &flip_x(), &p);
        assert!(!again.in_jump_dl());

        let err = lift_jump(
            &LiftState::new(id, 1).unwrap(),
            &RotationMatrix::identity(),
            &LiftParams::default(),
            JumpKind::Dl,
        );
        assert!(matches!(err, Err(LiftError::ContractViolation { which: JumpKind::Dl, .. })));
    }

    #[test]
    fn dl_jump_at_argmax_is_a_fixed_point() {
        let quat = q([0.5, 0.5, 0.5, 0.5]);
        let r = crate::attitude::quat_to_rotation(&quat);
        let s = LiftState::new(quat, 1).unwrap();
        let (phi, _) = phi_select(s.q_hat(), &r).select();
        let after = jump_unchecked(&s, phi, JumpKind::Dl);
        assert!((after.q_hat().dot(s.q_hat()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn initialization_uses_tie_broken_phi() {
        let s = LiftState::initialize(&UnitQuaternion::identity(), &flip_x(), 1).unwrap();
        assert_eq!(s.q_hat().to_array(), [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(quat_set_distance(s.q_hat(), &flip_x()), 0.0);
    }
}
