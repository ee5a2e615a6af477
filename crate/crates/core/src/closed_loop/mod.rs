//! Closed-loop attitude systems driven by an MRP feedback law.
//!
//! `H₁` evolves the rigid body on SO(3) and feeds the controller through
//! the lifter; `H₂` evolves the MRP directly with a shadow switch at
//! `‖ϑ‖ = 1 + δ`. Both share the same [`ControllerSpec`].

mod equivalence;
mod stability;

pub use equivalence::{
    check_equivalence, equivalence_tolerance, run_paired, step_halving_errors, EquivalenceError,
    EquivalenceReport, PairedRun, ROUNDOFF_FLOOR,
};
pub use stability::{
    default_h1_target, default_h2_target, stability_evidence, stability_run, Diagnostic,
    StabilityReport, StabilityRun, StabilityTarget, CONVERGENCE_THRESHOLD, TAIL_FRACTION,
};

use std::sync::Arc;

use nalgebra::{DVector, Vector3, Vector4};
use thiserror::Error;

use crate::attitude::{
    matrix_from_row_major, mrp_kinematics_matrix_finite, orthogonality_residual, shadow, skew,
    AngularVelocity, AttitudeError, InertiaTensor, Mrp, RotationMatrix, UnitQuaternion,
};
use crate::hybrid::{HybridSystem, JumpBranch, State};
use crate::lifting::{evaluate, evaluate_raw, jump_unchecked, JumpKind, LiftError, LiftParams, LiftState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("controller evaluated at theta = infinity")]
    InfiniteMrp,
    #[error("{name} must be > 0, got {value}")]
    InvalidGain { name: &'static str, value: f64 },
    #[error("controller state has dimension {got}, expected {expected}")]
    RhoDimension { expected: usize, got: usize },
    #[error("state vector has length {got}, expected {expected}")]
    StateLength { expected: usize, got: usize },
    #[error(transparent)]
    Attitude(#[from] AttitudeError),
    #[error(transparent)]
    Lift(#[from] LiftError),
}

type TorqueFn = dyn Fn(&Vector3<f64>, &Vector3<f64>, &DVector<f64>) -> Vector3<f64> + Send + Sync;
type RhoDotFn = dyn Fn(&Vector3<f64>, &Vector3<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// Feedback `τ(ϑ, ω, ρ)` with internal dynamics `ρ̇ = f(ϑ, ω, ρ)`.
/// Both functions are only ever called with a finite `ϑ`.
#[derive(Clone)]
pub struct ControllerSpec {
    torque: Arc<TorqueFn>,
    rho_dot: Arc<RhoDotFn>,
    rho0: DVector<f64>,
}

impl std::fmt::Debug for ControllerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControllerSpec")
            .field("rho_dim", &self.rho_dim())
            .field("rho0", &self.rho0.as_slice())
            .finish_non_exhaustive()
    }
}

impl ControllerSpec {
    pub fn new(
        rho0: DVector<f64>,
        torque: impl Fn(&Vector3<f64>, &Vector3<f64>, &DVector<f64>) -> Vector3<f64> + Send + Sync + 'static,
        rho_dot: impl Fn(&Vector3<f64>, &Vector3<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            torque: Arc::new(torque),
            rho_dot: Arc::new(rho_dot),
            rho0,
        }
    }

    /// A static law without internal state.
    pub fn static_law(
        torque: impl Fn(&Vector3<f64>, &Vector3<f64>) -> Vector3<f64> + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            DVector::zeros(0),
            move |th, w, _| torque(th, w),
            |_, _, _| DVector::zeros(0),
        )
    }

    pub fn zero() -> Self {
        Self::static_law(|_, _| Vector3::zeros())
    }

    pub fn rho_dim(&self) -> usize {
        self.rho0.len()
    }

    pub fn rho0(&self) -> &DVector<f64> {
        &self.rho0
    }

    pub fn torque(&self, theta: &Mrp, omega: &AngularVelocity, rho: &DVector<f64>) -> Result<Vector3<f64>, ControlError> {
        let th = theta.as_finite().ok_or(ControlError::InfiniteMrp)?;
        self.check_rho(rho)?;
        Ok((self.torque)(th, omega.vector(), rho))
    }

    pub fn rho_dot(&self, theta: &Mrp, omega: &AngularVelocity, rho: &DVector<f64>) -> Result<DVector<f64>, ControlError> {
        let th = theta.as_finite().ok_or(ControlError::InfiniteMrp)?;
        self.check_rho(rho)?;
        Ok((self.rho_dot)(th, omega.vector(), rho))
    }

    fn check_rho(&self, rho: &DVector<f64>) -> Result<(), ControlError> {
        if rho.len() != self.rho_dim() {
            return Err(ControlError::RhoDimension {
                expected: self.rho_dim(),
                got: rho.len(),
            });
        }
        Ok(())
    }
}

/// `τ = −kp ϑ − kd ω`.
pub fn default_controller(kp: f64, kd: f64) -> Result<ControllerSpec, ControlError> {
    if !(kp > 0.0 && kp.is_finite()) {
        return Err(ControlError::InvalidGain { name: "kp", value: kp });
    }
    if !(kd > 0.0 && kd.is_finite()) {
        return Err(ControlError::InvalidGain { name: "kd", value: kd });
    }
    Ok(ControllerSpec::static_law(move |th, w| -th * kp - w * kd))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantParams {
    pub inertia: InertiaTensor,
}

impl PlantParams {
    pub fn new(inertia: InertiaTensor) -> Self {
        Self { inertia }
    }

    /// `ω̇ = J⁻¹((Jω) × ω + τ)`.
    pub fn omega_dot(&self, w: &Vector3<f64>, tau: &Vector3<f64>) -> Vector3<f64> {
        let j = self.inertia.matrix();
        self.inertia.inverse() * ((j * w).cross(w) + tau)
    }

    pub fn kinetic_energy(&self, w: &Vector3<f64>) -> f64 {
        0.5 * w.dot(&(self.inertia.matrix() * w))
    }

    pub fn angular_momentum_norm(&self, w: &Vector3<f64>) -> f64 {
        (self.inertia.matrix() * w).norm()
    }
}

/// `x₁ = (R, q̂, m, ω, ρ)`, stored as `[R row-major, q̂, m, ω, ρ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct X1State {
    pub r: RotationMatrix,
    pub lift: LiftState,
    pub omega: AngularVelocity,
    pub rho: DVector<f64>,
}

pub const X1_FIXED_DIM: usize = 17;

impl X1State {
    pub fn to_vector(&self) -> State {
        let mut v = Vec::with_capacity(X1_FIXED_DIM + self.rho.len());
        v.extend(self.r.to_row_major());
        v.extend(self.lift.q_hat().to_array());
        v.push(f64::from(self.lift.m()));
        v.extend(self.omega.vector().iter());
        v.extend(self.rho.iter());
        DVector::from_vec(v)
    }

    /// Reads a state vector, projecting `R` onto SO(3) and `q̂` onto S³.
    pub fn from_vector(x: &State, rho_dim: usize) -> Result<Self, ControlError> {
        let expected = X1_FIXED_DIM + rho_dim;
        if x.len() != expected {
            return Err(ControlError::StateLength { expected, got: x.len() });
        }
        let r = RotationMatrix::project(&matrix_from_row_major(&x.as_slice()[..9]))?;
        let q = UnitQuaternion::normalize(Vector4::new(x[9], x[10], x[11], x[12]))
            .ok_or(AttitudeError::NonFinite("memory quaternion"))?;
        let m = if x[13] < 0.0 { -1 } else { 1 };
        Ok(Self {
            r,
            lift: LiftState::new(q, m)?,
            omega: AngularVelocity::new(Vector3::new(x[14], x[15], x[16]))?,
            rho: DVector::from_column_slice(&x.as_slice()[X1_FIXED_DIM..]),
        })
    }
}

/// `x₂ = (ϑ, ω, ρ)`, stored as `[ϑ, ω, ρ]`; `ϑ` must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct X2State {
    pub theta: Mrp,
    pub omega: AngularVelocity,
    pub rho: DVector<f64>,
}

pub const X2_FIXED_DIM: usize = 6;

impl X2State {
    pub fn to_vector(&self) -> Result<State, ControlError> {
        let th = self.theta.as_finite().ok_or(ControlError::InfiniteMrp)?;
        let mut v = Vec::with_capacity(X2_FIXED_DIM + self.rho.len());
        v.extend(th.iter());
        v.extend(self.omega.vector().iter());
        v.extend(self.rho.iter());
        Ok(DVector::from_vec(v))
    }

    pub fn from_vector(x: &State, rho_dim: usize) -> Result<Self, ControlError> {
        let expected = X2_FIXED_DIM + rho_dim;
        if x.len() != expected {
            return Err(ControlError::StateLength { expected, got: x.len() });
        }
        Ok(Self {
            theta: Mrp::new(Vector3::new(x[0], x[1], x[2]))?,
            omega: AngularVelocity::new(Vector3::new(x[3], x[4], x[5]))?,
            rho: DVector::from_column_slice(&x.as_slice()[X2_FIXED_DIM..]),
        })
    }

    /// The `H₂` state corresponding to an `H₁` state: `ϑ` is the lift output.
    pub fn corresponding(x1: &X1State, params: &LiftParams) -> Result<Self, ControlError> {
        let theta = evaluate(&x1.lift, &x1.r, params).theta;
        if theta.is_infinite() {
            return Err(ControlError::InfiniteMrp);
        }
        Ok(Self {
            theta,
            omega: x1.omega,
            rho: x1.rho.clone(),
        })
    }
}

fn lift_of(x: &State) -> LiftState {
    let q = UnitQuaternion::normalize(Vector4::new(x[9], x[10], x[11], x[12]))
        .unwrap_or_else(UnitQuaternion::identity);
    LiftState::new(q, if x[13] < 0.0 { -1 } else { 1 }).expect("m is ±1 by construction")
}

fn nan_state(dim: usize) -> State {
    DVector::from_element(dim, f64::NAN)
}

/// `H₁`: rigid body on SO(3), lifter memory, and controller state.
#[derive(Debug, Clone)]
pub struct H1System {
    plant: PlantParams,
    ctrl: ControllerSpec,
    params: LiftParams,
}

pub fn make_h1(plant: PlantParams, ctrl: ControllerSpec, params: LiftParams) -> H1System {
    H1System { plant, ctrl, params }
}

impl H1System {
    pub fn params(&self) -> &LiftParams {
        &self.params
    }

    pub fn plant(&self) -> &PlantParams {
        &self.plant
    }

    pub fn controller(&self) -> &ControllerSpec {
        &self.ctrl
    }

    pub fn rho_dim(&self) -> usize {
        self.ctrl.rho_dim()
    }

    /// Lifter sets and output at a state vector.
    pub fn lift_evaluation(&self, x: &State) -> crate::lifting::LiftEvaluation {
        evaluate_raw(&lift_of(x), &matrix_from_row_major(&x.as_slice()[..9]), &self.params)
    }

    /// The lift output `φ⁻¹(m Φ(q̂, R))` of a state vector.
    pub fn theta(&self, x: &State) -> Mrp {
        self.lift_evaluation(x).theta
    }

    /// Applied torque at a state vector, `None` when `ϑ = ∞`.
    pub fn torque_at(&self, x: &State) -> Option<Vector3<f64>> {
        let th = self.theta(x);
        let w = Vector3::new(x[14], x[15], x[16]);
        let rho = DVector::from_column_slice(&x.as_slice()[X1_FIXED_DIM..]);
        th.as_finite().map(|th| (self.ctrl.torque)(th, &w, &rho))
    }
}

impl HybridSystem for H1System {
    fn dim(&self) -> usize {
        X1_FIXED_DIM + self.ctrl.rho_dim()
    }

    fn flow_margin(&self, _t: f64, x: &State) -> f64 {
        self.lift_evaluation(x).flow_margin()
    }

    fn flow_map(&self, _t: f64, x: &State) -> State {
        let e = self.lift_evaluation(x);
        let Some(th) = e.theta.as_finite() else {
            return nan_state(self.dim());
        };
        let r = matrix_from_row_major(&x.as_slice()[..9]);
        let w = Vector3::new(x[14], x[15], x[16]);
        let rho = DVector::from_column_slice(&x.as_slice()[X1_FIXED_DIM..]);
        let tau = (self.ctrl.torque)(th, &w, &rho);
        let r_dot = r * skew(&w);
        let w_dot = self.plant.omega_dot(&w, &tau);
        let rho_dot = (self.ctrl.rho_dot)(th, &w, &rho);
        let mut dx = DVector::zeros(self.dim());
        for i in 0..3 {
            for k in 0..3 {
                dx[3 * i + k] = r_dot[(i, k)];
            }
            dx[14 + i] = w_dot[i];
        }
        dx.rows_mut(X1_FIXED_DIM, rho.len()).copy_from(&rho_dot);
        dx
    }

    fn jump_margin(&self, _t: f64, x: &State) -> f64 {
        self.lift_evaluation(x).jump_margin()
    }

    fn jump_map(&self, _t: f64, x: &State) -> Vec<JumpBranch> {
        let s = lift_of(x);
        let r = matrix_from_row_major(&x.as_slice()[..9]);
        let e = evaluate_raw(&s, &r, &self.params);
        let (phi, tie) = crate::lifting::phi_select_raw(s.q_hat(), &r).select();
        let mut out = Vec::with_capacity(2);
        for (member, kind) in [(e.in_jump_dl(), JumpKind::Dl), (e.in_jump_dm(), JumpKind::Dm)] {
            if !member {
                continue;
            }
            let next = jump_unchecked(&s, phi, kind);
            let mut y = x.clone();
            match kind {
                JumpKind::Dl => {
                    for (k, c) in next.q_hat().to_array().into_iter().enumerate() {
                        y[9 + k] = c;
                    }
                }
                JumpKind::Dm => y[13] = f64::from(next.m()),
            }
            out.push(JumpBranch {
                label: kind.label(),
                state: y,
                ambiguous: tie && kind == JumpKind::Dl,
            });
        }
        out
    }

    fn project(&self, x: &mut State) -> f64 {
        let m = matrix_from_row_major(&x.as_slice()[..9]);
        let residual = orthogonality_residual(&m);
        if let Ok(r) = RotationMatrix::project(&m) {
            for (k, c) in r.to_row_major().into_iter().enumerate() {
                x[k] = c;
            }
        }
        if let Some(q) = UnitQuaternion::normalize(Vector4::new(x[9], x[10], x[11], x[12])) {
            for (k, c) in q.to_array().into_iter().enumerate() {
                x[9 + k] = c;
            }
        }
        x[13] = if x[13] < 0.0 { -1.0 } else { 1.0 };
        residual
    }

    fn output(&self, _t: f64, x: &State) -> Option<State> {
        self.theta(x)
            .as_finite()
            .map(|v| DVector::from_column_slice(v.as_slice()))
    }
}

/// `H₂`: MRP kinematics with a shadow switch at `‖ϑ‖ = 1 + δ`.
#[derive(Debug, Clone)]
pub struct H2System {
    plant: PlantParams,
    ctrl: ControllerSpec,
    params: LiftParams,
}

pub fn make_h2(plant: PlantParams, ctrl: ControllerSpec, params: LiftParams) -> H2System {
    H2System { plant, ctrl, params }
}

impl H2System {
    pub fn params(&self) -> &LiftParams {
        &self.params
    }

    pub fn plant(&self) -> &PlantParams {
        &self.plant
    }

    pub fn rho_dim(&self) -> usize {
        self.ctrl.rho_dim()
    }

    pub fn torque_at(&self, x: &State) -> Vector3<f64> {
        let th = Vector3::new(x[0], x[1], x[2]);
        let w = Vector3::new(x[3], x[4], x[5]);
        let rho = DVector::from_column_slice(&x.as_slice()[X2_FIXED_DIM..]);
        (self.ctrl.torque)(&th, &w, &rho)
    }
}

fn theta_norm(x: &State) -> f64 {
    crate::attitude::scaled_norm(&Vector3::new(x[0], x[1], x[2]))
}

impl HybridSystem for H2System {
    fn dim(&self) -> usize {
        X2_FIXED_DIM + self.ctrl.rho_dim()
    }

    fn flow_margin(&self, _t: f64, x: &State) -> f64 {
        self.params.radius() - theta_norm(x)
    }

    fn flow_map(&self, _t: f64, x: &State) -> State {
        let th = Vector3::new(x[0], x[1], x[2]);
        let w = Vector3::new(x[3], x[4], x[5]);
        let rho = DVector::from_column_slice(&x.as_slice()[X2_FIXED_DIM..]);
        let tau = (self.ctrl.torque)(&th, &w, &rho);
        let th_dot = mrp_kinematics_matrix_finite(&th) * w;
        let w_dot = self.plant.omega_dot(&w, &tau);
        let rho_dot = (self.ctrl.rho_dot)(&th, &w, &rho);
        let mut dx = DVector::zeros(self.dim());
        for i in 0..3 {
            dx[i] = th_dot[i];
            dx[3 + i] = w_dot[i];
        }
        dx.rows_mut(X2_FIXED_DIM, rho.len()).copy_from(&rho_dot);
        dx
    }

    fn jump_margin(&self, _t: f64, x: &State) -> f64 {
        theta_norm(x) - self.params.radius()
    }

    fn jump_map(&self, _t: f64, x: &State) -> Vec<JumpBranch> {
        let th = Vector3::new(x[0], x[1], x[2]);
        let Some(next) = Mrp::new(th).ok().map(|m| shadow(&m)) else {
            return Vec::new();
        };
        let Some(v) = next.as_finite() else {
            return Vec::new();
        };
        let mut y = x.clone();
        for i in 0..3 {
            y[i] = v[i];
        }
        vec![JumpBranch::new(JumpKind::Dm.label(), y)]
    }

    fn output(&self, _t: f64, x: &State) -> Option<State> {
        Some(x.rows(0, 3).into_owned())
    }
}
