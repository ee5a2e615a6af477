use nalgebra::{DVector, Vector4};

use super::{
    evaluate, jump_unchecked, phi_select, quat_set_distance, FilterEvent, FilterRow, JumpKind,
    LiftParams, LiftState, RotationSource,
};
use crate::attitude::{mrp_to_rotation, shadow, Mrp, UnitQuaternion};
use crate::hybrid::{HybridArc, HybridSystem, JumpBranch, State};

/// Bound on `‖R − R_ϑ(ϑ)‖_F` and the slack on `‖ϑ‖ ≤ 1 + δ`.
pub const LIFT_CONSISTENCY_TOL: f64 = 1e-6;
/// Bound on the output defects across jumps.
pub const LIFT_JUMP_TOL: f64 = 1e-9;

/// `[q̂0, q̂1x, q̂1y, q̂1z, m]`.
pub fn lift_state_to_vector(s: &LiftState) -> State {
    let q = s.q_hat().to_array();
    DVector::from_vec(vec![q[0], q[1], q[2], q[3], f64::from(s.m())])
}

/// Reads `[q̂, m]`, renormalizing `q̂` and taking `m` as the sign.
pub fn lift_state_from_vector(x: &[f64]) -> LiftState {
    let q = UnitQuaternion::normalize(Vector4::new(x[0], x[1], x[2], x[3]))
        .unwrap_or_else(UnitQuaternion::identity);
    let m = if x[4] < 0.0 { -1 } else { 1 };
    LiftState::new(q, m).expect("m is ±1 by construction")
}

/// The lifter as a hybrid system driven by an exogenous rotation signal.
/// The state `(q̂, m)` is constant along flows.
pub struct LiftSystem<S> {
    params: LiftParams,
    source: S,
}

pub fn make_lift_system<S: RotationSource>(params: LiftParams, source: S) -> LiftSystem<S> {
    LiftSystem { params, source }
}

impl<S: RotationSource> LiftSystem<S> {
    pub fn params(&self) -> &LiftParams {
        &self.params
    }

    pub fn source(&self) -> &S {
        &self.source
    }
}

impl<S: RotationSource> HybridSystem for LiftSystem<S> {
    fn dim(&self) -> usize {
        5
    }

    fn flow_margin(&self, t: f64, x: &State) -> f64 {
        evaluate(&lift_state_from_vector(x.as_slice()), &self.source.rotation(t), &self.params)
            .flow_margin()
    }

    fn flow_map(&self, _t: f64, _x: &State) -> State {
        DVector::zeros(5)
    }

    fn jump_margin(&self, t: f64, x: &State) -> f64 {
        evaluate(&lift_state_from_vector(x.as_slice()), &self.source.rotation(t), &self.params)
            .jump_margin()
    }

    fn jump_map(&self, t: f64, x: &State) -> Vec<JumpBranch> {
        let s = lift_state_from_vector(x.as_slice());
        let r = self.source.rotation(t);
        let e = evaluate(&s, &r, &self.params);
        let (phi, tie) = phi_select(s.q_hat(), &r).select();
        let mut out = Vec::with_capacity(2);
        for (member, kind) in [(e.in_jump_dl(), JumpKind::Dl), (e.in_jump_dm(), JumpKind::Dm)] {
            if member {
                let next = jump_unchecked(&s, phi, kind);
                out.push(JumpBranch {
                    label: kind.label(),
                    state: lift_state_to_vector(&next),
                    ambiguous: tie && kind == JumpKind::Dl,
                });
            }
        }
        out
    }

    fn output(&self, t: f64, x: &State) -> Option<State> {
        let e = evaluate(&lift_state_from_vector(x.as_slice()), &self.source.rotation(t), &self.params);
        e.theta
            .as_finite()
            .map(|v| DVector::from_column_slice(v.as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftArcReport {
    pub samples: usize,
    pub max_consistency_defect: f64,
    pub max_theta_norm: f64,
    /// Samples where `ϑ` is `∞` (no consistency or norm value).
    pub undefined_output_samples: usize,
    pub max_dl_defect: f64,
    pub max_dm_defect: f64,
    pub max_memory_distance_after_dl: f64,
    pub dl_jumps: usize,
    pub dm_jumps: usize,
    pub tie_breaks: usize,
    pub consistency_ok: bool,
    pub norm_bound_ok: bool,
    pub dl_invariance_ok: bool,
    pub dm_shadow_ok: bool,
    pub memory_ok: bool,
}

impl LiftArcReport {
    pub fn passed(&self) -> bool {
        self.consistency_ok
            && self.norm_bound_ok
            && self.dl_invariance_ok
            && self.dm_shadow_ok
            && self.memory_ok
    }
}

fn mrp_gap(a: &Mrp, b: &Mrp) -> f64 {
    match (a.as_finite(), b.as_finite()) {
        (Some(a), Some(b)) => (a - b).norm(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    }
}

/// Checks a lifter arc against its rotation signal: lift consistency,
/// the output bound, and the output relations across both jump types.
pub fn verify_lift_arc<S: RotationSource + ?Sized>(
    arc: &HybridArc,
    source: &S,
    params: &LiftParams,
) -> LiftArcReport {
    let mut max_consistency_defect: f64 = 0.0;
    let mut max_theta_norm: f64 = 0.0;
    let mut undefined = 0;
    let mut samples = 0;
    for (t, _, x) in arc.samples() {
        samples += 1;
        let r = source.rotation(t);
        let e = evaluate(&lift_state_from_vector(x.as_slice()), &r, params);
        if e.theta.is_infinite() {
            undefined += 1;
            continue;
        }
        let defect = (r.matrix() - mrp_to_rotation(&e.theta).matrix()).norm();
        max_consistency_defect = max_consistency_defect.max(defect);
        max_theta_norm = max_theta_norm.max(e.theta.norm());
    }

    let mut max_dl: f64 = 0.0;
    let mut max_dm: f64 = 0.0;
    let mut max_mem: f64 = 0.0;
    let (mut dl_jumps, mut dm_jumps, mut ties) = (0, 0, 0);
    for jump in &arc.jumps {
        let pre = arc.intervals[jump.from_j].states.last().expect("nonempty interval");
        let post = &arc.intervals[jump.from_j + 1].states[0];
        let r = source.rotation(jump.t);
        let s_pre = lift_state_from_vector(pre.as_slice());
        let s_post = lift_state_from_vector(post.as_slice());
        let th_pre = evaluate(&s_pre, &r, params).theta;
        let th_post = evaluate(&s_post, &r, params).theta;
        if jump.ambiguous {
            ties += 1;
        }
        match JumpKind::from_label(jump.label) {
            Some(JumpKind::Dl) => {
                dl_jumps += 1;
                max_dl = max_dl.max(mrp_gap(&th_post, &th_pre));
                max_mem = max_mem.max(quat_set_distance(s_post.q_hat(), &r));
            }
            Some(JumpKind::Dm) => {
                dm_jumps += 1;
                max_dm = max_dm.max(mrp_gap(&th_post, &shadow(&th_pre)));
            }
            None => {}
        }
    }

    LiftArcReport {
        samples,
        max_consistency_defect,
        max_theta_norm,
        undefined_output_samples: undefined,
        max_dl_defect: max_dl,
        max_dm_defect: max_dm,
        max_memory_distance_after_dl: max_mem,
        dl_jumps,
        dm_jumps,
        tie_breaks: ties,
        consistency_ok: max_consistency_defect <= LIFT_CONSISTENCY_TOL,
        norm_bound_ok: undefined == 0 && max_theta_norm <= params.radius() + LIFT_CONSISTENCY_TOL,
        dl_invariance_ok: max_dl <= LIFT_JUMP_TOL,
        dm_shadow_ok: max_dm <= LIFT_JUMP_TOL,
        memory_ok: max_mem <= LIFT_JUMP_TOL,
    }
}

/// The checks of [`verify_lift_arc`] over a sequence of rows, as produced
/// by [`super::LiftFilter`] or [`super::arc_rows`]. A jump row is compared
/// with the row right before it; `tie_breaks` counts `D_l` jumps taken
/// from a tied `Φ`.
pub fn verify_lift_rows(rows: &[FilterRow], params: &LiftParams) -> LiftArcReport {
    let mut max_consistency_defect: f64 = 0.0;
    let mut max_theta_norm: f64 = 0.0;
    let mut undefined = 0;
    for row in rows {
        match row.defect {
            Some(d) => {
                max_consistency_defect = max_consistency_defect.max(d);
                max_theta_norm = max_theta_norm.max(row.theta.norm());
            }
            None => undefined += 1,
        }
    }
    let mut max_dl: f64 = 0.0;
    let mut max_dm: f64 = 0.0;
    let mut max_mem: f64 = 0.0;
    let (mut dl_jumps, mut dm_jumps, mut ties) = (0, 0, 0);
    for w in rows.windows(2) {
        let (pre, post) = (&w[0], &w[1]);
        match post.event {
            FilterEvent::Flow => {}
            FilterEvent::JumpDl => {
                dl_jumps += 1;
                if pre.tie {
                    ties += 1;
                }
                max_dl = max_dl.max(mrp_gap(&post.theta, &pre.theta));
                max_mem = max_mem.max(post.dist);
            }
            FilterEvent::JumpDm => {
                dm_jumps += 1;
                max_dm = max_dm.max(mrp_gap(&post.theta, &shadow(&pre.theta)));
            }
        }
    }
    LiftArcReport {
        samples: rows.len(),
        max_consistency_defect,
        max_theta_norm,
        undefined_output_samples: undefined,
        max_dl_defect: max_dl,
        max_dm_defect: max_dm,
        max_memory_distance_after_dl: max_mem,
        dl_jumps,
        dm_jumps,
        tie_breaks: ties,
        consistency_ok: max_consistency_defect <= LIFT_CONSISTENCY_TOL,
        norm_bound_ok: undefined == 0 && max_theta_norm <= params.radius() + LIFT_CONSISTENCY_TOL,
        dl_invariance_ok: max_dl <= LIFT_JUMP_TOL,
        dm_shadow_ok: max_dm <= LIFT_JUMP_TOL,
        memory_ok: max_mem <= LIFT_JUMP_TOL,
    }
}
