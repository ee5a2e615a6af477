use std::f64::consts::FRAC_PI_2;

use thiserror::Error;

use super::{
    evaluate, jump_unchecked, lift_state_from_vector, phi_select, JumpKind, LiftEvaluation,
    LiftParams, LiftState, RotationSource,
};
use crate::attitude::{mrp_to_rotation, Mrp, RotationMatrix, UnitQuaternion};
use crate::hybrid::{HybridArc, JumpPriority};

/// More jumps than this at a single sample means the sets are inconsistent.
pub const MAX_JUMPS_PER_SAMPLE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterEvent {
    Flow,
    JumpDl,
    JumpDm,
}

impl FilterEvent {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Flow => "flow",
            Self::JumpDl => "jump_Dl",
            Self::JumpDm => "jump_Dm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "flow" => Some(Self::Flow),
            "jump_Dl" => Some(Self::JumpDl),
            "jump_Dm" => Some(Self::JumpDm),
            _ => None,
        }
    }

    fn from_kind(kind: JumpKind) -> Self {
        match kind {
            JumpKind::Dl => Self::JumpDl,
            JumpKind::Dm => Self::JumpDm,
        }
    }
}

/// One `(t, j)` of the lifted signal. A row with a jump event is the state
/// right after that jump.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRow {
    pub t: f64,
    pub j: usize,
    pub event: FilterEvent,
    pub rotation: RotationMatrix,
    pub state: LiftState,
    /// `stereo(m Φ(q̂, R))`, reported even off the flow set.
    pub theta: Mrp,
    /// Whether the output is defined, i.e. the state is in `C_m ∩ C_l`.
    pub in_flow_set: bool,
    pub dist: f64,
    /// `‖R − R_ϑ(ϑ)‖_F`, absent when `ϑ = ∞`.
    pub defect: Option<f64>,
    pub tie: bool,
}

impl FilterRow {
    fn new(t: f64, j: usize, event: FilterEvent, r: RotationMatrix, s: LiftState, e: &LiftEvaluation) -> Self {
        let defect = (!e.theta.is_infinite())
            .then(|| (r.matrix() - mrp_to_rotation(&e.theta).matrix()).norm());
        Self {
            t,
            j,
            event,
            rotation: r,
            state: s,
            theta: e.theta,
            in_flow_set: e.in_flow_set(),
            dist: e.dist,
            defect,
            tie: e.tie,
        }
    }

    /// The output `ϑ`, or `None` for `∅`.
    pub fn output(&self) -> Option<Mrp> {
        self.in_flow_set.then_some(self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleWarning {
    pub t: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("sample time {t} does not increase (previous {previous})")]
    NonMonotoneTime { t: f64, previous: f64 },
    #[error("more than {MAX_JUMPS_PER_SAMPLE} jumps at t = {t}")]
    TooManyJumps { t: f64 },
}

/// Sequential lifter over sampled rotations. Jump conditions are checked
/// once per sample; a sample may yield several rows when jumps occur.
#[derive(Debug, Clone)]
pub struct LiftFilter {
    params: LiftParams,
    priority: JumpPriority,
    guess: UnitQuaternion,
    initial_m: i8,
    state: Option<LiftState>,
    last: Option<(f64, RotationMatrix)>,
    j: usize,
    warnings: Vec<SampleWarning>,
}

impl LiftFilter {
    /// A filter whose memory is initialized from `guess` at the first sample.
    pub fn with_guess(params: LiftParams, guess: UnitQuaternion, m: i8) -> Result<Self, super::LiftError> {
        LiftState::new(guess, m)?;
        Ok(Self {
            params,
            priority: JumpPriority::default(),
            guess,
            initial_m: m,
            state: None,
            last: None,
            j: 0,
            warnings: Vec::new(),
        })
    }

    /// A filter starting from an explicit `(q̂, m)`.
    pub fn new(params: LiftParams, initial: LiftState) -> Self {
        Self {
            params,
            priority: JumpPriority::default(),
            guess: *initial.q_hat(),
            initial_m: initial.m(),
            state: Some(initial),
            last: None,
            j: 0,
            warnings: Vec::new(),
        }
    }

    pub fn with_priority(mut self, priority: JumpPriority) -> Self {
        self.priority = priority;
        self
    }

    pub fn state(&self) -> Option<&LiftState> {
        self.state.as_ref()
    }

    pub fn jump_index(&self) -> usize {
        self.j
    }

    pub fn warnings(&self) -> &[SampleWarning] {
        &self.warnings
    }

    pub fn push(&mut self, t: f64, r: RotationMatrix) -> Result<Vec<FilterRow>, FilterError> {
        if let Some((prev_t, prev_r)) = self.last {
            if t <= prev_t {
                return Err(FilterError::NonMonotoneTime { t, previous: prev_t });
            }
            let angle = prev_r.angle_to(&r);
            if angle > FRAC_PI_2 {
                self.warnings.push(SampleWarning { t, angle });
            }
        }
        self.last = Some((t, r));
        let mut s = match self.state {
            Some(s) => s,
            None => LiftState::initialize(&self.guess, &r, self.initial_m)
                .expect("m validated at construction"),
        };
        let mut e = evaluate(&s, &r, &self.params);
        let mut rows = vec![FilterRow::new(t, self.j, FilterEvent::Flow, r, s, &e)];
        let mut jumps = 0;
        while e.in_jump_dl() || e.in_jump_dm() {
            if jumps == MAX_JUMPS_PER_SAMPLE {
                self.state = Some(s);
                return Err(FilterError::TooManyJumps { t });
            }
            let kind = match (e.in_jump_dl(), e.in_jump_dm(), self.priority) {
                (true, true, JumpPriority::PreferFirstListed) | (true, false, _) => JumpKind::Dl,
                _ => JumpKind::Dm,
            };
            let (phi, _) = phi_select(s.q_hat(), &r).select();
            s = jump_unchecked(&s, phi, kind);
            self.j += 1;
            jumps += 1;
            e = evaluate(&s, &r, &self.params);
            rows.push(FilterRow::new(t, self.j, FilterEvent::from_kind(kind), r, s, &e));
        }
        self.state = Some(s);
        Ok(rows)
    }
}

/// Rows for every sample of a lifter arc, in hybrid-time order.
pub fn arc_rows<S: RotationSource + ?Sized>(
    arc: &HybridArc,
    source: &S,
    params: &LiftParams,
) -> Vec<FilterRow> {
    let mut rows = Vec::with_capacity(arc.sample_count());
    for iv in &arc.intervals {
        let incoming = iv
            .j
            .checked_sub(1)
            .and_then(|k| arc.jumps.get(k))
            .and_then(|jr| JumpKind::from_label(jr.label))
            .map(FilterEvent::from_kind);
        for (k, (t, x)) in iv.times.iter().zip(&iv.states).enumerate() {
            let event = match (k, incoming) {
                (0, Some(ev)) => ev,
                _ => FilterEvent::Flow,
            };
            let r = source.rotation(*t);
            let s = lift_state_from_vector(x.as_slice());
            let e = evaluate(&s, &r, params);
            rows.push(FilterRow::new(*t, iv.j, event, r, s, &e));
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{simulate, SolverConfig};
    use crate::lifting::{lift_state_to_vector, make_lift_system, PrincipalRamp};
    use nalgebra::Vector3;
    use std::f64::consts::PI;

    #[test]
    fn filter_reproduces_simulated_rows() {
        let params = LiftParams::new(0.5, 0.2).unwrap();
        let src = PrincipalRamp::new(RotationMatrix::identity(), Vector3::new(1.0, 1.0, 0.0), 0.7).unwrap();
        let sys = make_lift_system(params, &src);
        let x0 = lift_state_to_vector(&LiftState::new(UnitQuaternion::identity(), 1).unwrap());
        let cfg = SolverConfig {
            step: 0.01,
            t_max: 20.0,
            ..SolverConfig::default()
        };
        let arc = simulate(&sys, &x0, &cfg).unwrap();
        let expected = arc_rows(&arc, &src, &params);
        assert!(arc.jumps.len() >= 3);

        let mut filter = LiftFilter::with_guess(params, UnitQuaternion::identity(), 1).unwrap();
        let mut got = Vec::new();
        let mut last_t = f64::NEG_INFINITY;
        for row in &expected {
            if row.t > last_t {
                got.extend(filter.push(row.t, row.rotation).unwrap());
                last_t = row.t;
            }
        }
        assert_eq!(got.len(), expected.len());
        for (a, b) in got.iter().zip(&expected) {
            assert_eq!((a.t, a.j, a.event), (b.t, b.j, b.event));
            assert_eq!(a.theta, b.theta);
        }
        assert!(filter.warnings().is_empty());
    }

    #[test]
    fn coarse_sampling_warns() {
        let params = LiftParams::default();
        let src = PrincipalRamp::new(RotationMatrix::identity(), Vector3::z(), 1.0).unwrap();
        let mut f = LiftFilter::with_guess(params, UnitQuaternion::identity(), 1).unwrap();
        f.push(0.0, src.rotation(0.0)).unwrap();
        f.push(2.0, src.rotation(2.0)).unwrap();
        assert_eq!(f.warnings().len(), 1);
        assert!((f.warnings()[0].angle - 2.0).abs() < 1e-12);
        assert!(matches!(
            f.push(1.0, src.rotation(1.0)),
            Err(FilterError::NonMonotoneTime { .. })
        ));
    }

    #[test]
    fn shadow_switch_rows() {
        let params = LiftParams::new(0.5, 0.2).unwrap();
        let src = PrincipalRamp::new(RotationMatrix::identity(), Vector3::z(), 1.0).unwrap();
        let mut f = LiftFilter::with_guess(params, UnitQuaternion::identity(), 1).unwrap();
        let mut rows = Vec::new();
        for k in 0..=700 {
            rows.extend(f.push(k as f64 * 0.01, src.rotation(k as f64 * 0.01)).unwrap());
        }
        let dm: Vec<_> = rows.iter().filter(|r| r.event == FilterEvent::JumpDm).collect();
        assert_eq!(dm.len(), 1);
        assert!(dm[0].theta.norm() < 1.0);
        assert!(rows.iter().all(|r| r.defect.unwrap() < 1e-12));
        // the angle passes π before t = 7 and the output stays bounded
        assert!(rows.last().unwrap().t > PI);
        assert!(rows
            .iter()
            .filter(|r| r.in_flow_set)
            .all(|r| r.theta.norm() <= 1.2));
    }
}
