//! Hybrid systems `(C, F, D, G)` over flat state vectors, hybrid time
//! domains, and a fixed-step RK4 simulator with bisection event location.
//!
//! Flow and jump sets are described by signed margins: a state is in the
//! flow set when `flow_margin ≥ −event_tol` and in the jump set when
//! `jump_margin ≥ 0`. Jumps take priority over flows on the overlap, and a
//! jump map returning several branches is resolved by [`JumpPriority`].

use std::cmp::Ordering;

use nalgebra::DVector;
use thiserror::Error;

pub type State = DVector<f64>;

/// Bisection iterations allowed when locating an event inside a step.
pub const MAX_BISECTION_ITERATIONS: usize = 60;

#[derive(Debug, Error)]
pub enum HybridError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("initial state is outside both the flow set and the jump set")]
    InvalidInitialState,
    #[error("state dimension {got} does not match system dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("jump map returned no branch at t = {t} while in the jump set")]
    EmptyJumpMap { t: f64 },
    #[error("numerical blowup at t = {t}: {reason}")]
    NumericalBlowup {
        t: f64,
        reason: String,
        partial: Box<HybridArc>,
    },
    #[error("t = {t} is outside the hybrid time domain [0, {sup}]")]
    OutOfDomain { t: f64, sup: f64 },
}

/// One element of the enumerated jump map.
#[derive(Debug, Clone)]
pub struct JumpBranch {
    pub label: &'static str,
    pub state: State,
    /// The branch itself resolved a set-valued choice (logged, not fatal).
    pub ambiguous: bool,
}

impl JumpBranch {
    pub fn new(label: &'static str, state: State) -> Self {
        Self {
            label,
            state,
            ambiguous: false,
        }
    }
}

/// Data of a hybrid system. `t` is passed to every method so that systems
/// driven by exogenous time signals (such as the lifting filter) fit the
/// same interface.
pub trait HybridSystem: Sync {
    fn dim(&self) -> usize;

    /// Nonnegative exactly on the flow set `C`.
    fn flow_margin(&self, t: f64, x: &State) -> f64;

    fn flow_map(&self, t: f64, x: &State) -> State;

    /// Nonnegative exactly on the jump set `D`.
    fn jump_margin(&self, t: f64, x: &State) -> f64;

    /// Branches of `G(x)`, in listing order. Must be nonempty on `D`.
    fn jump_map(&self, t: f64, x: &State) -> Vec<JumpBranch>;

    /// Re-projects manifold-valued components after a flow step and
    /// returns the residual that was removed.
    fn project(&self, _x: &mut State) -> f64 {
        0.0
    }

    fn output(&self, _t: f64, _x: &State) -> Option<State> {
        None
    }

    fn in_flow_set(&self, t: f64, x: &State, tol: f64) -> bool {
        self.flow_margin(t, x) >= -tol
    }

    fn in_jump_set(&self, t: f64, x: &State) -> bool {
        self.jump_margin(t, x) >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JumpPriority {
    #[default]
    PreferFirstListed,
    PreferLastListed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub step: f64,
    pub t_max: f64,
    pub j_max: usize,
    pub event_tol: f64,
    pub jump_priority: JumpPriority,
    /// Bound `K` on ‖ω‖ for exogenously driven rotation signals.
    pub omega_bound: f64,
    /// Extra times at which the simulator lands a sample.
    pub anchors: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            t_max: 10.0,
            j_max: 10_000,
            event_tol: 1e-10,
            jump_priority: JumpPriority::PreferFirstListed,
            omega_bound: 1.0,
            anchors: Vec::new(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), HybridError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(HybridError::InvalidConfig(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if !(self.event_tol > 0.0 && self.event_tol.is_finite()) {
            return Err(HybridError::InvalidConfig(format!(
                "event_tol must be positive, got {}",
                self.event_tol
            )));
        }
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(HybridError::InvalidConfig(format!(
                "t_max must be finite and nonnegative, got {}",
                self.t_max
            )));
        }
        if !(self.omega_bound >= 0.0) {
            return Err(HybridError::InvalidConfig(format!(
                "omega_bound must be nonnegative, got {}",
                self.omega_bound
            )));
        }
        Ok(())
    }

    pub fn with_step(&self, step: f64) -> Self {
        Self {
            step,
            ..self.clone()
        }
    }
}

/// Hybrid time `(t, j)` with the lexicographic order used to compare
/// instants of a hybrid arc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridTime {
    pub t: f64,
    pub j: usize,
}

impl PartialOrd for HybridTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.t.partial_cmp(&other.t)? {
            Ordering::Equal => Some(self.j.cmp(&other.j)),
            ord => Some(ord),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainInterval {
    pub t_start: f64,
    pub t_end: f64,
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HybridTimeDomain {
    pub intervals: Vec<DomainInterval>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("empty hybrid time domain")]
    Empty,
    #[error("interval {0} does not start at t = 0 with j = 0")]
    BadStart(usize),
    #[error("interval {index} has t_start > t_end")]
    Reversed { index: usize },
    #[error("intervals {index} and {next} are not contiguous")]
    Gap { index: usize, next: usize },
    #[error("jump index does not increase by one at interval {0}")]
    JumpIndex(usize),
}

impl HybridTimeDomain {
    pub fn validate(&self) -> Result<(), DomainError> {
        let first = self.intervals.first().ok_or(DomainError::Empty)?;
        if first.j != 0 || first.t_start != 0.0 {
            return Err(DomainError::BadStart(0));
        }
        for (k, iv) in self.intervals.iter().enumerate() {
            if iv.t_start > iv.t_end {
                return Err(DomainError::Reversed { index: k });
            }
            if let Some(next) = self.intervals.get(k + 1) {
                if next.t_start != iv.t_end {
                    return Err(DomainError::Gap {
                        index: k,
                        next: k + 1,
                    });
                }
                if next.j != iv.j + 1 {
                    return Err(DomainError::JumpIndex(k + 1));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, time: HybridTime) -> bool {
        self.intervals
            .get(time.j)
            .is_some_and(|iv| iv.t_start <= time.t && time.t <= iv.t_end)
    }

    pub fn sup_t(&self) -> f64 {
        self.intervals.last().map_or(0.0, |iv| iv.t_end)
    }

    /// `J(t) = max { j : (t, j) ∈ dom }`.
    pub fn last_index_at(&self, t: f64) -> Option<usize> {
        self.intervals
            .iter()
            .rev()
            .find(|iv| iv.t_start <= t && t <= iv.t_end)
            .map(|iv| iv.j)
    }
}

/// Samples of one flow interval `[t_j, t_{j+1}] × {j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcInterval {
    pub j: usize,
    pub times: Vec<f64>,
    pub states: Vec<State>,
}

impl ArcInterval {
    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("interval holds at least one sample")
    }

    /// Linear interpolation, clamped to the interval.
    pub fn interpolate(&self, t: f64) -> State {
        let idx = self.times.partition_point(|&s| s < t);
        if idx == 0 {
            return self.states[0].clone();
        }
        if idx >= self.times.len() {
            return self.states[self.times.len() - 1].clone();
        }
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        if t1 == t || t1 == t0 {
            return self.states[idx].clone();
        }
        let w = (t - t0) / (t1 - t0);
        &self.states[idx - 1] * (1.0 - w) + &self.states[idx] * w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub t: f64,
    /// Jump index before the jump; the post-jump state starts interval `from_j + 1`.
    pub from_j: usize,
    pub label: &'static str,
    pub candidates: usize,
    pub chosen: usize,
    pub ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    TimeBudget,
    JumpBudget,
    EscapedSets { t: f64 },
    Blowup { t: f64, reason: String },
}

/// A solution `x(t, j)` sampled on a fixed-step grid plus interval
/// endpoints. Jump instants appear twice: as the last sample of interval
/// `j` and the first sample of interval `j + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridArc {
    pub intervals: Vec<ArcInterval>,
    pub jumps: Vec<JumpRecord>,
    pub termination: Termination,
    pub max_projection_residual: f64,
}

impl HybridArc {
    pub fn domain(&self) -> HybridTimeDomain {
        HybridTimeDomain {
            intervals: self
                .intervals
                .iter()
                .map(|iv| DomainInterval {
                    t_start: iv.t_start(),
                    t_end: iv.t_end(),
                    j: iv.j,
                })
                .collect(),
        }
    }

    pub fn final_state(&self) -> &State {
        self.intervals
            .last()
            .and_then(|iv| iv.states.last())
            .expect("arc holds at least one sample")
    }

    pub fn final_time(&self) -> HybridTime {
        let last = self.intervals.last().expect("arc holds at least one sample");
        HybridTime {
            t: last.t_end(),
            j: last.j,
        }
    }

    /// Iterates `(t, j, state)` in hybrid-time order.
    pub fn samples(&self) -> impl Iterator<Item = (f64, usize, &State)> + '_ {
        self.intervals
            .iter()
            .flat_map(|iv| iv.times.iter().zip(&iv.states).map(move |(t, x)| (*t, iv.j, x)))
    }

    pub fn sample_count(&self) -> usize {
        self.intervals.iter().map(|iv| iv.times.len()).sum()
    }

    pub fn jump_count(&self, label: &str) -> usize {
        self.jumps.iter().filter(|j| j.label == label).count()
    }
}

/// `x(t, J(t))`: the state at the largest jump index whose interval holds
/// `t`, linearly interpolated between samples.
pub fn time_projection(arc: &HybridArc, t: f64) -> Result<State, HybridError> {
    let sup = arc.domain().sup_t();
    let iv = arc
        .intervals
        .iter()
        .rev()
        .find(|iv| iv.t_start() <= t && t <= iv.t_end())
        .ok_or(HybridError::OutOfDomain { t, sup })?;
    Ok(iv.interpolate(t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completeness {
    pub complete: bool,
    pub reason: String,
}

/// Runtime witness of completeness: the arc stopped only because the
/// time or jump budget ran out.
pub fn is_complete(arc: &HybridArc, cfg: &SolverConfig) -> Completeness {
    match &arc.termination {
        Termination::TimeBudget => Completeness {
            complete: true,
            reason: format!("reached t_max = {}", cfg.t_max),
        },
        Termination::JumpBudget => Completeness {
            complete: true,
            reason: format!("reached j_max = {}", cfg.j_max),
        },
        Termination::EscapedSets { t } => Completeness {
            complete: false,
            reason: format!("escaped flow and jump sets at t = {t}"),
        },
        Termination::Blowup { t, reason } => Completeness {
            complete: false,
            reason: format!("numerical blowup at t = {t}: {reason}"),
        },
    }
}

fn rk4_step<S: HybridSystem + ?Sized>(sys: &S, t: f64, x: &State, h: f64) -> Option<State> {
    let k1 = sys.flow_map(t, x);
    let k2 = sys.flow_map(t + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = sys.flow_map(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = sys.flow_map(t + h, &(x + &k3 * h));
    let finite = [&k1, &k2, &k3, &k4]
        .iter()
        .all(|k| k.iter().all(|c| c.is_finite()));
    if !finite {
        return None;
    }
    Some(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

struct Recorder {
    intervals: Vec<ArcInterval>,
    jumps: Vec<JumpRecord>,
    max_residual: f64,
}

impl Recorder {
    fn push(&mut self, t: f64, x: State) {
        let iv = self.intervals.last_mut().expect("recorder starts with an interval");
        iv.times.push(t);
        iv.states.push(x);
    }

    fn finish(self, termination: Termination) -> HybridArc {
        HybridArc {
            intervals: self.intervals,
            jumps: self.jumps,
            termination,
            max_projection_residual: self.max_residual,
        }
    }
}

/// Simulates `sys` from `x0` at `t = 0`.
pub fn simulate<S: HybridSystem + ?Sized>(
    sys: &S,
    x0: &State,
    cfg: &SolverConfig,
) -> Result<HybridArc, HybridError> {
    cfg.validate()?;
    if x0.len() != sys.dim() {
        return Err(HybridError::DimensionMismatch {
            expected: sys.dim(),
            got: x0.len(),
        });
    }
    let tol = cfg.event_tol;
    if !sys.in_flow_set(0.0, x0, tol) && !sys.in_jump_set(0.0, x0) {
        return Err(HybridError::InvalidInitialState);
    }

    let mut anchors: Vec<f64> = cfg
        .anchors
        .iter()
        .copied()
        .filter(|a| a.is_finite() && *a > 0.0 && *a < cfg.t_max)
        .collect();
    anchors.sort_by(f64::total_cmp);

    let mut rec = Recorder {
        intervals: vec![ArcInterval {
            j: 0,
            times: vec![0.0],
            states: vec![x0.clone()],
        }],
        jumps: Vec::new(),
        max_residual: 0.0,
    };
    let mut t = 0.0_f64;
    let mut j = 0_usize;
    let mut x = x0.clone();
    let end_slack = 1e-12 * cfg.t_max.max(1.0);
    let min_step = 1e-6 * cfg.step;

    loop {
        if t >= cfg.t_max - end_slack {
            return Ok(rec.finish(Termination::TimeBudget));
        }
        if sys.in_jump_set(t, &x) {
            if j >= cfg.j_max {
                return Ok(rec.finish(Termination::JumpBudget));
            }
            let branches = sys.jump_map(t, &x);
            if branches.is_empty() {
                return Err(HybridError::EmptyJumpMap { t });
            }
            let chosen = match cfg.jump_priority {
                JumpPriority::PreferFirstListed => 0,
                JumpPriority::PreferLastListed => branches.len() - 1,
            };
            let candidates = branches.len();
            let branch = branches.into_iter().nth(chosen).expect("index within bounds");
            rec.jumps.push(JumpRecord {
                t,
                from_j: j,
                label: branch.label,
                candidates,
                chosen,
                ambiguous: branch.ambiguous,
            });
            j += 1;
            x = branch.state;
            rec.intervals.push(ArcInterval {
                j,
                times: vec![t],
                states: vec![x.clone()],
            });
            continue;
        }
        if !sys.in_flow_set(t, &x, tol) {
            return Ok(rec.finish(Termination::EscapedSets { t }));
        }

        let mut t_next = ((t / cfg.step).floor() + 1.0) * cfg.step;
        if t_next - t < min_step {
            t_next += cfg.step;
        }
        if let Some(a) = anchors.iter().find(|a| **a > t + min_step) {
            t_next = t_next.min(*a);
        }
        t_next = t_next.min(cfg.t_max);

        let advance = |to: f64, rec: &mut Recorder| -> Option<State> {
            let mut y = rk4_step(sys, t, &x, to - t)?;
            let r = sys.project(&mut y);
            rec.max_residual = rec.max_residual.max(r);
            Some(y)
        };

        let Some(x_next) = advance(t_next, &mut rec) else {
            let reason = "flow map returned a non-finite derivative".to_string();
            let partial = rec.finish(Termination::Blowup {
                t,
                reason: reason.clone(),
            });
            return Err(HybridError::NumericalBlowup {
                t,
                reason,
                partial: Box::new(partial),
            });
        };

        let entered_jump = sys.in_jump_set(t_next, &x_next);
        let left_flow = !entered_jump && !sys.in_flow_set(t_next, &x_next, tol);
        if entered_jump || left_flow {
            // bisect on the predicate that changed; `hi` always satisfies it
            let crossed = |s: f64, y: &State| {
                if entered_jump {
                    sys.in_jump_set(s, y)
                } else {
                    !sys.in_flow_set(s, y, tol)
                }
            };
            let (mut lo, mut hi) = (t, t_next);
            let mut x_lo = x.clone();
            let mut x_hi = x_next;
            for _ in 0..MAX_BISECTION_ITERATIONS {
                if hi - lo <= cfg.event_tol {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let Some(x_mid) = advance(mid, &mut rec) else {
                    break;
                };
                if crossed(mid, &x_mid) {
                    hi = mid;
                    x_hi = x_mid;
                } else {
                    lo = mid;
                    x_lo = x_mid;
                }
            }
            if entered_jump {
                rec.push(hi, x_hi.clone());
                t = hi;
                x = x_hi;
            } else {
                if lo > t {
                    rec.push(lo, x_lo);
                }
                return Ok(rec.finish(Termination::EscapedSets { t: hi }));
            }
        } else {
            rec.push(t_next, x_next.clone());
            t = t_next;
            x = x_next;
        }
    }
}

type MarginFn = dyn Fn(f64, &State) -> f64 + Sync;
type FlowFn = dyn Fn(f64, &State) -> State + Sync;
type JumpFn = dyn Fn(f64, &State) -> Vec<JumpBranch> + Sync;

/// A hybrid system assembled from closures; convenient for small models.
pub struct ClosureSystem {
    dim: usize,
    flow_margin: Box<MarginFn>,
    flow_map: Box<FlowFn>,
    jump_margin: Box<MarginFn>,
    jump_map: Box<JumpFn>,
}

impl ClosureSystem {
    /// A pure-flow system with `C` the whole space and `D` empty.
    pub fn flow_only(dim: usize, flow_map: impl Fn(f64, &State) -> State + Sync + 'static) -> Self {
        Self {
            dim,
            flow_margin: Box::new(|_, _| f64::INFINITY),
            flow_map: Box::new(flow_map),
            jump_margin: Box::new(|_, _| f64::NEG_INFINITY),
            jump_map: Box::new(|_, _| Vec::new()),
        }
    }

    pub fn with_flow_margin(mut self, f: impl Fn(f64, &State) -> f64 + Sync + 'static) -> Self {
        self.flow_margin = Box::new(f);
        self
    }

    pub fn with_jumps(
        mut self,
        margin: impl Fn(f64, &State) -> f64 + Sync + 'static,
        map: impl Fn(f64, &State) -> Vec<JumpBranch> + Sync + 'static,
    ) -> Self {
        self.jump_margin = Box::new(margin);
        self.jump_map = Box::new(map);
        self
    }
}

impl HybridSystem for ClosureSystem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn flow_margin(&self, t: f64, x: &State) -> f64 {
        (self.flow_margin)(t, x)
    }

    fn flow_map(&self, t: f64, x: &State) -> State {
        (self.flow_map)(t, x)
    }

    fn jump_margin(&self, t: f64, x: &State) -> f64 {
        (self.jump_margin)(t, x)
    }

    fn jump_map(&self, t: f64, x: &State) -> Vec<JumpBranch> {
        (self.jump_map)(t, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> ClosureSystem {
        ClosureSystem::flow_only(1, |_, x| -x)
    }

    fn sawtooth() -> ClosureSystem {
        ClosureSystem::flow_only(1, |_, _| DVector::from_element(1, 1.0))
            .with_flow_margin(|_, x| 1.0 - x[0])
            .with_jumps(
                |_, x| x[0] - 1.0,
                |_, _| vec![JumpBranch::new("reset", DVector::from_element(1, 0.0))],
            )
    }

    #[test]
    fn exponential_decay_endpoint() {
        let cfg = SolverConfig {
            step: 1e-2,
            t_max: 1.0,
            ..SolverConfig::default()
        };
        let arc = simulate(&decay(), &DVector::from_element(1, 1.0), &cfg).unwrap();
        let end = arc.final_state()[0];
        assert!((end - (-1.0f64).exp()).abs() < 1e-6);
        assert_eq!(arc.final_time().t, 1.0);
        assert_eq!(arc.termination, Termination::TimeBudget);
        arc.domain().validate().unwrap();
    }

    #[test]
    fn rk4_order_on_linear_decay() {
        let err = |h: f64| {
            let cfg = SolverConfig {
                step: h,
                t_max: 1.0,
                ..SolverConfig::default()
            };
            let arc = simulate(&decay(), &DVector::from_element(1, 1.0), &cfg).unwrap();
            (arc.final_state()[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn sawtooth_jumps_at_integers() {
        let cfg = SolverConfig {
            step: 0.013,
            t_max: 3.5,
            event_tol: 1e-11,
            ..SolverConfig::default()
        };
        let arc = simulate(&sawtooth(), &DVector::from_element(1, 0.0), &cfg).unwrap();
        assert_eq!(arc.jumps.len(), 3);
        for (k, jump) in arc.jumps.iter().enumerate() {
            assert!((jump.t - (k + 1) as f64).abs() <= 2.0 * cfg.event_tol, "{}", jump.t);
            assert_eq!(jump.from_j, k);
        }
        let dom = arc.domain();
        dom.validate().unwrap();
        assert_eq!(dom.intervals.len(), 4);
        // the jump instant is stored twice, before and after the reset
        let first = &arc.intervals[0];
        let second = &arc.intervals[1];
        assert_eq!(first.t_end(), second.t_start());
        assert!(first.states.last().unwrap()[0] >= 1.0);
        assert_eq!(second.states[0][0], 0.0);
    }

    #[test]
    fn initial_state_outside_both_sets() {
        let sys = ClosureSystem::flow_only(1, |_, x| -x)
            .with_flow_margin(|_, x| -x[0])
            .with_jumps(|_, x| x[0] - 2.0, |_, x| vec![JumpBranch::new("d", x.clone())]);
        let err = simulate(&sys, &DVector::from_element(1, 1.0), &SolverConfig::default());
        assert!(matches!(err, Err(HybridError::InvalidInitialState)));
    }

    #[test]
    fn escaping_the_flow_set_is_incomplete() {
        let sys = ClosureSystem::flow_only(1, |_, _| DVector::from_element(1, 1.0))
            .with_flow_margin(|_, x| 0.5 - x[0]);
        let cfg = SolverConfig::default();
        let arc = simulate(&sys, &DVector::from_element(1, 0.0), &cfg).unwrap();
        let Termination::EscapedSets { t } = arc.termination else {
            panic!("expected escape, got {:?}", arc.termination);
        };
        assert!((t - 0.5).abs() < 1e-9);
        let c = is_complete(&arc, &cfg);
        assert!(!c.complete);
        assert!(c.reason.contains("escaped flow and jump sets"));
    }

    #[test]
    fn blowup_carries_partial_arc() {
        let sys = ClosureSystem::flow_only(1, |t, x| {
            if t > 0.25 {
                DVector::from_element(1, f64::NAN)
            } else {
                x.clone()
            }
        });
        let cfg = SolverConfig {
            step: 0.1,
            t_max: 1.0,
            ..SolverConfig::default()
        };
        match simulate(&sys, &DVector::from_element(1, 1.0), &cfg) {
            Err(HybridError::NumericalBlowup { partial, .. }) => {
                assert_eq!(partial.sample_count(), 3);
                assert!(!is_complete(&partial, &cfg).complete);
            }
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn time_projection_prefers_post_jump_value() {
        let cfg = SolverConfig {
            step: 0.25,
            t_max: 1.5,
            ..SolverConfig::default()
        };
        let arc = simulate(&sawtooth(), &DVector::from_element(1, 0.0), &cfg).unwrap();
        let jt = arc.jumps[0].t;
        assert_eq!(time_projection(&arc, jt).unwrap()[0], 0.0);
        assert!((time_projection(&arc, 0.5).unwrap()[0] - 0.5).abs() < 1e-12);
        assert!((time_projection(&arc, 0.6).unwrap()[0] - 0.6).abs() < 1e-12);
        assert!(matches!(
            time_projection(&arc, 2.0),
            Err(HybridError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn anchors_add_samples() {
        let cfg = SolverConfig {
            step: 0.1,
            t_max: 1.0,
            anchors: vec![0.333],
            ..SolverConfig::default()
        };
        let arc = simulate(&decay(), &DVector::from_element(1, 1.0), &cfg).unwrap();
        assert!(arc.intervals[0].times.contains(&0.333));
        assert!(arc.intervals[0].times.iter().any(|t| (*t - 0.4).abs() < 1e-15));
    }

    #[test]
    fn priority_selects_branch() {
        let two_way = || {
            ClosureSystem::flow_only(1, |_, _| DVector::from_element(1, 1.0))
                .with_flow_margin(|_, x| 1.0 - x[0])
                .with_jumps(
                    |_, x| x[0] - 1.0,
                    |_, _| {
                        vec![
                            JumpBranch::new("first", DVector::from_element(1, 0.0)),
                            JumpBranch::new("last", DVector::from_element(1, 0.5)),
                        ]
                    },
                )
        };
        for (priority, label) in [
            (JumpPriority::PreferFirstListed, "first"),
            (JumpPriority::PreferLastListed, "last"),
        ] {
            let cfg = SolverConfig {
                step: 0.1,
                t_max: 1.2,
                jump_priority: priority,
                ..SolverConfig::default()
            };
            let arc = simulate(&two_way(), &DVector::from_element(1, 0.0), &cfg).unwrap();
            assert_eq!(arc.jumps[0].label, label);
            assert_eq!(arc.jumps[0].candidates, 2);
        }
    }

    #[test]
    fn jump_budget_stops_zeno_reset() {
        // G maps D into itself: jumps forever at t = 0
        let sys = ClosureSystem::flow_only(1, |_, x| -x)
            .with_jumps(|_, _| 0.0, |_, x| vec![JumpBranch::new("loop", x.clone())]);
        let cfg = SolverConfig {
            j_max: 5,
            ..SolverConfig::default()
        };
        let arc = simulate(&sys, &DVector::from_element(1, 1.0), &cfg).unwrap();
        assert_eq!(arc.termination, Termination::JumpBudget);
        assert_eq!(arc.jumps.len(), 5);
        assert!(is_complete(&arc, &cfg).complete);
    }

    #[test]
    fn hybrid_time_order() {
        let a = HybridTime { t: 1.0, j: 3 };
        let b = HybridTime { t: 1.0, j: 4 };
        let c = HybridTime { t: 1.5, j: 0 };
        assert!(a < b && b < c && a < c);
    }

    #[test]
    fn domain_validator_rejects_gaps() {
        let dom = HybridTimeDomain {
            intervals: vec![
                DomainInterval { t_start: 0.0, t_end: 1.0, j: 0 },
                DomainInterval { t_start: 1.1, t_end: 2.0, j: 1 },
            ],
        };
        assert_eq!(dom.validate(), Err(DomainError::Gap { index: 0, next: 1 }));
        let dom = HybridTimeDomain {
            intervals: vec![
                DomainInterval { t_start: 0.0, t_end: 1.0, j: 0 },
                DomainInterval { t_start: 1.0, t_end: 2.0, j: 2 },
            ],
        };
        assert_eq!(dom.validate(), Err(DomainError::JumpIndex(1)));
        assert_eq!(dom.last_index_at(1.0), Some(2));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SolverConfig {
            step: 0.0,
            ..SolverConfig::default()
        };
        assert!(matches!(
            simulate(&decay(), &DVector::from_element(1, 1.0), &cfg),
            Err(HybridError::InvalidConfig(_))
        ));
    }
}
