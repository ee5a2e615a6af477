use std::sync::Arc;

use nalgebra::Vector3;

use super::{H1System, X1State};
use crate::hybrid::{is_complete, simulate, HybridArc, HybridError, HybridSystem, SolverConfig, State, Termination};
use crate::lifting::quat_set_distance;

/// A run counts as converged when the distance stays below this value
/// over the final [`TAIL_FRACTION`] of the time budget.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-3;
pub const TAIL_FRACTION: f64 = 0.1;

type StateFn = dyn Fn(&State) -> f64 + Send + Sync;

/// A scalar tracked along a run; the report keeps its maximum.
#[derive(Clone)]
pub struct Diagnostic {
    pub name: String,
    f: Arc<StateFn>,
}

impl Diagnostic {
    pub fn new(name: impl Into<String>, f: impl Fn(&State) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, x: &State) -> f64 {
        (self.f)(x)
    }
}

/// `‖x‖_A` for a compact target set `A`, plus optional diagnostics.
#[derive(Clone)]
pub struct StabilityTarget {
    pub description: String,
    distance: Arc<StateFn>,
    pub diagnostics: Vec<Diagnostic>,
}

impl std::fmt::Debug for StabilityTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StabilityTarget")
            .field("description", &self.description)
            .field(
                "diagnostics",
                &self.diagnostics.iter().map(|d| d.name.as_str()).collect::<Vec<_>>(),
            )
            .finish()
    }
}

impl StabilityTarget {
    pub fn new(description: impl Into<String>, distance: impl Fn(&State) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            description: description.into(),
            distance: Arc::new(distance),
            diagnostics: Vec::new(),
        }
    }

    pub fn with_diagnostic(mut self, d: Diagnostic) -> Self {
        self.diagnostics.push(d);
        self
    }

    pub fn distance(&self, x: &State) -> f64 {
        (self.distance)(x)
    }
}

fn product_distance(theta: &Vector3<f64>, w: &Vector3<f64>) -> f64 {
    (theta.norm_squared() + w.norm_squared()).sqrt()
}

/// `√(‖ϑ‖² + ‖ω‖²)` on `H₂` states.
pub fn default_h2_target() -> StabilityTarget {
    StabilityTarget::new("sqrt(|theta|^2 + |omega|^2) on H2 states", |x| {
        product_distance(&Vector3::new(x[0], x[1], x[2]), &Vector3::new(x[3], x[4], x[5]))
    })
    .with_diagnostic(Diagnostic::new("theta_norm", |x| Vector3::new(x[0], x[1], x[2]).norm()))
}

/// `√(‖ϑ‖² + ‖ω‖²)` with `ϑ` the lift output of the `H₁` state.
pub fn default_h1_target(h1: &H1System) -> StabilityTarget {
    let (a, b, c) = (h1.clone(), h1.clone(), h1.rho_dim());
    StabilityTarget::new("sqrt(|theta|^2 + |omega|^2) with theta the lift output of H1", move |x| {
        match a.theta(x).as_finite() {
            Some(th) => product_distance(th, &Vector3::new(x[14], x[15], x[16])),
            None => f64::INFINITY,
        }
    })
    .with_diagnostic(Diagnostic::new("theta_norm", move |x| b.theta(x).norm()))
    .with_diagnostic(Diagnostic::new("memory_distance", move |x| {
        X1State::from_vector(x, c)
            .map(|s| quat_set_distance(s.lift.q_hat(), &s.r))
            .unwrap_or(f64::INFINITY)
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRun {
    pub initial_distance: f64,
    pub final_distance: f64,
    pub max_distance: f64,
    /// `max distance / initial distance`; 1 when starting on the target.
    pub excursion_ratio: f64,
    /// Maximum distance on each quarter of the time budget.
    pub quarter_maxima: [f64; 4],
    pub envelope_nonincreasing: bool,
    pub tail_max: f64,
    pub converged: bool,
    pub jumps: usize,
    pub final_time: f64,
    pub termination: Option<Termination>,
    pub diagnostics: Vec<(String, f64)>,
    pub error: Option<String>,
}

fn run_stats(arc: &HybridArc, target: &StabilityTarget, cfg: &SolverConfig) -> StabilityRun {
    let t_max = cfg.t_max.max(f64::MIN_POSITIVE);
    let tail_start = (1.0 - TAIL_FRACTION) * cfg.t_max;
    let mut quarters = [0.0f64; 4];
    let mut tail_max: f64 = 0.0;
    let mut max_distance: f64 = 0.0;
    let mut diag: Vec<f64> = vec![f64::NEG_INFINITY; target.diagnostics.len()];
    let initial = target.distance(&arc.intervals[0].states[0]);
    for (t, _, x) in arc.samples() {
        let d = target.distance(x);
        max_distance = max_distance.max(d);
        let q = ((t / t_max) * 4.0).floor().clamp(0.0, 3.0) as usize;
        quarters[q] = quarters[q].max(d);
        if t >= tail_start {
            tail_max = tail_max.max(d);
        }
        for (k, dg) in target.diagnostics.iter().enumerate() {
            diag[k] = diag[k].max(dg.eval(x));
        }
    }
    let complete = is_complete(arc, cfg).complete;
    let final_distance = target.distance(arc.final_state());
    StabilityRun {
        initial_distance: initial,
        final_distance,
        max_distance,
        excursion_ratio: if initial > 0.0 { max_distance / initial } else { 1.0 },
        quarter_maxima: quarters,
        envelope_nonincreasing: quarters.windows(2).all(|w| w[1] <= w[0]),
        tail_max,
        converged: complete && arc.final_time().t >= tail_start && tail_max < CONVERGENCE_THRESHOLD,
        jumps: arc.jumps.len(),
        final_time: arc.final_time().t,
        termination: Some(arc.termination.clone()),
        diagnostics: target
            .diagnostics
            .iter()
            .map(|d| d.name.clone())
            .zip(diag)
            .collect(),
        error: None,
    }
}

/// Stability statistics for one initial condition.
pub fn stability_run<S: HybridSystem + ?Sized>(
    sys: &S,
    target: &StabilityTarget,
    x0: &State,
    cfg: &SolverConfig,
) -> StabilityRun {
    match simulate(sys, x0, cfg) {
        Ok(arc) => run_stats(&arc, target, cfg),
        Err(HybridError::NumericalBlowup { partial, reason, .. }) => {
            let mut run = run_stats(&partial, target, cfg);
            run.converged = false;
            run.error = Some(reason);
            run
        }
        Err(e) => StabilityRun {
            initial_distance: target.distance(x0),
            final_distance: f64::NAN,
            max_distance: f64::NAN,
            excursion_ratio: f64::NAN,
            quarter_maxima: [f64::NAN; 4],
            envelope_nonincreasing: false,
            tail_max: f64::NAN,
            converged: false,
            jumps: 0,
            final_time: 0.0,
            termination: None,
            diagnostics: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub target: String,
    pub runs: Vec<StabilityRun>,
}

impl StabilityReport {
    pub fn converged_count(&self) -> usize {
        self.runs.iter().filter(|r| r.converged).count()
    }

    pub fn all_converged(&self) -> bool {
        self.runs.iter().all(|r| r.converged)
    }
}

pub fn stability_evidence<S: HybridSystem + ?Sized>(
    sys: &S,
    target: &StabilityTarget,
    initial_conditions: &[State],
    cfg: &SolverConfig,
) -> StabilityReport {
    StabilityReport {
        target: target.description.clone(),
        runs: initial_conditions
            .iter()
            .map(|x0| stability_run(sys, target, x0, cfg))
            .collect(),
    }
}
