use thiserror::Error;

use super::{ControlError, H1System, H2System, X1State, X2State};
use crate::attitude::{mrp_to_rotation, Mrp};
use crate::hybrid::{simulate, HybridArc, HybridError, SolverConfig, State};
use crate::lifting::JumpKind;

/// Allowed mismatch between the time ranges of aligned intervals.
pub const EQUIVALENCE_TIME_SLACK: f64 = 1e-6;
/// Lower bound on the equivalence tolerance, so that roundoff-level
/// integrator errors do not produce a tolerance below machine precision.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EquivalenceError {
    #[error("hybrid time domains cannot be aligned: {0}")]
    StructuralMismatch(String),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub aligned_points: usize,
    pub max_rotation_dev: f64,
    pub max_theta_dev: f64,
    pub max_omega_dev: f64,
    pub max_rho_dev: f64,
    /// Largest gap between matching `D_m` jump times of the two arcs.
    pub max_jump_time_dev: f64,
    pub h1_dl_jumps: usize,
    pub h1_dm_jumps: usize,
    pub h2_jumps: usize,
    pub j_prime_le_j: bool,
    /// `j′ < j` at every aligned point after the first `D_l` jump.
    pub strict_after_dl: bool,
    pub tol: f64,
}

impl EquivalenceReport {
    pub fn max_deviation(&self) -> f64 {
        self.max_rotation_dev
            .max(self.max_theta_dev)
            .max(self.max_omega_dev)
            .max(self.max_rho_dev)
    }

    pub fn passed(&self) -> bool {
        self.max_deviation() <= self.tol && self.j_prime_le_j && self.strict_after_dl
    }
}

fn mrp_gap(a: &Mrp, b: &Mrp) -> f64 {
    match (a.as_finite(), b.as_finite()) {
        (Some(a), Some(b)) => (a - b).norm(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    }
}

struct Gaps {
    rotation: f64,
    theta: f64,
    omega: f64,
    rho: f64,
}

fn gaps(h1: &H1System, x1: &State, x2: &State) -> Result<Gaps, ControlError> {
    let n = h1.rho_dim();
    let s1 = X1State::from_vector(x1, n)?;
    let s2 = X2State::from_vector(x2, n)?;
    let th1 = h1.theta(x1);
    Ok(Gaps {
        rotation: (s1.r.matrix() - mrp_to_rotation(&s2.theta).matrix()).norm(),
        theta: mrp_gap(&th1, &s2.theta),
        omega: (s1.omega.vector() - s2.omega.vector()).norm(),
        rho: (&s1.rho - &s2.rho).norm(),
    })
}

/// Aligns `(t, j)` of the `H₁` arc with `(t, j′)` of the `H₂` arc, where
/// `j′` counts the `D_m` jumps of `H₁` before interval `j`, and measures
/// the distance between `(R₁, ϑ₁, ω₁, ρ₁)` and `(R_ϑ(ϑ₂), ϑ₂, ω₂, ρ₂)`.
pub fn check_equivalence(
    h1: &H1System,
    arc1: &HybridArc,
    arc2: &HybridArc,
    tol: f64,
) -> Result<EquivalenceReport, EquivalenceError> {
    let dm_times: Vec<f64> = arc1
        .jumps
        .iter()
        .filter(|j| j.label == JumpKind::Dm.label())
        .map(|j| j.t)
        .collect();
    if dm_times.len() != arc2.jumps.len() {
        return Err(EquivalenceError::StructuralMismatch(format!(
            "H1 has {} D_m jumps but H2 has {} jumps",
            dm_times.len(),
            arc2.jumps.len()
        )));
    }
    let max_jump_time_dev = dm_times
        .iter()
        .zip(&arc2.jumps)
        .map(|(a, b)| (a - b.t).abs())
        .fold(0.0, f64::max);

    let mut rep = EquivalenceReport {
        aligned_points: 0,
        max_rotation_dev: 0.0,
        max_theta_dev: 0.0,
        max_omega_dev: 0.0,
        max_rho_dev: 0.0,
        max_jump_time_dev,
        h1_dl_jumps: arc1.jump_count(JumpKind::Dl.label()),
        h1_dm_jumps: dm_times.len(),
        h2_jumps: arc2.jumps.len(),
        j_prime_le_j: true,
        strict_after_dl: true,
        tol,
    };

    let mut j_prime = 0;
    let mut seen_dl = false;
    for iv1 in &arc1.intervals {
        if iv1.j > 0 {
            match JumpKind::from_label(arc1.jumps[iv1.j - 1].label) {
                Some(JumpKind::Dm) => j_prime += 1,
                Some(JumpKind::Dl) => seen_dl = true,
                None => {}
            }
        }
        let iv2 = arc2.intervals.get(j_prime).ok_or_else(|| {
            EquivalenceError::StructuralMismatch(format!("H2 has no interval j' = {j_prime}"))
        })?;
        if iv1.t_start() < iv2.t_start() - EQUIVALENCE_TIME_SLACK
            || iv1.t_end() > iv2.t_end() + EQUIVALENCE_TIME_SLACK
        {
            return Err(EquivalenceError::StructuralMismatch(format!(
                "H1 interval j = {} spans [{}, {}] but H2 interval j' = {} spans [{}, {}]",
                iv1.j,
                iv1.t_start(),
                iv1.t_end(),
                j_prime,
                iv2.t_start(),
                iv2.t_end()
            )));
        }
        rep.j_prime_le_j &= j_prime <= iv1.j;
        if seen_dl {
            rep.strict_after_dl &= j_prime < iv1.j;
        }
        for (t, x1) in iv1.times.iter().zip(&iv1.states) {
            let x2 = iv2.interpolate(*t);
            let g = gaps(h1, x1, &x2)?;
            rep.max_rotation_dev = rep.max_rotation_dev.max(g.rotation);
            rep.max_theta_dev = rep.max_theta_dev.max(g.theta);
            rep.max_omega_dev = rep.max_omega_dev.max(g.omega);
            rep.max_rho_dev = rep.max_rho_dev.max(g.rho);
            rep.aligned_points += 1;
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone)]
pub struct PairedRun {
    pub arc1: HybridArc,
    pub arc2: HybridArc,
}

/// Simulates `H₁` from `x1_0` and `H₂` from the corresponding state. The
/// `H₂` run lands samples on every jump time of the `H₁` run.
pub fn run_paired(
    h1: &H1System,
    h2: &H2System,
    x1_0: &State,
    cfg: &SolverConfig,
) -> Result<PairedRun, EquivalenceError> {
    let s1 = X1State::from_vector(x1_0, h1.rho_dim())?;
    let x2_0 = X2State::corresponding(&s1, h1.params())?.to_vector()?;
    let arc1 = simulate(h1, x1_0, cfg)?;
    let mut cfg2 = cfg.clone();
    cfg2.anchors.extend(arc1.jumps.iter().map(|j| j.t));
    let arc2 = simulate(h2, &x2_0, &cfg2)?;
    Ok(PairedRun { arc1, arc2 })
}

fn endpoint_gap_h1(h1: &H1System, a: &State, b: &State) -> Result<f64, ControlError> {
    let n = h1.rho_dim();
    let (sa, sb) = (X1State::from_vector(a, n)?, X1State::from_vector(b, n)?);
    Ok((sa.r.matrix() - sb.r.matrix())
        .norm()
        .max(mrp_gap(&h1.theta(a), &h1.theta(b)))
        .max((sa.omega.vector() - sb.omega.vector()).norm())
        .max((&sa.rho - &sb.rho).norm()))
}

fn endpoint_gap_h2(n: usize, a: &State, b: &State) -> Result<f64, ControlError> {
    let (sa, sb) = (X2State::from_vector(a, n)?, X2State::from_vector(b, n)?);
    Ok((mrp_to_rotation(&sa.theta).matrix() - mrp_to_rotation(&sb.theta).matrix())
        .norm()
        .max(mrp_gap(&sa.theta, &sb.theta))
        .max((sa.omega.vector() - sb.omega.vector()).norm())
        .max((&sa.rho - &sb.rho).norm()))
}

/// Largest gap over `f` between an arc and its rerun at half the step,
/// taken at the coarse grid times shared by both runs within the same
/// jump interval, and at the endpoints.
fn halving_gap<F>(coarse: &HybridArc, fine: &HybridArc, gap: F) -> Result<f64, ControlError>
where
    F: Fn(&State, &State) -> Result<f64, ControlError>,
{
    let mut worst = gap(coarse.final_state(), fine.final_state())?;
    for (ivc, ivf) in coarse.intervals.iter().zip(&fine.intervals) {
        for (t, xc) in ivc.times.iter().zip(&ivc.states) {
            let k = ivf.times.partition_point(|s| *s < t - 1e-12);
            if let (Some(tf), Some(xf)) = (ivf.times.get(k), ivf.states.get(k)) {
                if (tf - t).abs() <= 1e-12 {
                    worst = worst.max(gap(xc, xf)?);
                }
            }
        }
    }
    Ok(worst)
}

/// Step-halving errors of `H₁` and `H₂`: the largest difference between
/// runs at `step` and `step / 2` along the trajectory.
pub fn step_halving_errors(
    h1: &H1System,
    h2: &H2System,
    x1_0: &State,
    cfg: &SolverConfig,
) -> Result<(f64, f64), EquivalenceError> {
    let coarse = run_paired(h1, h2, x1_0, cfg)?;
    let fine = run_paired(h1, h2, x1_0, &cfg.with_step(cfg.step / 2.0))?;
    let e1 = halving_gap(&coarse.arc1, &fine.arc1, |a, b| endpoint_gap_h1(h1, a, b))?;
    let e2 = halving_gap(&coarse.arc2, &fine.arc2, |a, b| endpoint_gap_h2(h2.rho_dim(), a, b))?;
    Ok((e1, e2))
}

/// Ten times the larger step-halving error, floored at [`ROUNDOFF_FLOOR`].
pub fn equivalence_tolerance(e1: f64, e2: f64) -> f64 {
    (10.0 * e1.max(e2)).max(ROUNDOFF_FLOOR)
}
