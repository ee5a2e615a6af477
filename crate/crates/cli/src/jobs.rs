//! Running a resolved scenario and persisting its artifacts.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use mrplift::attitude::{mrp_to_rotation, stereo_inv, AngularVelocity, Mrp};
use mrplift::closed_loop::{
    check_equivalence, default_h1_target, default_h2_target, equivalence_tolerance, make_h1,
    make_h2, run_paired, stability_run, step_halving_errors, EquivalenceError, StabilityRun,
    X1State, X2State,
};
use mrplift::hybrid::{is_complete, simulate, HybridArc, SolverConfig, State};
use mrplift::lifting::{
    arc_rows, lift_state_to_vector, make_lift_system, verify_lift_arc, verify_lift_rows,
    ConstantRotation, LiftArcReport, LiftFilter, LiftParams, LiftState, PrincipalRamp,
    RotationSource, LIFT_CONSISTENCY_TOL, LIFT_JUMP_TOL,
};

use crate::error::CliError;
use crate::scenario::{Kind, Resolved, RotationSourceSpec, Scenario, SweepSpec};
use crate::trace::{self, num, Table};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads for sweeps; `None` uses one per core.
    pub workers: Option<usize>,
    /// Overrides the sweep seed.
    pub seed: Option<u64>,
    /// Multiplies every check tolerance.
    pub tol_scale: f64,
    pub config_path: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            workers: None,
            seed: None,
            tol_scale: 1.0,
            config_path: None,
        }
    }
}

/// One pass/fail check of a run. Value and limit are absent for purely
/// logical checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
}

impl Check {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= limit,
            value: Some(value),
            limit: Some(limit),
        }
    }

    fn holds(name: &str, passed: bool) -> Self {
        Self {
            name: name.into(),
            passed,
            value: None,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct JumpLogEntry {
    system: &'static str,
    t: f64,
    from_j: usize,
    label: &'static str,
    candidates: usize,
    chosen: usize,
    ambiguous: bool,
}

fn jump_log(system: &'static str, arc: &HybridArc) -> Vec<JumpLogEntry> {
    arc.jumps
        .iter()
        .map(|j| JumpLogEntry {
            system,
            t: j.t,
            from_j: j.from_j,
            label: j.label,
            candidates: j.candidates,
            chosen: j.chosen,
            ambiguous: j.ambiguous,
        })
        .collect()
}

#[derive(Default)]
struct JobOutput {
    report: serde_json::Map<String, Value>,
    checks: Vec<Check>,
    tables: Vec<(String, Table)>,
    jumps: Vec<JumpLogEntry>,
    warnings: Vec<String>,
    summary: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub passed: bool,
    pub checks: Vec<Check>,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

fn sim(e: impl std::fmt::Display) -> CliError {
    CliError::Simulation(e.to_string())
}

fn termination(arc: &HybridArc, cfg: &SolverConfig) -> Value {
    let c = is_complete(arc, cfg);
    json!({
        "kind": format!("{:?}", arc.termination),
        "complete": c.complete,
        "reason": c.reason,
        "final_t": arc.final_time().t,
        "final_j": arc.final_time().j,
    })
}

fn lift_checks(rep: &LiftArcReport, params: &LiftParams, s: f64) -> Vec<Check> {
    vec![
        Check::at_most("lift_consistency", rep.max_consistency_defect, LIFT_CONSISTENCY_TOL * s),
        Check::holds("output_defined", rep.undefined_output_samples == 0),
        Check::at_most("theta_norm_bound", rep.max_theta_norm, params.radius() + LIFT_CONSISTENCY_TOL * s),
        Check::at_most("dl_output_invariance", rep.max_dl_defect, LIFT_JUMP_TOL * s),
        Check::at_most("dm_shadow_relation", rep.max_dm_defect, LIFT_JUMP_TOL * s),
        Check::at_most("memory_after_dl", rep.max_memory_distance_after_dl, LIFT_JUMP_TOL * s),
    ]
}

fn lift_report(rep: &LiftArcReport) -> serde_json::Map<String, Value> {
    let v = json!({
        "samples": rep.samples,
        "dl_jumps": rep.dl_jumps,
        "dm_jumps": rep.dm_jumps,
        "tie_breaks": rep.tie_breaks,
        "max_consistency_defect": rep.max_consistency_defect,
        "max_theta_norm": rep.max_theta_norm,
        "undefined_output_samples": rep.undefined_output_samples,
        "max_dl_defect": rep.max_dl_defect,
        "max_dm_defect": rep.max_dm_defect,
        "max_memory_distance_after_dl": rep.max_memory_distance_after_dl,
    });
    match v {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}

fn lift_plot(rows: &[mrplift::lifting::FilterRow]) -> Table {
    let mut tab = Table::new(["t", "j", "distance", "norm_theta"].map(String::from).into());
    for r in rows {
        tab.rows.push(vec![num(r.t), r.j.to_string(), num(r.dist), num(r.theta.norm())]);
    }
    tab
}

fn simulated_lift<S: RotationSource>(
    src: S,
    res: &Resolved,
    sc: &Scenario,
    s: f64,
) -> Result<JobOutput, CliError> {
    let sys = make_lift_system(res.lift, &src);
    let arc = simulate(&sys, &lift_state_to_vector(&res.lift0), &res.solver).map_err(sim)?;
    let rows = arc_rows(&arc, &src, &res.lift);
    let rep = verify_lift_arc(&arc, &src, &res.lift);
    let mut out = JobOutput {
        report: lift_report(&rep),
        checks: lift_checks(&rep, &res.lift, s),
        jumps: jump_log("lift", &arc),
        ..JobOutput::default()
    };
    out.checks.push(Check::holds("complete", is_complete(&arc, &res.solver).complete));
    out.report.insert("termination".into(), termination(&arc, &res.solver));
    out.summary = format!("{} D_m jump(s), {} D_l jump(s)", rep.dm_jumps, rep.dl_jumps);
    out.tables.push((sc.outputs.trace.clone(), trace::lift_table(&rows)));
    out.tables.push((sc.outputs.plot.clone(), lift_plot(&rows)));
    Ok(out)
}

fn trace_lift(path: &Path, res: &Resolved, sc: &Scenario, s: f64) -> Result<JobOutput, CliError> {
    let samples = trace::read_rotation_samples(path)?;
    let filter = match sc.initial.q_hat {
        Some(_) => LiftFilter::new(res.lift, res.lift0),
        None => LiftFilter::with_guess(res.lift, mrplift::attitude::UnitQuaternion::identity(), sc.initial.m)
            .map_err(|e| CliError::Config(e.to_string()))?,
    };
    let mut filter = filter.with_priority(res.solver.jump_priority);
    let mut rows = Vec::with_capacity(samples.len());
    for (t, r) in samples {
        rows.extend(filter.push(t, r).map_err(sim)?);
    }
    let rep = verify_lift_rows(&rows, &res.lift);
    let warnings = filter
        .warnings()
        .iter()
        .map(|w| format!("t = {}: consecutive samples {} rad apart", w.t, w.angle))
        .collect();
    let mut out = JobOutput {
        report: lift_report(&rep),
        checks: lift_checks(&rep, &res.lift, s),
        warnings,
        ..JobOutput::default()
    };
    for w in rows.windows(2) {
        if w[1].j > w[0].j {
            out.jumps.push(JumpLogEntry {
                system: "lift",
                t: w[1].t,
                from_j: w[0].j,
                label: if w[1].event.label() == "jump_Dl" { "Dl" } else { "Dm" },
                candidates: 1,
                chosen: 0,
                ambiguous: w[0].tie && w[1].event.label() == "jump_Dl",
            });
        }
    }
    out.summary = format!(
        "{} samples from trace, {} D_m jump(s), {} D_l jump(s)",
        rows.len(),
        rep.dm_jumps,
        rep.dl_jumps
    );
    out.tables.push((sc.outputs.trace.clone(), trace::lift_table(&rows)));
    out.tables.push((sc.outputs.plot.clone(), lift_plot(&rows)));
    Ok(out)
}

fn lift_job(sc: &Scenario, res: &Resolved, s: f64) -> Result<JobOutput, CliError> {
    match sc.rotation_source.as_ref().expect("validated") {
        RotationSourceSpec::Constant => simulated_lift(ConstantRotation(res.r0), res, sc, s),
        RotationSourceSpec::PrincipalRamp { axis, rate } => {
            let src = PrincipalRamp::new(res.r0, Vector3::from(*axis), *rate)
                .map_err(|e| CliError::Config(e.to_string()))?;
            simulated_lift(src, res, sc, s)
        }
        RotationSourceSpec::FromTrace { .. } => {
            trace_lift(res.trace_path.as_deref().expect("validated"), res, sc, s)
        }
    }
}

fn vec3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Maximum lift consistency defect and output norm over an `H₁` arc,
/// plus the number of samples with `ϑ = ∞`.
fn h1_lift_stats(h1: &mrplift::closed_loop::H1System, arc: &HybridArc) -> (f64, f64, usize) {
    let (mut defect, mut norm, mut undefined) = (0.0f64, 0.0f64, 0);
    for (_, _, x) in arc.samples() {
        let th = h1.theta(x);
        if th.is_infinite() {
            undefined += 1;
            continue;
        }
        let r = X1State::from_vector(x, h1.rho_dim()).map(|s| s.r);
        if let Ok(r) = r {
            defect = defect.max((r.matrix() - mrp_to_rotation(&th).matrix()).norm());
        }
        norm = norm.max(th.norm());
    }
    (defect, norm, undefined)
}

fn h1_job(sc: &Scenario, res: &Resolved, s: f64) -> Result<JobOutput, CliError> {
    let h1 = make_h1(res.plant, res.controller.clone(), res.lift);
    let x0 = res.x1_state().to_vector();
    let arc = simulate(&h1, &x0, &res.solver).map_err(sim)?;
    let (defect, norm, undefined) = h1_lift_stats(&h1, &arc);
    let target = default_h1_target(&h1);
    let w_final = X1State::from_vector(arc.final_state(), h1.rho_dim()).map_err(sim)?.omega;
    let mut out = JobOutput {
        jumps: jump_log("h1", &arc),
        ..JobOutput::default()
    };
    out.checks = vec![
        Check::holds("complete", is_complete(&arc, &res.solver).complete),
        Check::at_most("lift_consistency", defect, LIFT_CONSISTENCY_TOL * s),
        Check::holds("output_defined", undefined == 0),
        Check::at_most("theta_norm_bound", norm, res.lift.radius() + LIFT_CONSISTENCY_TOL * s),
    ];
    out.report.insert("dl_jumps".into(), json!(arc.jump_count("Dl")));
    out.report.insert("dm_jumps".into(), json!(arc.jump_count("Dm")));
    out.report.insert("max_theta_norm".into(), json!(norm));
    out.report.insert("max_consistency_defect".into(), json!(defect));
    out.report.insert("max_projection_residual".into(), json!(arc.max_projection_residual));
    out.report.insert("initial_distance".into(), json!(target.distance(&x0)));
    out.report.insert("final_distance".into(), json!(target.distance(arc.final_state())));
    out.report.insert(
        "kinetic_energy".into(),
        json!([res.plant.kinetic_energy(res.omega0.vector()), res.plant.kinetic_energy(w_final.vector())]),
    );
    out.report.insert("termination".into(), termination(&arc, &res.solver));
    out.summary = format!(
        "{} D_m jump(s), {} D_l jump(s), final distance {:e}",
        arc.jump_count("Dm"),
        arc.jump_count("Dl"),
        target.distance(arc.final_state())
    );
    out.tables.push((sc.outputs.trace.clone(), trace::h1_table(&h1, &arc)));
    out.tables.push((
        sc.outputs.plot.clone(),
        trace::plot_table(&arc, |x| target.distance(x), |x| h1.theta(x).norm()),
    ));
    Ok(out)
}

fn h2_initial(res: &Resolved) -> Result<State, CliError> {
    let x2 = match res.theta0 {
        Some(theta) => X2State {
            theta,
            omega: res.omega0,
            rho: res.rho0.clone(),
        },
        None => X2State::corresponding(&res.x1_state(), &res.lift).map_err(sim)?,
    };
    x2.to_vector().map_err(sim)
}

fn h2_job(sc: &Scenario, res: &Resolved, s: f64) -> Result<JobOutput, CliError> {
    let h2 = make_h2(res.plant, res.controller.clone(), res.lift);
    let x0 = h2_initial(res)?;
    let arc = simulate(&h2, &x0, &res.solver).map_err(sim)?;
    let norm = arc
        .samples()
        .map(|(_, _, x)| x.rows(0, 3).norm())
        .fold(0.0, f64::max);
    let target = default_h2_target();
    let mut out = JobOutput {
        jumps: jump_log("h2", &arc),
        ..JobOutput::default()
    };
    out.checks = vec![
        Check::holds("complete", is_complete(&arc, &res.solver).complete),
        Check::at_most("theta_norm_bound", norm, res.lift.radius() + LIFT_CONSISTENCY_TOL * s),
    ];
    out.report.insert("dm_jumps".into(), json!(arc.jump_count("Dm")));
    out.report.insert("max_theta_norm".into(), json!(norm));
    out.report.insert("initial_distance".into(), json!(target.distance(&x0)));
    out.report.insert("final_distance".into(), json!(target.distance(arc.final_state())));
    out.report.insert("termination".into(), termination(&arc, &res.solver));
    out.summary = format!(
        "{} D_m jump(s), final distance {:e}",
        arc.jump_count("Dm"),
        target.distance(arc.final_state())
    );
    out.tables.push((sc.outputs.trace.clone(), trace::h2_table(&h2, &arc)));
    out.tables.push((
        sc.outputs.plot.clone(),
        trace::plot_table(&arc, |x| target.distance(x), |x| x.rows(0, 3).norm()),
    ));
    Ok(out)
}

fn equivalence_job(sc: &Scenario, res: &Resolved, s: f64) -> Result<JobOutput, CliError> {
    let h1 = make_h1(res.plant, res.controller.clone(), res.lift);
    let h2 = make_h2(res.plant, res.controller.clone(), res.lift);
    let x0 = res.x1_state().to_vector();
    let (e1, e2) = step_halving_errors(&h1, &h2, &x0, &res.solver).map_err(sim)?;
    let tol = equivalence_tolerance(e1, e2) * s;
    let paired = run_paired(&h1, &h2, &x0, &res.solver).map_err(sim)?;
    let mut out = JobOutput::default();
    out.jumps = jump_log("h1", &paired.arc1);
    out.jumps.extend(jump_log("h2", &paired.arc2));
    out.report.insert("step_halving_error_h1".into(), json!(e1));
    out.report.insert("step_halving_error_h2".into(), json!(e2));
    out.report.insert("tol".into(), json!(tol));
    out.report.insert("termination_h1".into(), termination(&paired.arc1, &res.solver));
    out.report.insert("termination_h2".into(), termination(&paired.arc2, &res.solver));
    out.checks.push(Check::holds("complete_h1", is_complete(&paired.arc1, &res.solver).complete));
    out.checks.push(Check::holds("complete_h2", is_complete(&paired.arc2, &res.solver).complete));
    match check_equivalence(&h1, &paired.arc1, &paired.arc2, tol) {
        Ok(rep) => {
            out.checks.push(Check::at_most("max_deviation", rep.max_deviation(), tol));
            out.checks.push(Check::holds("j_prime_le_j", rep.j_prime_le_j));
            out.checks.push(Check::holds("strict_after_dl", rep.strict_after_dl));
            for (k, v) in [
                ("aligned_points", json!(rep.aligned_points)),
                ("max_deviation", json!(rep.max_deviation())),
                ("max_rotation_dev", json!(rep.max_rotation_dev)),
                ("max_theta_dev", json!(rep.max_theta_dev)),
                ("max_omega_dev", json!(rep.max_omega_dev)),
                ("max_rho_dev", json!(rep.max_rho_dev)),
                ("max_jump_time_dev", json!(rep.max_jump_time_dev)),
                ("h1_dl_jumps", json!(rep.h1_dl_jumps)),
                ("h1_dm_jumps", json!(rep.h1_dm_jumps)),
                ("h2_jumps", json!(rep.h2_jumps)),
            ] {
                out.report.insert(k.into(), v);
            }
            out.summary = format!(
                "max deviation {:e} against tol {:e}; H1 jumps D_l {} D_m {}, H2 jumps {}",
                rep.max_deviation(),
                tol,
                rep.h1_dl_jumps,
                rep.h1_dm_jumps,
                rep.h2_jumps
            );
        }
        Err(EquivalenceError::StructuralMismatch(msg)) => {
            out.checks.push(Check::holds("domains_align", false));
            out.report.insert("structural_mismatch".into(), json!(msg));
            out.summary = format!("hybrid time domains do not align: {msg}");
        }
        Err(e) => return Err(sim(e)),
    }
    out.tables.push((sc.outputs.trace.clone(), trace::h1_table(&h1, &paired.arc1)));
    out.tables.push((sc.outputs.trace_h2.clone(), trace::h2_table(&h2, &paired.arc2)));
    let t1 = default_h1_target(&h1);
    let t2 = default_h2_target();
    let mut plot = Table::new(["system", "t", "j", "distance", "norm_theta"].map(String::from).into());
    for (t, j, x) in paired.arc1.samples() {
        plot.rows.push(vec!["h1".into(), num(t), j.to_string(), num(t1.distance(x)), num(h1.theta(x).norm())]);
    }
    for (t, j, x) in paired.arc2.samples() {
        plot.rows.push(vec!["h2".into(), num(t), j.to_string(), num(t2.distance(x)), num(x.rows(0, 3).norm())]);
    }
    out.tables.push((sc.outputs.plot.clone(), plot));
    Ok(out)
}

/// Uniform sample from the closed ball of radius `r`.
pub fn sample_ball(rng: &mut impl Rng, r: f64) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * r;
        }
    }
}

/// Paired `(H₁, H₂)` initial states with identical `(ϑ, ω, ρ)`. The
/// memory is the quaternion of `ϑ`, so the lift output starts at `ϑ`.
pub fn paired_initial(theta: Vector3<f64>, omega: Vector3<f64>, rho: &DVector<f64>) -> Result<(State, State), CliError> {
    let th = Mrp::new(theta).map_err(sim)?;
    let w = AngularVelocity::new(omega).map_err(sim)?;
    let x1 = X1State {
        r: mrp_to_rotation(&th),
        lift: LiftState::new(stereo_inv(&th), 1).map_err(sim)?,
        omega: w,
        rho: rho.clone(),
    };
    let x2 = X2State {
        theta: th,
        omega: w,
        rho: rho.clone(),
    };
    Ok((x1.to_vector(), x2.to_vector().map_err(sim)?))
}

fn theta_norm_of(run: &StabilityRun) -> f64 {
    run.diagnostics
        .iter()
        .find(|(n, _)| n == "theta_norm")
        .map(|(_, v)| *v)
        .unwrap_or(f64::NAN)
}

fn sweep_job(sc: &Scenario, res: &Resolved, opts: &RunOptions, s: f64) -> Result<JobOutput, CliError> {
    let spec: &SweepSpec = sc.sweep.as_ref().expect("validated");
    let seed = opts.seed.unwrap_or(spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ics: Vec<(Vector3<f64>, Vector3<f64>)> = (0..spec.count)
        .map(|_| (sample_ball(&mut rng, spec.theta_max), sample_ball(&mut rng, spec.omega_max)))
        .collect();
    let h1 = make_h1(res.plant, res.controller.clone(), res.lift);
    let h2 = make_h2(res.plant, res.controller.clone(), res.lift);
    let (t1, t2) = (default_h1_target(&h1), default_h2_target());
    let states = ics
        .iter()
        .map(|(th, w)| paired_initial(*th, *w, &res.rho0))
        .collect::<Result<Vec<_>, _>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let runs: Vec<(StabilityRun, StabilityRun)> = pool.install(|| {
        states
            .par_iter()
            .map(|(x1, x2)| {
                (
                    stability_run(&h1, &t1, x1, &res.solver),
                    stability_run(&h2, &t2, x2, &res.solver),
                )
            })
            .collect()
    });

    let bound = res.lift.radius() + LIFT_CONSISTENCY_TOL * s;
    let agree = runs.iter().all(|(a, b)| a.converged == b.converged);
    let max_norm = runs
        .iter()
        .map(|(a, b)| theta_norm_of(a).max(theta_norm_of(b)))
        .fold(0.0, f64::max);
    let converged = runs.iter().filter(|(a, b)| a.converged && b.converged).count();
    let errors: Vec<String> = runs
        .iter()
        .enumerate()
        .flat_map(|(i, (a, b))| {
            [("h1", a), ("h2", b)]
                .into_iter()
                .filter_map(move |(sys, r)| r.error.as_ref().map(|e| format!("run {i} {sys}: {e}")))
        })
        .collect();
    let max_gap = runs
        .iter()
        .map(|(a, b)| (a.final_distance - b.final_distance).abs())
        .fold(0.0, f64::max);
    let beyond_pi = ics.iter().filter(|(th, _)| th.norm() > 1.0).count();

    let mut out = JobOutput {
        warnings: errors.clone(),
        ..JobOutput::default()
    };
    out.checks.push(Check::holds("verdicts_agree", agree));
    out.checks.push(Check::at_most("theta_norm_bound", max_norm, bound));
    out.checks.push(Check::holds("no_blowup", errors.is_empty()));
    if spec.require_convergence {
        out.checks.push(Check::holds("all_converged", converged == runs.len()));
    }
    let per_run: Vec<Value> = runs
        .iter()
        .zip(&ics)
        .enumerate()
        .map(|(i, ((a, b), (th, w)))| {
            json!({
                "run": i,
                "theta0": vec3(th),
                "omega0": vec3(w),
                "start_angle": 4.0 * th.norm().atan(),
                "h1": run_json(a),
                "h2": run_json(b),
                "final_distance_gap": (a.final_distance - b.final_distance).abs(),
            })
        })
        .collect();
    out.report.insert("seed".into(), json!(seed));
    out.report.insert("runs".into(), Value::Array(per_run));
    out.report.insert("converged_pairs".into(), json!(converged));
    out.report.insert("starts_beyond_half_turn".into(), json!(beyond_pi));
    out.report.insert("max_theta_norm".into(), json!(max_norm));
    out.report.insert("max_final_distance_gap".into(), json!(max_gap));
    out.summary = format!(
        "{converged}/{} pairs converged, verdicts {}, max |theta| {max_norm:.6}",
        runs.len(),
        if agree { "agree" } else { "differ" }
    );

    let mut summary = Table::new(
        [
            "run", "system", "theta0_x", "theta0_y", "theta0_z", "omega0_x", "omega0_y", "omega0_z",
            "initial_distance", "final_distance", "max_distance", "tail_max", "max_theta_norm", "jumps",
            "converged",
        ]
        .map(String::from)
        .into(),
    );
    let mut plot = Table::new(["run", "system", "quarter", "max_distance"].map(String::from).into());
    for (i, ((a, b), (th, w))) in runs.iter().zip(&ics).enumerate() {
        for (sys, r) in [("h1", a), ("h2", b)] {
            let mut row = vec![i.to_string(), sys.to_string()];
            row.extend(th.iter().chain(w.iter()).map(|x| num(*x)));
            row.extend([r.initial_distance, r.final_distance, r.max_distance, r.tail_max, theta_norm_of(r)].map(num));
            row.push(r.jumps.to_string());
            row.push(r.converged.to_string());
            summary.rows.push(row);
            for (q, m) in r.quarter_maxima.iter().enumerate() {
                plot.rows.push(vec![i.to_string(), sys.to_string(), q.to_string(), num(*m)]);
            }
        }
    }
    out.tables.push((sc.outputs.trace.clone(), summary));
    out.tables.push((sc.outputs.plot.clone(), plot));
    Ok(out)
}

fn run_json(r: &StabilityRun) -> Value {
    json!({
        "initial_distance": r.initial_distance,
        "final_distance": r.final_distance,
        "max_distance": r.max_distance,
        "excursion_ratio": r.excursion_ratio,
        "quarter_maxima": r.quarter_maxima,
        "envelope_nonincreasing": r.envelope_nonincreasing,
        "tail_max": r.tail_max,
        "converged": r.converged,
        "jumps": r.jumps,
        "final_time": r.final_time,
        "diagnostics": r.diagnostics.iter().map(|(n, v)| (n.clone(), json!(v))).collect::<serde_json::Map<_, _>>(),
        "error": r.error,
    })
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| CliError::Output(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Runs a scenario, writes its artifacts and reports whether every check
/// passed. `base_dir` anchors the scenario's relative input paths.
pub fn run_scenario(sc: &Scenario, base_dir: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let res = sc.resolve(base_dir).map_err(|d| {
        CliError::Config(d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "))
    })?;
    let s = opts.tol_scale;
    if !(s > 0.0 && s.is_finite()) {
        return Err(CliError::Config(format!("--tol-scale must be positive, got {s}")));
    }
    if opts.workers == Some(0) {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);

    let out = match sc.kind {
        Kind::LiftOnly => lift_job(sc, &res, s)?,
        Kind::H1 => h1_job(sc, &res, s)?,
        Kind::H2 => h2_job(sc, &res, s)?,
        Kind::Equivalence => equivalence_job(sc, &res, s)?,
        Kind::StabilitySweep => sweep_job(sc, &res, opts, s)?,
    };
    let passed = out.checks.iter().all(|c| c.passed);

    std::fs::create_dir_all(&opts.out_dir).map_err(|e| CliError::io(&opts.out_dir, e))?;
    let mut artifacts = Vec::new();
    for (name, table) in &out.tables {
        let p = opts.out_dir.join(name);
        table.write(&p)?;
        artifacts.push(p);
    }

    let mut report = serde_json::Map::new();
    report.insert("kind".into(), json!(sc.kind.label()));
    report.insert("name".into(), json!(sc.name));
    report.insert("passed".into(), json!(passed));
    report.insert("checks".into(), json!(out.checks));
    report.insert("tol_scale".into(), json!(s));
    report.extend(out.report);
    let report_path = opts.out_dir.join(&sc.outputs.report);
    write_json(&report_path, &Value::Object(report))?;
    artifacts.push(report_path);

    let ties: Vec<&JumpLogEntry> = out.jumps.iter().filter(|j| j.ambiguous).collect();
    let meta = json!({
        "tool": "mrplift",
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix_ms": started,
        "config": opts.config_path.as_ref().map(|p| p.display().to_string()),
        "options": {
            "workers": opts.workers,
            "seed": opts.seed,
            "tol_scale": s,
        },
        "scenario": sc,
        "jump_log": out.jumps,
        "tie_breaks": ties,
        "warnings": out.warnings,
        "artifacts": artifacts.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    let meta_path = opts.out_dir.join(&sc.outputs.metadata);
    write_json(&meta_path, &meta)?;
    artifacts.push(meta_path);

    Ok(RunOutcome {
        passed,
        checks: out.checks,
        summary: format!("{}: {}", sc.kind.label(), out.summary),
        artifacts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            assert!(sample_ball(&mut rng, 0.3).norm() <= 0.3);
        }
    }

    #[test]
    fn paired_initial_states_share_the_output() {
        let rho = DVector::zeros(0);
        for th in [Vector3::new(0.2, -0.1, 0.4), Vector3::new(0.9, 0.7, 0.0)] {
            let (x1, x2) = paired_initial(th, Vector3::new(0.1, 0.0, -0.2), &rho).unwrap();
            let h1 = make_h1(
                mrplift::closed_loop::PlantParams::new(mrplift::attitude::InertiaTensor::diagonal(1.0, 1.0, 1.0).unwrap()),
                mrplift::closed_loop::ControllerSpec::zero(),
                LiftParams::default(),
            );
            let out = *h1.theta(&x1).as_finite().unwrap();
            assert!((out - th).norm() < 1e-12);
            assert_eq!(&x2.as_slice()[..3], th.as_slice());
        }
    }
}
