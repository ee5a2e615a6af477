//! Scenario files: a versioned JSON document describing one job.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use mrplift::attitude::{
    AngularVelocity, InertiaTensor, Mrp, RotationMatrix, UnitQuaternion, MANIFOLD_REJECT_TOL,
};
use mrplift::closed_loop::{default_controller, ControllerSpec, PlantParams, X1State};
use mrplift::hybrid::{JumpPriority, SolverConfig};
use mrplift::lifting::{LiftParams, LiftState};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    LiftOnly,
    H1,
    H2,
    Equivalence,
    StabilitySweep,
}

impl Kind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::LiftOnly => "lift_only",
            Self::H1 => "h1",
            Self::H2 => "h2",
            Self::Equivalence => "equivalence",
            Self::StabilitySweep => "stability_sweep",
        }
    }

    fn closed_loop(&self) -> bool {
        !matches!(self, Self::LiftOnly)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub plant: PlantSpec,
    /// Absent means zero torque.
    #[serde(default)]
    pub controller: Option<ControllerGains>,
    #[serde(default)]
    pub lift: LiftSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub rotation_source: Option<RotationSourceSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub inertia: [[f64; 3]; 3],
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            inertia: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }
}

/// `τ = −kp ϑ − kd ω − ki ρ` with `ρ̇ = ϑ`; `ki = 0` drops `ρ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerGains {
    pub kp: f64,
    pub kd: f64,
    #[serde(default)]
    pub ki: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftSpec {
    pub alpha: f64,
    pub delta: f64,
}

impl Default for LiftSpec {
    fn default() -> Self {
        let p = LiftParams::default();
        Self {
            alpha: p.alpha(),
            delta: p.delta(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrioritySpec {
    #[default]
    FirstListed,
    LastListed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub step: f64,
    pub t_max: f64,
    pub j_max: usize,
    pub event_tol: f64,
    pub jump_priority: PrioritySpec,
    pub omega_bound: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let c = SolverConfig::default();
        Self {
            step: c.step,
            t_max: c.t_max,
            j_max: c.j_max,
            event_tol: c.event_tol,
            jump_priority: PrioritySpec::FirstListed,
            omega_bound: c.omega_bound,
        }
    }
}

impl SolverSpec {
    pub fn to_config(&self) -> SolverConfig {
        SolverConfig {
            step: self.step,
            t_max: self.t_max,
            j_max: self.j_max,
            event_tol: self.event_tol,
            jump_priority: match self.jump_priority {
                PrioritySpec::FirstListed => JumpPriority::PreferFirstListed,
                PrioritySpec::LastListed => JumpPriority::PreferLastListed,
            },
            omega_bound: self.omega_bound,
            anchors: Vec::new(),
        }
    }
}

/// Initial rotation given either as a matrix or a quaternion; identity
/// when both are absent. Without `q_hat` the memory starts at the
/// canonical quaternion of the initial rotation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quaternion: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_hat: Option<[f64; 4]>,
    #[serde(default = "one")]
    pub m: i8,
    #[serde(default)]
    pub omega: [f64; 3],
    /// `H₂` only; overrides the lift output of the initial rotation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
}

fn one() -> i8 {
    1
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self {
            rotation: None,
            quaternion: None,
            q_hat: None,
            m: 1,
            omega: [0.0; 3],
            theta: None,
            rho: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RotationSourceSpec {
    /// Holds the initial rotation.
    Constant,
    /// `R(t) = R₀ exp(rate · t · [axis]×)` with `axis` normalized.
    PrincipalRamp { axis: [f64; 3], rate: f64 },
    /// Rotation samples from a trace CSV with columns `t, r11..r33`.
    /// Relative paths are taken from the scenario file's directory.
    FromTrace { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub count: usize,
    /// Initial MRPs are drawn uniformly from the ball of this radius.
    pub theta_max: f64,
    /// Initial rates are drawn uniformly from the ball of this radius.
    pub omega_max: f64,
    pub seed: u64,
    /// Fail the check unless every run converges.
    pub require_convergence: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            count: 25,
            theta_max: 1.0,
            omega_max: 1.0,
            seed: 0,
            require_convergence: true,
        }
    }
}

/// File names inside the output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub trace: String,
    /// Second trace of an equivalence job.
    pub trace_h2: String,
    pub report: String,
    pub metadata: String,
    pub plot: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            trace: "trace.csv".into(),
            trace_h2: "trace_h2.csv".into(),
            report: "report.json".into(),
            metadata: "metadata.json".into(),
            plot: "plot.csv".into(),
        }
    }
}

/// A single constraint violation, tied to the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

struct Diags(Vec<Diagnostic>);

impl Diags {
    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Diagnostic {
            field: field.into(),
            message: message.into(),
        });
    }
}

fn matrix(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, k| rows[i][k])
}

fn quat(c: &[f64; 4]) -> Result<UnitQuaternion, String> {
    UnitQuaternion::from_array(*c).map_err(|e| e.to_string())
}

/// Everything a job needs, checked and converted to library types.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub plant: PlantParams,
    pub controller: ControllerSpec,
    pub lift: LiftParams,
    pub solver: SolverConfig,
    pub r0: RotationMatrix,
    pub lift0: LiftState,
    pub omega0: AngularVelocity,
    pub rho0: DVector<f64>,
    pub theta0: Option<Mrp>,
    pub trace_path: Option<PathBuf>,
}

impl Resolved {
    pub fn x1_state(&self) -> X1State {
        X1State {
            r: self.r0,
            lift: self.lift0,
            omega: self.omega0,
            rho: self.rho0.clone(),
        }
    }
}

pub fn controller_from(gains: Option<&ControllerGains>) -> Result<ControllerSpec, String> {
    let Some(g) = gains else {
        return Ok(ControllerSpec::zero());
    };
    let base = default_controller(g.kp, g.kd).map_err(|e| e.to_string())?;
    if !(g.ki >= 0.0 && g.ki.is_finite()) {
        return Err(format!("ki must be finite and nonnegative, got {}", g.ki));
    }
    if g.ki == 0.0 {
        return Ok(base);
    }
    let (kp, kd, ki) = (g.kp, g.kd, g.ki);
    Ok(ControllerSpec::new(
        DVector::zeros(3),
        move |th, w, rho| -th * kp - w * kd - Vector3::new(rho[0], rho[1], rho[2]) * ki,
        |th, _, _| DVector::from_column_slice(th.as_slice()),
    ))
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Full constraint report; empty when the scenario can run.
    /// `base_dir` anchors relative input paths.
    pub fn validate(&self, base_dir: &Path) -> Vec<Diagnostic> {
        match self.resolve(base_dir) {
            Ok(_) => Vec::new(),
            Err(d) => d,
        }
    }

    pub fn resolve(&self, base_dir: &Path) -> Result<Resolved, Vec<Diagnostic>> {
        let mut d = Diags(Vec::new());
        if self.schema_version != SCHEMA_VERSION {
            d.push(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            );
        }

        let a = self.lift.alpha;
        if !(a > 0.0 && a < 1.0) {
            d.push("lift.alpha", format!("must satisfy alpha ∈ (0, 1), got {a}"));
        }
        let dl = self.lift.delta;
        if !(dl > 0.0 && dl.is_finite()) {
            d.push("lift.delta", format!("must satisfy delta ∈ R>0, got {dl}"));
        }
        let lift = LiftParams::new(a, dl).ok();

        let plant = match InertiaTensor::new(matrix(&self.plant.inertia)) {
            Ok(j) => Some(PlantParams::new(j)),
            Err(e) => {
                d.push("plant.inertia", e.to_string());
                None
            }
        };

        let controller = match controller_from(self.controller.as_ref()) {
            Ok(c) => Some(c),
            Err(e) => {
                d.push("controller", e);
                None
            }
        };

        let solver = self.solver.to_config();
        if let Err(e) = solver.validate() {
            d.push("solver", e.to_string());
        }
        if self.solver.j_max == 0 {
            d.push("solver.j_max", "must be at least 1");
        }

        let init = &self.initial;
        let r0 = match (&init.rotation, &init.quaternion) {
            (Some(_), Some(_)) => {
                d.push("initial", "give either rotation or quaternion, not both");
                None
            }
            (Some(r), None) => match RotationMatrix::new(matrix(r)) {
                Ok(r) => Some(r),
                Err(e) => {
                    d.push("initial.rotation", e.to_string());
                    None
                }
            },
            (None, Some(q)) => match quat(q) {
                Ok(q) => Some(mrplift::attitude::quat_to_rotation(&q)),
                Err(e) => {
                    d.push("initial.quaternion", e);
                    None
                }
            },
            (None, None) => Some(RotationMatrix::identity()),
        };
        if init.m != 1 && init.m != -1 {
            d.push("initial.m", format!("must be 1 or -1, got {}", init.m));
        }
        let q_hat = match &init.q_hat {
            Some(q) => match quat(q) {
                Ok(q) => Some(Some(q)),
                Err(e) => {
                    d.push(
                        "initial.q_hat",
                        format!("{e} (unit norm required within {MANIFOLD_REJECT_TOL:e})"),
                    );
                    None
                }
            },
            None => Some(None),
        };
        let omega0 = match AngularVelocity::new(Vector3::from(init.omega)) {
            Ok(w) => Some(w),
            Err(e) => {
                d.push("initial.omega", e.to_string());
                None
            }
        };
        let theta0 = match &init.theta {
            Some(th) => {
                if self.kind != Kind::H2 {
                    d.push("initial.theta", "only used by h2 scenarios");
                }
                match Mrp::new(Vector3::from(*th)) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        d.push("initial.theta", e.to_string());
                        None
                    }
                }
            }
            None => None,
        };
        let rho0 = match (&controller, &init.rho) {
            (Some(c), Some(rho)) if rho.len() != c.rho_dim() => {
                d.push(
                    "initial.rho",
                    format!("controller state has {} components, got {}", c.rho_dim(), rho.len()),
                );
                None
            }
            (_, Some(rho)) if !rho.iter().all(|x| x.is_finite()) => {
                d.push("initial.rho", "non-finite component");
                None
            }
            (_, Some(rho)) => Some(DVector::from_column_slice(rho)),
            (Some(c), None) => Some(c.rho0().clone()),
            (None, None) => None,
        };

        let mut trace_path = None;
        match (&self.rotation_source, self.kind) {
            (None, Kind::LiftOnly) => d.push("rotation_source", "required for lift_only scenarios"),
            (Some(_), k) if k.closed_loop() => {
                d.push("rotation_source", format!("not used by {} scenarios", k.label()))
            }
            (Some(RotationSourceSpec::PrincipalRamp { axis, rate }), _) => {
                let n = Vector3::from(*axis).norm();
                if !(n > 0.0 && n.is_finite()) {
                    d.push("rotation_source.axis", "must be a finite nonzero vector");
                }
                if !rate.is_finite() {
                    d.push("rotation_source.rate", format!("must be finite, got {rate}"));
                }
            }
            (Some(RotationSourceSpec::FromTrace { path }), _) => {
                let p = base_dir.join(path);
                if p.is_file() {
                    trace_path = Some(p);
                } else {
                    d.push("rotation_source.path", format!("no such file: {}", p.display()));
                }
            }
            _ => {}
        }

        match (&self.sweep, self.kind) {
            (None, Kind::StabilitySweep) => d.push("sweep", "required for stability_sweep scenarios"),
            (Some(_), k) if k != Kind::StabilitySweep => {
                d.push("sweep", format!("not used by {} scenarios", k.label()))
            }
            (Some(s), _) => {
                if s.count == 0 {
                    d.push("sweep.count", "must be at least 1");
                }
                if !(s.theta_max > 0.0 && s.theta_max.is_finite()) {
                    d.push("sweep.theta_max", format!("must be positive, got {}", s.theta_max));
                } else if let Some(p) = &lift {
                    if s.theta_max > p.radius() {
                        d.push(
                            "sweep.theta_max",
                            format!("initial MRPs must lie in the flow set, |theta| <= 1 + delta = {}", p.radius()),
                        );
                    }
                }
                if !(s.omega_max >= 0.0 && s.omega_max.is_finite()) {
                    d.push("sweep.omega_max", format!("must be finite and nonnegative, got {}", s.omega_max));
                }
            }
            _ => {}
        }
        if self.kind == Kind::StabilitySweep && self.controller.is_none() {
            d.push("controller", "required for stability_sweep scenarios");
        }

        for (field, name) in [
            ("outputs.trace", &self.outputs.trace),
            ("outputs.trace_h2", &self.outputs.trace_h2),
            ("outputs.report", &self.outputs.report),
            ("outputs.metadata", &self.outputs.metadata),
            ("outputs.plot", &self.outputs.plot),
        ] {
            if name.is_empty() || Path::new(name).is_absolute() {
                d.push(field, "must be a nonempty relative file name");
            }
        }

        let lift0 = match (r0, q_hat) {
            (Some(r), Some(q)) if init.m.abs() == 1 => {
                let state = match q {
                    Some(q) => LiftState::new(q, init.m),
                    None => LiftState::initialize(&UnitQuaternion::identity(), &r, init.m),
                };
                state.map_err(|e| d.push("initial", e.to_string())).ok()
            }
            _ => None,
        };

        if !d.0.is_empty() {
            return Err(d.0);
        }
        Ok(Resolved {
            plant: plant.expect("checked"),
            controller: controller.expect("checked"),
            lift: lift.expect("checked"),
            solver,
            r0: r0.expect("checked"),
            lift0: lift0.expect("checked"),
            omega0: omega0.expect("checked"),
            rho0: rho0.expect("checked"),
            theta0,
            trace_path,
        })
    }
}
