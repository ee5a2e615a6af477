use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_mrplift");

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn mrplift(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("MRPLIFT_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    mrplift(&args)
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn ramp_lift_has_one_shadow_switch_at_the_closed_form_time() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&scenarios_dir().join("ramp_lift.json"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = report(tmp.path());
    assert_eq!(rep["dm_jumps"], 1);
    assert_eq!(rep["passed"], true);

    let meta: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("metadata.json")).unwrap()).unwrap();
    let dm: Vec<&Value> = meta["jump_log"].as_array().unwrap().iter().filter(|j| j["label"] == "Dm").collect();
    assert_eq!(dm.len(), 1);
    let rate = 2.0 * std::f64::consts::PI / 10.0;
    let expected = 4.0 * 1.2f64.atan() / rate;
    assert!((dm[0]["t"].as_f64().unwrap() - expected).abs() <= 2e-12);
}

#[test]
fn slew_equivalence_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&scenarios_dir().join("slew_equivalence.json"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = report(tmp.path());
    assert!(rep["max_deviation"].as_f64().unwrap() <= rep["tol"].as_f64().unwrap());
    assert!(tmp.path().join("trace_h2.csv").is_file());
}

#[test]
fn alpha_out_of_range_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.json",
        r#"{"schema_version": 1, "kind": "h2", "lift": {"alpha": 1.5, "delta": 0.5}}"#,
    );
    let o = run(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("alpha ∈ (0, 1)"), "{err}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn malformed_json_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", r#"{"schema_version": 1, "kind": "#);
    let o = run(&cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).lines().count(), 1);
    let o = mrplift(&["validate", "--config", tmp.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_reports_constraints() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = mrplift(&["validate", "--config", scenarios_dir().join("sweep.json").to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).is_empty());

    let cfg = write_config(
        tmp.path(),
        "delta.json",
        r#"{"schema_version": 1, "kind": "h2", "lift": {"alpha": 0.5, "delta": 0}}"#,
    );
    let o = mrplift(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("delta ∈ R>0"), "{}", stdout(&o));

    let cfg = write_config(
        tmp.path(),
        "inertia.json",
        r#"{"schema_version": 1, "kind": "h1", "plant": {"inertia": [[1, 0.2, 0], [0, 1, 0], [0, 0, 1]]}}"#,
    );
    let o = mrplift(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let diag = stdout(&o);
    assert!(diag.starts_with("plant.inertia:") && diag.contains("not symmetric"), "{diag}");
}

#[test]
fn blowup_is_a_simulation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "stiff.json",
        r#"{"schema_version": 1, "kind": "h2", "plant": {"inertia": [[1, 0, 0], [0, 2, 0], [0, 0, 3]]},
            "solver": {"step": 0.01, "t_max": 1.0}, "initial": {"omega": [1e200, 1e200, 0]}}"#,
    );
    let o = run(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().count(), 1);
    assert!(stderr(&o).contains("blowup"));
}

#[test]
fn stiff_gains_exhaust_the_jump_budget_and_fail_the_bound() {
    // event location in time cannot pin the switching surface when ω is huge
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "stiff.json",
        r#"{"schema_version": 1, "kind": "h2", "controller": {"kp": 1e6, "kd": 1e6},
            "solver": {"step": 0.1, "t_max": 5.0}, "initial": {"omega": [1, 0, 0]}}"#,
    );
    let o = run(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("theta_norm_bound"));
}

#[test]
fn tightened_tolerances_fail_the_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&scenarios_dir().join("ramp_lift.json"), tmp.path(), &["--tol-scale", "1e-12"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("lift_consistency"), "{err}");
    assert_eq!(report(tmp.path())["passed"], false);
}

fn column(text: &str, name: &str) -> Vec<String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
}

#[test]
fn lift_trace_round_trips_through_from_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let o = run(&scenarios_dir().join("ramp_lift.json"), &first, &[]);
    assert_eq!(o.status.code(), Some(0));
    let cfg = write_config(
        tmp.path(),
        "replay.json",
        r#"{"schema_version": 1, "kind": "lift_only",
            "lift": {"alpha": 0.5, "delta": 0.2},
            "rotation_source": {"type": "from_trace", "path": "first/trace.csv"}}"#,
    );
    let second = tmp.path().join("second");
    let o = run(&cfg, &second, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let a = fs::read_to_string(first.join("trace.csv")).unwrap();
    let b = fs::read_to_string(second.join("trace.csv")).unwrap();
    assert_eq!(a.lines().count(), b.lines().count());
    for name in ["t", "j", "event", "m"] {
        assert_eq!(column(&a, name), column(&b, name), "{name}");
    }
    for name in ["theta_x", "theta_y", "theta_z"] {
        for (x, y) in column(&a, name).iter().zip(column(&b, name)) {
            match (x.parse::<f64>(), y.parse::<f64>()) {
                (Ok(x), Ok(y)) => assert!((x - y).abs() <= 1e-9, "{name}: {x} vs {y}"),
                _ => assert_eq!(*x, y),
            }
        }
    }
    assert_eq!(report(&second)["dm_jumps"], 1);
}

fn strip_timestamp(meta: &str) -> String {
    meta.lines().filter(|l| !l.contains("started_unix_ms")).collect::<Vec<_>>().join("\n")
}

#[test]
fn repeated_runs_write_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["ramp_lift.json", "tumble_h2.json"] {
        let (a, b) = (tmp.path().join(format!("{name}.a")), tmp.path().join(format!("{name}.b")));
        for dir in [&a, &b] {
            let o = run(&scenarios_dir().join(name), dir, &[]);
            assert_eq!(o.status.code(), Some(0));
        }
        for f in ["trace.csv", "plot.csv", "report.json"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{name} {f}");
        }
        let (ma, mb) = (
            fs::read_to_string(a.join("metadata.json")).unwrap(),
            fs::read_to_string(b.join("metadata.json")).unwrap(),
        );
        // the artifact list names the output directory, which differs here
        let norm = |s: &str, d: &Path| strip_timestamp(s).replace(d.to_str().unwrap(), "OUT");
        assert_eq!(norm(&ma, &a), norm(&mb, &b));
    }
}

#[test]
fn sweep_results_do_not_depend_on_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sweep.json",
        r#"{"schema_version": 1, "kind": "stability_sweep",
            "controller": {"kp": 4, "kd": 2},
            "solver": {"step": 0.01, "t_max": 30.0},
            "sweep": {"count": 6, "theta_max": 1.4, "omega_max": 0.5}}"#,
    );
    let one = tmp.path().join("one");
    let four = tmp.path().join("four");
    assert_eq!(run(&cfg, &one, &["--workers", "1", "--seed", "11"]).status.code(), Some(0));
    assert_eq!(run(&cfg, &four, &["--workers", "4", "--seed", "11"]).status.code(), Some(0));
    assert_eq!(fs::read(one.join("trace.csv")).unwrap(), fs::read(four.join("trace.csv")).unwrap());
    assert_eq!(report(&one)["seed"], 11);

    let other = tmp.path().join("other");
    assert_eq!(run(&cfg, &other, &["--seed", "12"]).status.code(), Some(0));
    assert_ne!(fs::read(one.join("trace.csv")).unwrap(), fs::read(other.join("trace.csv")).unwrap());
}

#[test]
fn out_dir_defaults_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from_env");
    let o = Command::new(BIN)
        .args(["run", "--config", scenarios_dir().join("ramp_lift.json").to_str().unwrap()])
        .env("MRPLIFT_OUT_DIR", &out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("trace.csv").is_file());
}

#[test]
fn trace_rows_are_ordered_and_paired_at_jumps() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&scenarios_dir().join("tumble_h1.json"), tmp.path(), &[]).status.code(), Some(0));
    let text = fs::read_to_string(tmp.path().join("trace.csv")).unwrap();
    let t: Vec<f64> = column(&text, "t").iter().map(|x| x.parse().unwrap()).collect();
    let j: Vec<usize> = column(&text, "j").iter().map(|x| x.parse().unwrap()).collect();
    let ev = column(&text, "event");
    for k in 1..t.len() {
        assert!((t[k], j[k]) > (t[k - 1], j[k - 1]), "row {k}");
        if ev[k] != "flow" {
            assert_eq!(t[k], t[k - 1]);
            assert_eq!(j[k], j[k - 1] + 1);
        }
    }
    assert!(ev.iter().any(|e| e == "jump_Dl"));
}
