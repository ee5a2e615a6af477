//! Trace CSV files: one row per `(t, j)` sample, numbers with 17
//! significant digits so that values read back bit-identically.

use std::io::Write;
use std::path::Path;

use mrplift::attitude::{Mrp, RotationMatrix};
use mrplift::closed_loop::{H1System, H2System};
use mrplift::hybrid::{HybridArc, State};
use mrplift::lifting::FilterRow;

use crate::error::CliError;

/// `{:.16e}`, with `inf`, `-inf` and `nan` for non-finite values.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn push_nums(row: &mut Vec<String>, xs: impl IntoIterator<Item = f64>) {
    row.extend(xs.into_iter().map(num));
}

/// `theta_x..z` cells, empty when the output is `∅`, then `norm_theta`.
fn push_theta(row: &mut Vec<String>, theta: &Mrp, defined: bool) {
    match theta.as_finite() {
        Some(v) if defined => push_nums(row, v.iter().copied()),
        _ => row.extend(std::iter::repeat_n(String::new(), 3)),
    }
    row.push(num(theta.norm()));
}

fn xyz(prefix: &str) -> [String; 3] {
    ["x", "y", "z"].map(|c| format!("{prefix}_{c}"))
}

fn lift_header() -> Vec<String> {
    let mut h: Vec<String> = ["t", "j", "event"].map(String::from).into();
    for i in 1..=3 {
        for k in 1..=3 {
            h.push(format!("r{i}{k}"));
        }
    }
    h.extend((0..4).map(|i| format!("qhat{i}")));
    h.push("m".into());
    h.extend(xyz("theta"));
    h.push("norm_theta".into());
    h.push("dist_qhat".into());
    h
}

/// Event label of each sample; the first sample of interval `j > 0`
/// carries the jump that started it.
fn events(arc: &HybridArc) -> impl Iterator<Item = (f64, usize, &'static str, &State)> + '_ {
    arc.intervals.iter().flat_map(move |iv| {
        let incoming = iv.j.checked_sub(1).and_then(|k| arc.jumps.get(k)).map(|jr| match jr.label {
            "Dl" => "jump_Dl",
            "Dm" => "jump_Dm",
            _ => "jump",
        });
        iv.times.iter().zip(&iv.states).enumerate().map(move |(k, (t, x))| {
            let ev = if k == 0 { incoming.unwrap_or("flow") } else { "flow" };
            (*t, iv.j, ev, x)
        })
    })
}

/// A CSV table held in memory until written by a single writer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let fail = |e: csv::Error| CliError::Output(format!("{}: {e}", path.display()));
        w.write_record(&self.header).map_err(fail)?;
        for r in &self.rows {
            w.write_record(r).map_err(fail)?;
        }
        let mut inner = w.into_inner().map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        inner.flush().map_err(|e| CliError::io(path, e))
    }
}

pub fn lift_table(rows: &[FilterRow]) -> Table {
    let mut tab = Table::new(lift_header());
    for r in rows {
        let mut row = vec![num(r.t), r.j.to_string(), r.event.label().to_string()];
        push_nums(&mut row, r.rotation.to_row_major());
        push_nums(&mut row, r.state.q_hat().to_array());
        row.push(r.state.m().to_string());
        push_theta(&mut row, &r.theta, r.in_flow_set);
        row.push(num(r.dist));
        tab.rows.push(row);
    }
    tab
}

fn closed_loop_tail(h: &mut Vec<String>, rho_dim: usize) {
    h.extend(xyz("omega"));
    h.extend((0..rho_dim).map(|i| format!("rho_{i}")));
    h.extend(xyz("tau"));
}

fn push_tau(row: &mut Vec<String>, tau: Option<nalgebra::Vector3<f64>>) {
    match tau {
        Some(t) => push_nums(row, t.iter().copied()),
        None => row.extend(std::iter::repeat_n(String::new(), 3)),
    }
}

pub fn h1_table(h1: &H1System, arc: &HybridArc) -> Table {
    let n = h1.rho_dim();
    let mut header = lift_header();
    closed_loop_tail(&mut header, n);
    let mut tab = Table::new(header);
    for (t, j, ev, x) in events(arc) {
        let e = h1.lift_evaluation(x);
        let mut row = vec![num(t), j.to_string(), ev.to_string()];
        push_nums(&mut row, x.iter().take(14).copied());
        // m is stored as ±1.0; print it as an integer like the lift trace
        row[3 + 9 + 4] = if x[13] < 0.0 { "-1".into() } else { "1".into() };
        push_theta(&mut row, &e.theta, e.in_flow_set());
        row.push(num(e.dist));
        push_nums(&mut row, x.iter().skip(14).copied());
        push_tau(&mut row, h1.torque_at(x));
        tab.rows.push(row);
    }
    tab
}

pub fn h2_table(h2: &H2System, arc: &HybridArc) -> Table {
    let n = h2.rho_dim();
    let mut header: Vec<String> = ["t", "j", "event"].map(String::from).into();
    header.extend(xyz("theta"));
    header.push("norm_theta".into());
    closed_loop_tail(&mut header, n);
    let mut tab = Table::new(header);
    for (t, j, ev, x) in events(arc) {
        let mut row = vec![num(t), j.to_string(), ev.to_string()];
        push_nums(&mut row, x.iter().take(3).copied());
        row.push(num(x.rows(0, 3).norm()));
        push_nums(&mut row, x.iter().skip(3).copied());
        push_tau(&mut row, Some(h2.torque_at(x)));
        tab.rows.push(row);
    }
    tab
}

/// `(t, j, distance, norm_theta)` for plotting.
pub fn plot_table<F, G>(arc: &HybridArc, distance: F, theta_norm: G) -> Table
where
    F: Fn(&State) -> f64,
    G: Fn(&State) -> f64,
{
    let mut tab = Table::new(["t", "j", "distance", "norm_theta"].map(String::from).into());
    for (t, j, x) in arc.samples() {
        tab.rows.push(vec![num(t), j.to_string(), num(distance(x)), num(theta_norm(x))]);
    }
    tab
}

/// Rotation samples of a trace, one per distinct time, in file order.
pub fn read_rotation_samples(path: &Path) -> Result<Vec<(f64, RotationMatrix)>, CliError> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column {name}")))
    };
    let t_col = col("t")?;
    let mut r_cols = Vec::with_capacity(9);
    for i in 1..=3 {
        for k in 1..=3 {
            r_cols.push(col(&format!("r{i}{k}"))?);
        }
    }
    let mut out: Vec<(f64, RotationMatrix)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |c: usize| -> Result<f64, CliError> {
            rec.get(c)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| bad(format!("row {}: {e}", line + 2)))
        };
        let t = field(t_col)?;
        if out.last().is_some_and(|(prev, _)| *prev == t) {
            continue;
        }
        let mut c = [0.0; 9];
        for (slot, &k) in c.iter_mut().zip(&r_cols) {
            *slot = field(k)?;
        }
        let r = RotationMatrix::from_row_major(&c).map_err(|e| bad(format!("row {}: {e}", line + 2)))?;
        out.push((t, r));
    }
    if out.is_empty() {
        return Err(bad("no samples".into()));
    }
    Ok(out)
}

/// Parses a numeric trace cell; empty cells read as `None`.
pub fn parse_cell(s: &str) -> Option<f64> {
    if s.is_empty() {
        None
    } else {
        s.parse().ok()
    }
}
