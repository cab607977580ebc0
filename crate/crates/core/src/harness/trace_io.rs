//! Convergence traces as CSV.

use std::fmt::Write as _;
use std::path::Path;

use super::HarnessError;
use crate::solver::SolverTrace;

pub const TRACE_HEADER: &str = "iter,fval,normalized_fval,cpu_seconds,deepest_level,triggered,alpha_finest";

/// One parsed CSV row. `alpha_finest` is empty in the file when no
/// correction was applied on the finest level.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub fval: f64,
    pub normalized_fval: f64,
    pub cpu_seconds: f64,
    pub deepest_level: usize,
    pub triggered: bool,
    pub alpha_finest: Option<f64>,
}

/// Shortest text with 17 significant digits; parses back to the same bits.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Smallest objective value over several traces.
pub fn best_value(traces: &[&SolverTrace]) -> f64 {
    traces
        .iter()
        .flat_map(|t| t.records.iter().map(|r| r.fval))
        .fold(f64::INFINITY, f64::min)
}

/// `(f - f_ref) / (f0 - f_ref)`, clamped to `[0, 1]` against rounding.
pub fn normalize(f: f64, f0: f64, f_ref: f64) -> f64 {
    let span = f0 - f_ref;
    if span > 0.0 {
        ((f - f_ref) / span).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn trace_rows(trace: &SolverTrace, f_ref: f64) -> Result<Vec<TraceRow>, HarnessError> {
    let first = trace.records.first().ok_or_else(|| HarnessError::Invariant("empty trace".into()))?;
    let f0 = first.fval;
    Ok(trace
        .records
        .iter()
        .map(|r| TraceRow {
            iter: r.iter,
            fval: r.fval,
            normalized_fval: normalize(r.fval, f0, f_ref),
            cpu_seconds: r.seconds,
            deepest_level: r.deepest_level,
            triggered: r.triggered.first().copied().unwrap_or(false),
            alpha_finest: r.alpha_finest(),
        })
        .collect())
}

pub fn trace_csv(trace: &SolverTrace, f_ref: f64) -> Result<String, HarnessError> {
    let mut out = String::new();
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for row in trace_rows(trace, f_ref)? {
        let alpha = row.alpha_finest.map(fmt17).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.iter,
            fmt17(row.fval),
            fmt17(row.normalized_fval),
            fmt17(row.cpu_seconds),
            row.deepest_level,
            u8::from(row.triggered),
            alpha
        );
    }
    Ok(out)
}

pub fn write_trace_csv(trace: &SolverTrace, f_ref: f64, path: &Path) -> Result<(), HarnessError> {
    let text = trace_csv(trace, f_ref)?;
    std::fs::write(path, text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>, HarnessError> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(HarnessError::Format { offset: 0, message: "unexpected trace header".into() });
    }
    let mut offset = TRACE_HEADER.len() + 1;
    let mut rows = Vec::new();
    for line in lines {
        let bad = |what: &str| HarnessError::Format { offset, message: format!("bad {what}") };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad("field count"));
        }
        rows.push(TraceRow {
            iter: f[0].parse().map_err(|_| bad("iter"))?,
            fval: f[1].parse().map_err(|_| bad("fval"))?,
            normalized_fval: f[2].parse().map_err(|_| bad("normalized_fval"))?,
            cpu_seconds: f[3].parse().map_err(|_| bad("cpu_seconds"))?,
            deepest_level: f[4].parse().map_err(|_| bad("deepest_level"))?,
            triggered: match f[5] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("triggered")),
            },
            alpha_finest: if f[6].is_empty() { None } else { Some(f[6].parse().map_err(|_| bad("alpha_finest"))?) },
        });
        offset += line.len() + 1;
    }
    Ok(rows)
}

/// Two series aligned on the union of their time stamps. Each series holds
/// its last value up to the next stamp.
pub fn plot_data(sl: &SolverTrace, ml: &SolverTrace, f_ref: f64) -> Result<String, HarnessError> {
    let a = trace_rows(sl, f_ref)?;
    let b = trace_rows(ml, f_ref)?;
    let mut stamps: Vec<f64> = a.iter().chain(&b).map(|r| r.cpu_seconds).collect();
    stamps.sort_by(f64::total_cmp);
    stamps.dedup();
    let at = |rows: &[TraceRow], t: f64| {
        let idx = rows.partition_point(|r| r.cpu_seconds <= t);
        rows[idx.saturating_sub(1)].normalized_fval
    };
    let mut out = String::from("cpu_seconds,sl_normalized_fval,ml_normalized_fval\n");
    for t in stamps {
        let _ = writeln!(out, "{},{},{}", fmt17(t), fmt17(at(&a, t)), fmt17(at(&b, t)));
    }
    Ok(out)
}

pub fn emit_plot_data(sl: &SolverTrace, ml: &SolverTrace, f_ref: f64, path: &Path) -> Result<(), HarnessError> {
    let text = plot_data(sl, ml, f_ref)?;
    std::fs::write(path, text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

/// The CSV with the `cpu_seconds` column blanked, for byte comparisons.
pub fn strip_timing(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            if f.len() > 3 {
                f[3] = "";
            }
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
