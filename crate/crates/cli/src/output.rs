//! Artifact files: estimate tables, plot data and run metadata. Numbers in
//! CSV files are written in full-precision scientific notation.

use std::fs;
use std::path::Path;

use fbis_core::EstimateReport;
use serde::Serialize;

use crate::error::RunError;

/// Version of the CSV layouts described in `docs/csv_schemas.md`.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const METADATA: &str = "metadata.json";
pub const FAILED_MARKER: &str = "FAILED";
pub const ERROR_RECORD: &str = "error.json";

pub const COMMITTOR_HEADER: [&str; 5] = ["r", "V_estimate", "V_analytic", "committor_estimate", "committor_analytic"];
pub const CONTROL_HEADER: [&str; 4] = ["t", "x", "Z_learned", "u_star"];
pub const LOSS_HEADER: [&str; 2] = ["step", "loss"];
pub const TILTED_HEADER: [&str; 4] = ["x", "potential", "tilted_potential_reference", "tilted_potential_estimate"];
pub const ITERATIONS_HEADER: [&str; 3] = ["iteration", "y0", "timeout_fraction"];
pub const REPORT_HEADER: [&str; 7] = ["label", "estimate", "standard_error", "relative_error_per_sample", "relative_error", "n", "hit_fraction"];

/// One line of the estimate table.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub label: String,
    pub estimate: f64,
    pub standard_error: Option<f64>,
    pub relative_error_per_sample: Option<f64>,
    pub relative_error: Option<f64>,
    pub n: Option<usize>,
    pub hit_fraction: Option<f64>,
}

impl Row {
    pub fn value(label: &str, estimate: f64) -> Self {
        Row {
            label: label.to_string(),
            estimate,
            standard_error: None,
            relative_error_per_sample: None,
            relative_error: None,
            n: None,
            hit_fraction: None,
        }
    }

    pub fn from_report(label: &str, r: &EstimateReport) -> Self {
        Row {
            label: label.to_string(),
            estimate: r.estimate,
            standard_error: Some(r.standard_error()),
            relative_error_per_sample: r.relative_error_per_sample(),
            relative_error: r.relative_error(),
            n: Some(r.n),
            hit_fraction: r.hit_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Check { name: name.to_string(), pass, detail }
    }
}

fn sci(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(sci).unwrap_or_default()
}

/// Numeric table with the given header; NaN cells are left empty and an
/// empty `rows` gives a header-only file.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        w.write_record(row.iter().map(|&v| sci(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_csv(path: &Path, rows: &[Row]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            sci(r.estimate),
            opt(r.standard_error),
            opt(r.relative_error_per_sample),
            opt(r.relative_error),
            r.n.map(|n| n.to_string()).unwrap_or_default(),
            opt(r.hit_fraction),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn rounded(v: Option<f64>) -> String {
    match v {
        None => "-".into(),
        Some(x) if !x.is_finite() => format!("{x}"),
        Some(x) if x != 0.0 && (x.abs() < 1e-2 || x.abs() >= 1e4) => format!("{x:.2e}"),
        Some(x) => format!("{x:.4}"),
    }
}

/// Plain-text table: estimate, relative error and trajectories hit, then the
/// self-checks.
pub fn render_report(title: &str, rows: &[Row], checks: &[Check]) -> String {
    let mut out = format!("{title}\n\n");
    let body: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                rounded(Some(r.estimate)),
                rounded(r.relative_error.or(r.relative_error_per_sample)),
                r.hit_fraction.map_or("-".into(), |h| format!("{:.2} %", 100.0 * h)),
            ]
        })
        .collect();
    let header = ["", "estimate", "relative error", "trajectories hit"].map(String::from);
    let mut widths = [0usize; 4];
    for line in std::iter::once(&header).chain(&body) {
        for (w, cell) in widths.iter_mut().zip(line) {
            *w = (*w).max(cell.len());
        }
    }
    let fmt = |line: &[String; 4]| {
        format!("{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}\n", line[0], line[1], line[2], line[3], w0 = widths[0], w1 = widths[1], w2 = widths[2], w3 = widths[3])
    };
    out.push_str(&fmt(&header));
    for line in &body {
        out.push_str(&fmt(line));
    }
    if rows.iter().any(|r| r.relative_error.is_some()) {
        out.push_str("\nrelative error is per estimator: std / |estimate| / sqrt(n); report.csv also has the per-sample value\n");
    }
    if !checks.is_empty() {
        out.push_str("\nchecks\n");
        for c in checks {
            out.push_str(&format!("  {} {}: {}\n", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail));
        }
    }
    out
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub fbis: &'static str,
    pub csv_schema: u32,
}

#[derive(Debug, Serialize)]
pub struct Metadata<'a> {
    pub experiment: &'a str,
    pub seed: u64,
    pub status: &'a str,
    pub checks: &'a [Check],
    pub files: Vec<String>,
    pub versions: Versions,
    pub wall_time_seconds: f64,
    /// The resolved configuration, all defaults filled in.
    pub config: &'a str,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn versions() -> Versions {
    Versions { fbis: env!("CARGO_PKG_VERSION"), csv_schema: CSV_SCHEMA_VERSION }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_table(&p, &COMMITTOR_HEADER, &[]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "r,V_estimate,V_analytic,committor_estimate,committor_analytic\n");
    }

    #[test]
    fn numbers_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let v = [0.1 + 0.2, -1.0 / 3.0, 2.62e-4, f64::NAN];
        write_table(&p, &TILTED_HEADER, &[v.to_vec()]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let cells: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        for (c, want) in cells.iter().zip(&v[..3]) {
            assert_eq!(c.parse::<f64>().unwrap(), *want);
        }
        assert_eq!(cells[3], "");
    }

    #[test]
    fn report_table_layout() {
        let rows = vec![
            Row { hit_fraction: Some(0.0002), relative_error: Some(0.43), ..Row::value("MC", 2.42e-4) },
            Row { hit_fraction: Some(0.6815), relative_error: Some(0.02), ..Row::value("IS", 2.54e-4) },
        ];
        let text = render_report("double well", &rows, &[Check::new("ratio", true, "ok".into())]);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[2].contains("estimate") && lines[2].contains("trajectories hit"));
        assert!(lines[3].starts_with("MC") && lines[3].contains("2.42e-4") && lines[3].contains("0.02 %"));
        assert!(lines[4].starts_with("IS") && lines[4].contains("68.15 %"));
        assert!(text.contains("PASS ratio: ok"));
    }
}
