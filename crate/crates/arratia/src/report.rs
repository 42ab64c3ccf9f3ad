//! Machine-readable experiment reports and plot-data files.
//!
//! Reports serialize to JSON (struct order, shortest-roundtrip floats) or
//! to CSV rows `check,value,threshold,pass`; both are UTF-8 with
//! newline-terminated rows, and identical across reruns except for the
//! wall-clock field of the JSON body.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// One named check with its gating threshold.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckResult {
    /// Pass when `value <= threshold`.
    pub fn le(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        CheckResult {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    /// Pass when `value >= threshold`.
    pub fn ge(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        CheckResult {
            name: name.into(),
            value,
            threshold,
            pass: value >= threshold,
        }
    }
}

/// Full outcome of one experiment run.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub experiment: String,
    pub config: BTreeMap<String, String>,
    pub checks: Vec<CheckResult>,
    pub notes: Vec<String>,
    pub artifacts: Vec<String>,
    pub wall_clock_ms: u128,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("check,value,threshold,pass\n");
        for c in &self.checks {
            s.push_str(&format!("{},{},{},{}\n", c.name, c.value, c.threshold, c.pass));
        }
        s
    }
}

/// Report body format selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<ReportFormat> {
        match s {
            "json" => Some(ReportFormat::Json),
            "csv" => Some(ReportFormat::Csv),
            _ => None,
        }
    }
}

/// Write the report body into `out_dir` as `report.json` or `report.csv`.
pub fn emit_report(report: &Report, out_dir: &Path, format: ReportFormat) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let (name, body) = match format {
        ReportFormat::Json => ("report.json", report.to_json_string()),
        ReportFormat::Csv => ("report.csv", report.to_csv_string()),
    };
    let path = out_dir.join(name);
    fs::write(&path, body)?;
    Ok(path)
}

/// Write a CSV data file (header plus float rows); used for plot data and
/// tabulations.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let columns = header.split(',').count();
    let mut body = String::with_capacity(rows.len() * 24 + header.len() + 1);
    body.push_str(header);
    body.push('\n');
    for row in rows {
        if row.len() != columns {
            return Err(Error::invalid(format!(
                "row width {} does not match header `{header}`",
                row.len()
            )));
        }
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        body.push_str(&cells.join(","));
        body.push('\n');
    }
    fs::write(path, body)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> Report {
        Report {
            experiment: "zero-mean".into(),
            config: BTreeMap::from([("seed".to_string(), "1".to_string())]),
            checks: vec![
                CheckResult::le("z", 1.5, 4.0),
                CheckResult::le("bad", 9.0, 4.0),
            ],
            notes: vec!["note".into()],
            artifacts: vec![],
            wall_clock_ms: 12,
        }
    }

    #[test]
    fn csv_schema_and_header_only() {
        let mut r = sample_report();
        assert_eq!(
            r.to_csv_string(),
            "check,value,threshold,pass\nz,1.5,4,true\nbad,9,4,false\n"
        );
        r.checks.clear();
        assert_eq!(r.to_csv_string(), "check,value,threshold,pass\n");
        assert!(!sample_report().all_pass());
    }

    #[test]
    fn json_round_trips() {
        let r = sample_report();
        let parsed: serde_json::Value = serde_json::from_str(&r.to_json_string()).unwrap();
        assert_eq!(parsed["experiment"], "zero-mean");
        assert_eq!(parsed["checks"][0]["name"], "z");
        assert_eq!(parsed["checks"][0]["pass"], true);
        assert_eq!(parsed["config"]["seed"], "1");
    }

    #[test]
    fn emit_and_plot_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample_report();
        let p = emit_report(&r, dir.path(), ReportFormat::Json).unwrap();
        assert!(p.ends_with("report.json"));
        let p = emit_report(&r, dir.path(), ReportFormat::Csv).unwrap();
        let body = fs::read_to_string(&p).unwrap();
        assert!(body.starts_with("check,value,threshold,pass\n"));

        let plot = dir.path().join("plot.csv");
        write_csv(&plot, "x,y,yerr", &[vec![1.0, 2.0, 0.5]]).unwrap();
        let body = fs::read_to_string(&plot).unwrap();
        assert_eq!(body, "x,y,yerr\n1,2,0.5\n");
        assert!(write_csv(&plot, "x,y", &[vec![1.0]]).is_err());
    }
}
