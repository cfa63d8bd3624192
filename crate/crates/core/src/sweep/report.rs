use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::runner::SweepReport;
use super::trial::{mean_std, Aggregate};
use super::SweepError;

/// Tolerance for re-verifying stored aggregates against their inputs.
pub const AGGREGATE_TOLERANCE: f64 = 1e-12;

pub const CSV_HEADER: [&str; 6] = ["axis_value", "mean_accuracy", "std_accuracy", "pct_change", "n_replications", "seed"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(SweepError::UnknownFormat(s.to_string())),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

fn fixed(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        _ => String::new(),
    }
}

/// CSV rendering: one line per row, numbers with six decimals, accuracies as
/// fractions and percent change in percent.
pub fn report_csv(report: &SweepReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for row in &report.rows {
        let a = &row.aggregate;
        let ok = a.n_replications > 0;
        w.write_record([
            row.label.clone(),
            fixed(ok.then_some(a.mean_accuracy)),
            fixed(ok.then_some(a.std_accuracy)),
            fixed(row.pct_change),
            a.n_replications.to_string(),
            a.seed.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Pretty-printed JSON with full float precision; the timestamp sits alone on
/// its own line.
pub fn report_json(report: &SweepReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn write_atomic(path: &Path, content: &str) -> Result<(), SweepError> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, content).map_err(|e| SweepError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| SweepError::io(path, e))
}

pub fn emit_report(report: &SweepReport, path: &Path, format: ReportFormat) -> Result<(), SweepError> {
    let content = match format {
        ReportFormat::Csv => report_csv(report),
        ReportFormat::Json => report_json(report),
    };
    write_atomic(path, &content)
}

#[derive(Serialize)]
struct RowTiming<'a> {
    label: &'a str,
    wall_seconds: f64,
    trial_seconds: Vec<f64>,
}

/// Wall times per row, kept out of the report so reports stay reproducible.
pub fn timings_json(report: &SweepReport) -> String {
    let rows: Vec<RowTiming> = report
        .rows
        .iter()
        .map(|r| RowTiming {
            label: &r.label,
            wall_seconds: r.aggregate.wall_time().as_secs_f64(),
            trial_seconds: r.aggregate.trials.iter().map(|t| t.wall_time.as_secs_f64()).collect(),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&rows).expect("timings serialize");
    s.push('\n');
    s
}

pub fn emit_timings(report: &SweepReport, path: &Path) -> Result<(), SweepError> {
    write_atomic(path, &timings_json(report))
}

pub fn parse_report(text: &str) -> Result<SweepReport, SweepError> {
    serde_json::from_str(text).map_err(|e| SweepError::InvalidReport(e.to_string()))
}

pub fn load_report(path: &Path) -> Result<SweepReport, SweepError> {
    let text = fs::read_to_string(path).map_err(|e| SweepError::io(path, e))?;
    parse_report(&text)
}

fn close(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= AGGREGATE_TOLERANCE
}

fn verify_aggregate(name: &str, agg: &Aggregate, folds: usize, problems: &mut Vec<String>) {
    let mut means = Vec::new();
    for t in &agg.trials {
        if !t.succeeded() {
            continue;
        }
        if t.fold_accuracies.len() != folds {
            problems.push(format!(
                "{name}: replication {} has {} folds, expected {folds}",
                t.replication,
                t.fold_accuracies.len()
            ));
        }
        let (m, s) = mean_std(&t.fold_accuracies);
        if !close(m, t.mean_accuracy) || !close(s, t.std_accuracy) {
            problems.push(format!("{name}: replication {} mean/std do not match its folds", t.replication));
        }
        means.push(t.mean_accuracy);
    }
    if means.len() != agg.n_replications {
        problems.push(format!("{name}: n_replications {} but {} succeeded", agg.n_replications, means.len()));
    }
    let (m, s) = mean_std(&means);
    if !close(m, agg.mean_accuracy) || !close(s, agg.std_accuracy) {
        problems.push(format!("{name}: aggregate mean/std do not match the replications"));
    }
    if agg.complete != agg.trials.iter().all(|t| t.succeeded()) {
        problems.push(format!("{name}: completeness flag is inconsistent"));
    }
}

/// Re-checks the report invariants: aggregates recomputable from the stored
/// folds and replications, fold counts equal to `folds`, and a zero percent
/// change on the baseline row.
pub fn verify_report(report: &SweepReport) -> Result<(), SweepError> {
    let mut problems = Vec::new();
    let folds = report.metadata.folds;
    if let Some(b) = &report.baseline {
        verify_aggregate("baseline", b, folds, &mut problems);
    }
    for row in &report.rows {
        verify_aggregate(&row.label, &row.aggregate, folds, &mut problems);
        if row.is_baseline && row.aggregate.n_replications > 0 && row.pct_change != Some(0.0) {
            problems.push(format!("{}: baseline row has percent change {:?}", row.label, row.pct_change));
        }
    }
    let complete = report.baseline.as_ref().is_none_or(|b| b.complete) && report.rows.iter().all(|r| r.aggregate.complete);
    if complete != report.metadata.complete {
        problems.push("metadata completeness flag is inconsistent".into());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(SweepError::InvalidReport(problems.join("; ")))
    }
}
