//! `report`: a comparison table over finished runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};
use crate::files::write_atomic;
use crate::run::{load_manifest, load_records, summarize_run};

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub mode: String,
    pub pattern: String,
    pub seed: u64,
    /// `complete` or `incomplete (solved/total)`.
    pub status: String,
    pub a: Option<f64>,
    pub tr_last: Option<f64>,
    pub f: Option<f64>,
    pub trainings: usize,
    pub max_trainings_per_problem: usize,
}

impl ReportRow {
    pub fn is_complete(&self) -> bool {
        self.status == "complete"
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub mode: String,
    pub runs: usize,
    pub a: f64,
    /// Mean over the runs that have a reference.
    pub tr_last: Option<f64>,
    pub f: f64,
    pub trainings: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<AggregateRow>,
    /// Directories that could not be read.
    pub warnings: Vec<String>,
}

fn load_row(dir: &Path) -> CliResult<ReportRow> {
    let manifest = load_manifest(dir)?;
    let records = load_records(dir)?;
    let solved = records.records.len();
    let complete = manifest.finalized && solved == manifest.num_problems;
    let (a, tr_last, f) = if complete {
        let (m, _) = summarize_run(dir, &manifest, &records)?;
        (Some(m.a), m.tr_last, Some(m.f))
    } else {
        (None, None, None)
    };
    Ok(ReportRow {
        run: manifest.run_name.clone(),
        mode: manifest.config.mode.name().into(),
        pattern: manifest.sequence.pattern.name().into(),
        seed: manifest.config.global_seed,
        status: if complete {
            "complete".into()
        } else {
            format!("incomplete ({solved}/{})", manifest.num_problems)
        },
        a,
        tr_last,
        f,
        trainings: records.records.iter().map(|r| r.trainings.total()).sum(),
        max_trainings_per_problem: records.records.iter().map(|r| r.trainings.total()).max().unwrap_or(0),
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Builds the report; unreadable directories become warnings.
pub fn build_report(run_dirs: &[PathBuf]) -> Report {
    let mut report = Report::default();
    for dir in run_dirs {
        match load_row(dir) {
            Ok(row) => report.rows.push(row),
            Err(e) => report.warnings.push(format!("skipping {}: {e}", dir.display())),
        }
    }
    let mut by_mode: BTreeMap<&str, Vec<&ReportRow>> = BTreeMap::new();
    for row in report.rows.iter().filter(|r| r.is_complete()) {
        by_mode.entry(row.mode.as_str()).or_default().push(row);
    }
    report.aggregates = by_mode
        .into_iter()
        .map(|(mode, rows)| {
            let trs: Vec<f64> = rows.iter().filter_map(|r| r.tr_last).collect();
            AggregateRow {
                mode: mode.into(),
                runs: rows.len(),
                a: mean(&rows.iter().filter_map(|r| r.a).collect::<Vec<_>>()),
                tr_last: (!trs.is_empty()).then(|| mean(&trs)),
                f: mean(&rows.iter().filter_map(|r| r.f).collect::<Vec<_>>()),
                trainings: mean(&rows.iter().map(|r| r.trainings as f64).collect::<Vec<_>>()),
            }
        })
        .collect();
    report
}

fn pct(x: Option<f64>) -> String {
    x.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_else(|| "-".into())
}

/// Aligned plain-text rendering; accuracies in percent.
pub fn render_text(report: &Report) -> String {
    let header = ["run", "mode", "pattern", "seed", "status", "A", "Tr_last", "F", "trainings", "max/problem"];
    let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in &report.rows {
        table.push(vec![
            r.run.clone(),
            r.mode.clone(),
            r.pattern.clone(),
            r.seed.to_string(),
            r.status.clone(),
            pct(r.a),
            pct(r.tr_last),
            pct(r.f),
            r.trainings.to_string(),
            r.max_trainings_per_problem.to_string(),
        ]);
    }
    let mut out = String::new();
    render_table(&mut out, &table);
    if !report.aggregates.is_empty() {
        out.push('\n');
        let mut agg: Vec<Vec<String>> = vec![["mode", "runs", "A", "Tr_last", "F", "trainings"]
            .iter()
            .map(|s| s.to_string())
            .collect()];
        for a in &report.aggregates {
            agg.push(vec![
                a.mode.clone(),
                a.runs.to_string(),
                pct(Some(a.a)),
                pct(a.tr_last),
                pct(Some(a.f)),
                format!("{:.1}", a.trainings),
            ]);
        }
        render_table(&mut out, &agg);
    }
    out
}

fn render_table(out: &mut String, rows: &[Vec<String>]) {
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    for row in rows {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
}

pub fn render_csv(report: &Report) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "mode", "pattern", "seed", "status", "a", "tr_last", "f", "trainings", "max_trainings_per_problem"])?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    for r in &report.rows {
        w.write_record([
            r.run.clone(),
            r.mode.clone(),
            r.pattern.clone(),
            r.seed.to_string(),
            r.status.clone(),
            opt(r.a),
            opt(r.tr_last),
            opt(r.f),
            r.trainings.to_string(),
            r.max_trainings_per_problem.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::io(Path::new("<report>"), e.into_error()))
}

/// Prints the table and optionally writes the CSV. Unreadable run
/// directories only produce warnings.
pub fn cmd_report(run_dirs: &[PathBuf], csv_out: Option<&Path>) -> CliResult<Report> {
    let report = build_report(run_dirs);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", render_text(&report));
    if let Some(path) = csv_out {
        write_atomic(path, &render_csv(&report)?)?;
    }
    Ok(report)
}
