use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use picle_cli::run::{load_records, METRICS, RECORDS, SUMMARY};
use picle_cli::{build_report, cmd_generate, cmd_run, render_csv, render_text, CliError, RunOptions, RunSummary};
use picle_core::engine::Mode;
use serde_json::json;

const FAST_CONFIG: &str = r#"{
  "train": { "max_epochs": 6 },
  "trials": { "learning_rates": [0.01], "restarts": 1 },
  "fit_samples": 400,
  "score_samples": 200
}"#;

fn small_spec(pattern: &str, seed: u64) -> serde_json::Value {
    json!({
        "pattern": pattern,
        "seed": seed,
        "sizes": {
            "plus": { "count": 400, "unique_inputs": null, "cells": null },
            "minus_perceptual": { "count": 200, "unique_inputs": 40, "cells": null },
            "minus_latent": { "count": 200, "unique_inputs": null, "cells": 30 },
            "val": { "count": 200, "unique_inputs": null, "cells": null },
            "test": { "count": 200, "unique_inputs": null, "cells": null }
        }
    })
}

struct Fixture {
    root: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            root: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.path().join(rel)
    }

    fn write(&self, rel: &str, contents: &str) -> PathBuf {
        let p = self.path(rel);
        fs::write(&p, contents).unwrap();
        p
    }

    fn sequence(&self, pattern: &str, seed: u64) -> PathBuf {
        let spec = self.write(&format!("{pattern}-{seed}.json"), &small_spec(pattern, seed).to_string());
        let out = self.path(&format!("seq-{pattern}-{seed}"));
        cmd_generate(&spec, &out).unwrap();
        out
    }

    fn run_opts(&self, seq: &Path, run: &str, mode: Mode) -> RunOptions {
        RunOptions {
            sequence_dir: seq.to_path_buf(),
            config_path: Some(self.write("fast.json", FAST_CONFIG)),
            out_dir: self.path(run),
            mode: Some(mode),
            seed: Some(7),
            threads: 1,
            ..RunOptions::default()
        }
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn picle() -> Command {
    Command::new(env!("CARGO_BIN_EXE_picle"))
}

#[test]
fn generate_is_idempotent() {
    let fx = Fixture::new();
    let spec = fx.write("spec.json", &small_spec("S_out", 3).to_string());
    cmd_generate(&spec, &fx.path("a")).unwrap();
    cmd_generate(&spec, &fx.path("b")).unwrap();
    cmd_generate(&spec, &fx.path("a")).unwrap();
    let a = dir_bytes(&fx.path("a"));
    assert_eq!(a.len(), 1 + 6 * 4);
    assert_eq!(a, dir_bytes(&fx.path("b")));
}

#[test]
fn few_shot_sequence_layout() {
    let fx = Fixture::new();
    let spec = fx.write("few.json", r#"{"pattern": "S_few", "seed": 1}"#);
    let out = fx.path("few");
    assert_eq!(cmd_generate(&spec, &out).unwrap(), 6);
    let dirs: Vec<_> = fs::read_dir(&out).unwrap().filter_map(|e| e.ok()).filter(|e| e.path().is_dir()).collect();
    assert_eq!(dirs.len(), 6);
    let train = fs::read_to_string(out.join("problem_06/train.csv")).unwrap();
    assert_eq!(train.lines().count(), 1 + 10);
}

#[test]
fn invalid_spec_exits_with_config_code() {
    let fx = Fixture::new();
    let spec = fx.write("bad.json", r#"{"pattern": "S_nope", "seed": 1}"#);
    let out = picle()
        .args(["generate", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(fx.path("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("pattern"), "{stderr}");

    let missing = picle()
        .args(["generate", "--spec"])
        .arg(fx.path("absent.json"))
        .arg("--out")
        .arg(fx.path("y"))
        .output()
        .unwrap();
    assert_ne!(missing.status.code(), Some(0));

    let cfg = fx.write("cfg.json", r#"{"trainn": {}}"#);
    let seq = fx.sequence("S_out", 1);
    let err = cmd_run(&RunOptions {
        sequence_dir: seq,
        config_path: Some(cfg),
        out_dir: fx.path("run"),
        ..RunOptions::default()
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("trainn"), "{err}");
}

#[test]
fn runs_are_byte_reproducible() {
    let fx = Fixture::new();
    let seq = fx.sequence("S_out", 2);
    let mut a = fx.run_opts(&seq, "a", Mode::Picle);
    a.max_problems = Some(3);
    let mut b = fx.run_opts(&seq, "b", Mode::Picle);
    b.max_problems = Some(3);
    cmd_run(&a).unwrap();
    cmd_run(&b).unwrap();
    for f in [METRICS, RECORDS] {
        assert_eq!(fs::read(fx.path("a").join(f)).unwrap(), fs::read(fx.path("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resume_continues_where_it_stopped() {
    let fx = Fixture::new();
    let seq = fx.sequence("S_out", 4);
    let mut opts = fx.run_opts(&seq, "r", Mode::Picle);
    opts.max_problems = Some(3);
    let first = cmd_run(&opts).unwrap();
    assert_eq!((first.num_solved, first.finalized), (3, false));
    assert!(!fx.path("r").join(SUMMARY).exists());

    // a second plain invocation refuses to clobber the run
    opts.max_problems = None;
    assert!(matches!(cmd_run(&opts), Err(CliError::Config(_))));

    opts.resume = true;
    let done = cmd_run(&opts).unwrap();
    assert_eq!((done.solved_now, done.num_solved, done.finalized), (3, 6, true));

    let full = fx.run_opts(&seq, "full", Mode::Picle);
    cmd_run(&full).unwrap();
    for f in [METRICS, RECORDS] {
        assert_eq!(fs::read(fx.path("r").join(f)).unwrap(), fs::read(fx.path("full").join(f)).unwrap(), "{f}");
    }

    let mut other = fx.run_opts(&seq, "r", Mode::Sa);
    other.resume = true;
    assert!(matches!(cmd_run(&other), Err(CliError::Config(_))));
}

#[test]
fn sa_reference_is_linked_and_report_lists_runs() {
    let fx = Fixture::new();
    let seq = fx.sequence("S_out", 5);
    fs::create_dir_all(fx.path("runs")).unwrap();
    cmd_run(&fx.run_opts(&seq, "runs/sa", Mode::Sa)).unwrap();
    let out = cmd_run(&fx.run_opts(&seq, "runs/picle", Mode::Picle)).unwrap();
    let summary = out.summary.unwrap();
    let sa: RunSummary = serde_json::from_slice(&fs::read(fx.path("runs/sa").join(SUMMARY)).unwrap()).unwrap();
    let reference = summary.sa_reference.as_ref().unwrap();
    assert!(reference.source.ends_with("sa"), "{}", reference.source);
    let sa_last = load_records(&fx.path("runs/sa")).unwrap().accuracy.last();
    assert_eq!(reference.accuracy, *sa_last.last().unwrap());
    assert_eq!(sa.tr_last, Some(0.0));
    assert_eq!(summary.f, 0.0);

    let mut partial = fx.run_opts(&seq, "runs/partial", Mode::NtOnly);
    partial.max_problems = Some(2);
    cmd_run(&partial).unwrap();
    fs::create_dir_all(fx.path("runs/junk")).unwrap();
    fs::write(fx.path("runs/junk/manifest.json"), "{ not json").unwrap();

    let dirs: Vec<PathBuf> = ["sa", "picle", "partial", "junk"].iter().map(|d| fx.path("runs").join(d)).collect();
    let report = build_report(&dirs);
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.warnings.len(), 1);
    let partial_row = report.rows.iter().find(|r| r.mode == "nt_only").unwrap();
    assert_eq!(partial_row.status, "incomplete (2/6)");
    assert!(partial_row.a.is_none());
    let modes: Vec<_> = report.aggregates.iter().map(|a| a.mode.as_str()).collect();
    assert_eq!(modes, vec!["picle", "sa"]);
    let text = render_text(&report);
    assert!(text.contains("incomplete (2/6)"));
    let csv = String::from_utf8(render_csv(&report).unwrap()).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);

    let status = picle().arg("report").args(&dirs).output().unwrap();
    assert_eq!(status.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&status.stderr).contains("junk"));
}

#[test]
fn random_search_budget_is_audited_from_records() {
    let fx = Fixture::new();
    let seq = fx.sequence("S_out", 6);
    let mut opts = fx.run_opts(&seq, "rs", Mode::Rs);
    opts.max_problems = Some(3);
    cmd_run(&opts).unwrap();
    let records = load_records(&fx.path("rs")).unwrap();
    assert_eq!(records.records.len(), 3);
    for r in &records.records {
        let l = r.num_layers;
        let expected = if r.index == 0 { 1 } else { 2 * l + r.index + 1 };
        assert_eq!(r.trainings.rs, expected, "{}", r.problem_id);
        assert_eq!(r.trainings.total(), r.trainings.rs);
    }
    let metrics = fs::read_to_string(fx.path("rs").join(METRICS)).unwrap();
    let header: Vec<&str> = metrics.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "trainings_rs").unwrap();
    let counts: Vec<usize> = metrics.lines().skip(1).map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert_eq!(counts, vec![1, 14, 15]);
}
