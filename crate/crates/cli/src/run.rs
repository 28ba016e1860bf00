//! `run`: drives the engine over a generated sequence and persists the
//! run directory after every problem so it can be resumed.
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.json   configuration, sequence, timing, finalized flag
//! config.json     effective engine configuration
//! library/        frozen modules and earlier solutions
//! records.json    per-problem records and the accuracy matrix
//! metrics.csv     one row per problem
//! summary.json    A, F and Tr_last once the run is complete
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use picle_core::bench::{compute_metrics, read_sequence, AccuracyMatrix, MetricsReport, SequenceSpec};
use picle_core::data::DataBundle;
use picle_core::engine::{solve_problem, EngineConfig, Mode, ProblemRecord, RunState};
use picle_core::library::{load_library, save_library, Library, FORMAT_VERSION};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::files::{read_config_json, read_json, write_atomic, write_json};

pub const MANIFEST: &str = "manifest.json";
pub const RECORDS: &str = "records.json";
pub const METRICS: &str = "metrics.csv";
pub const SUMMARY: &str = "summary.json";
pub const CONFIG: &str = "config.json";
pub const LIBRARY: &str = "library";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub package: String,
    pub version: String,
    pub library_format: u32,
}

impl BuildInfo {
    fn current() -> Self {
        Self {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            library_format: FORMAT_VERSION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemTiming {
    pub problem_id: String,
    pub seconds: f64,
}

/// Everything needed to reconstruct a run, plus wall-clock information
/// that is deliberately kept out of the other files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_name: String,
    pub config: EngineConfig,
    pub sequence_dir: PathBuf,
    pub sequence: SequenceSpec,
    pub num_problems: usize,
    pub build: BuildInfo,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub timings: Vec<ProblemTiming>,
    pub finalized: bool,
}

/// Deterministic content of `records.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecords {
    pub mode: Mode,
    pub global_seed: u64,
    pub records: Vec<ProblemRecord>,
    pub accuracy: AccuracyMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaReference {
    /// `"in_run"` or the directory of a linked standalone run.
    pub source: String,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub a: f64,
    pub f: f64,
    pub tr_last: Option<f64>,
    pub sa_reference: Option<SaReference>,
    pub total_trainings: usize,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub sequence_dir: PathBuf,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub resume: bool,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub run_name: Option<String>,
    /// Stop after solving this many problems in this invocation.
    pub max_problems: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub solved_now: usize,
    pub num_solved: usize,
    pub num_problems: usize,
    pub finalized: bool,
    pub summary: Option<RunSummary>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Thread count: `PICLE_THREADS` wins over the flag.
pub fn resolve_threads(flag: usize) -> CliResult<usize> {
    match std::env::var("PICLE_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("PICLE_THREADS must be a non-negative integer, got `{v}`"))),
        _ => Ok(flag),
    }
}

fn effective_config(opts: &RunOptions) -> CliResult<EngineConfig> {
    let mut cfg = match &opts.config_path {
        Some(p) => read_config_json(p, "engine config")?,
        None => EngineConfig::default(),
    };
    if let Some(m) = opts.mode {
        cfg.mode = m;
    }
    if let Some(s) = opts.seed {
        cfg.global_seed = s;
    }
    cfg.validate()
        .map_err(|e| CliError::Config(format!("invalid engine config: {e}")))?;
    Ok(cfg)
}

pub fn load_records(dir: &Path) -> CliResult<RunRecords> {
    read_json(&dir.join(RECORDS))
}

pub fn load_manifest(dir: &Path) -> CliResult<RunManifest> {
    read_json(&dir.join(MANIFEST))
}

fn write_metrics_csv(path: &Path, records: &[ProblemRecord], accuracy: &AccuracyMatrix) -> CliResult<()> {
    let last = accuracy.last();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "problem",
        "problem_id",
        "family",
        "path",
        "val_accuracy",
        "test_accuracy_initial",
        "test_accuracy_final",
        "trainings_sa",
        "trainings_pt",
        "trainings_nt",
        "trainings_rs",
        "trainings_total",
        "training_ceiling",
    ])?;
    for (r, fin) in records.iter().zip(&last) {
        let family = serde_json::to_value(r.chosen).expect("enum serializes");
        w.write_record([
            (r.index + 1).to_string(),
            r.problem_id.clone(),
            family.as_str().unwrap_or_default().to_string(),
            r.chosen_path.signature(),
            format!("{:.6}", r.val_accuracy),
            format!("{:.6}", r.test_accuracy),
            format!("{fin:.6}"),
            r.trainings.sa.to_string(),
            r.trainings.pt.to_string(),
            r.trainings.nt.to_string(),
            r.trainings.rs.to_string(),
            r.trainings.total().to_string(),
            r.training_ceiling.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

fn save_library_atomic(library: &Library, out_dir: &Path) -> CliResult<()> {
    let staging = out_dir.join("library.next");
    let target = out_dir.join(LIBRARY);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
    }
    save_library(library, &staging)?;
    if target.exists() {
        fs::remove_dir_all(&target).map_err(|e| CliError::io(&target, e))?;
    }
    fs::rename(&staging, &target).map_err(|e| CliError::io(&target, e))
}

/// Final accuracy on the last problem of a finished standalone run over
/// the same sequence and seed, looked up among the siblings of `out_dir`.
pub fn find_sa_reference(out_dir: &Path, manifest: &RunManifest) -> Option<SaReference> {
    let parent = out_dir.parent()?;
    let own = fs::canonicalize(out_dir).ok();
    let mut dirs: Vec<PathBuf> = fs::read_dir(parent)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.into_iter()
        .filter(|d| fs::canonicalize(d).ok() != own)
        .find_map(|d| {
            let m = load_manifest(&d).ok()?;
            let matches = m.finalized
                && m.config.mode == Mode::Sa
                && m.sequence == manifest.sequence
                && m.config.global_seed == manifest.config.global_seed;
            if !matches {
                return None;
            }
            let last = load_records(&d).ok()?.accuracy.last();
            Some(SaReference {
                source: d.display().to_string(),
                accuracy: *last.last()?,
            })
        })
}

/// SA reference for a finished run: the run itself in standalone mode,
/// else a linked sibling run, else the standalone candidate trained
/// inside this run.
pub fn sa_reference(out_dir: &Path, manifest: &RunManifest, records: &RunRecords) -> Option<SaReference> {
    if manifest.config.mode == Mode::Sa {
        return records.accuracy.last().last().map(|&accuracy| SaReference {
            source: "in_run".into(),
            accuracy,
        });
    }
    find_sa_reference(out_dir, manifest).or_else(|| {
        let last = records.records.last()?;
        let sa = last.sa.as_ref()?;
        Some(SaReference {
            source: "in_run".into(),
            accuracy: sa.best().test_accuracy,
        })
    })
}

pub fn summarize_run(out_dir: &Path, manifest: &RunManifest, records: &RunRecords) -> CliResult<(MetricsReport, RunSummary)> {
    let sa = sa_reference(out_dir, manifest, records);
    let metrics = compute_metrics(&records.accuracy, sa.as_ref().map(|s| s.accuracy))?;
    let summary = RunSummary {
        a: metrics.a,
        f: metrics.f,
        tr_last: metrics.tr_last,
        sa_reference: sa,
        total_trainings: records.records.iter().map(|r| r.trainings.total()).sum(),
    };
    Ok((metrics, summary))
}

fn load_problems(dir: &Path) -> CliResult<(SequenceSpec, Vec<DataBundle>)> {
    if !dir.join("spec.json").is_file() {
        return Err(CliError::Config(format!(
            "{} is not a generated sequence (no spec.json)",
            dir.display()
        )));
    }
    let (spec, problems) = read_sequence(dir)?;
    Ok((spec, problems.into_iter().map(|(_, d)| d).collect()))
}

/// Runs (or resumes) the engine over a generated sequence.
pub fn cmd_run(opts: &RunOptions) -> CliResult<RunOutcome> {
    let threads = resolve_threads(opts.threads)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    pool.install(|| run_in_pool(opts))
}

fn run_in_pool(opts: &RunOptions) -> CliResult<RunOutcome> {
    let out = &opts.out_dir;
    let manifest_path = out.join(MANIFEST);
    let (sequence, problems) = load_problems(&opts.sequence_dir)?;

    let (mut manifest, mut state) = if manifest_path.exists() {
        if !opts.resume {
            return Err(CliError::Config(format!(
                "{} already holds a run; pass --resume to continue it",
                out.display()
            )));
        }
        let manifest = load_manifest(out)?;
        if opts.config_path.is_some() || opts.mode.is_some() || opts.seed.is_some() {
            let requested = effective_config(opts)?;
            if requested != manifest.config {
                return Err(CliError::Config(
                    "configuration differs from the run being resumed".into(),
                ));
            }
        }
        if manifest.sequence != sequence {
            return Err(CliError::Config("sequence differs from the run being resumed".into()));
        }
        let records = load_records(out)?;
        let library = if records.records.is_empty() {
            let mut l = Library::new(manifest.config.num_layers());
            l.settings = serde_json::to_value(&manifest.config).expect("config serializes");
            l
        } else {
            load_library(&out.join(LIBRARY))?
        };
        if library.solutions.len() != records.records.len() {
            return Err(picle_core::Error::Corrupt {
                path: out.join(LIBRARY),
                reason: format!(
                    "{} solutions but {} records",
                    library.solutions.len(),
                    records.records.len()
                ),
            }
            .into());
        }
        let state = RunState {
            library,
            records: records.records,
            accuracy: records.accuracy,
        };
        (manifest, state)
    } else {
        let cfg = effective_config(opts)?;
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let run_name = opts.run_name.clone().unwrap_or_else(|| {
            out.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into())
        });
        let manifest = RunManifest {
            run_name,
            config: cfg.clone(),
            sequence_dir: opts.sequence_dir.clone(),
            sequence: sequence.clone(),
            num_problems: problems.len(),
            build: BuildInfo::current(),
            started_unix: unix_now(),
            finished_unix: None,
            timings: Vec::new(),
            finalized: false,
        };
        write_json(&out.join(CONFIG), &cfg)?;
        write_json(&manifest_path, &manifest)?;
        let mut state = RunState::new(&cfg);
        state.library.settings = serde_json::to_value(&cfg).expect("config serializes");
        write_json(
            &out.join(RECORDS),
            &RunRecords {
                mode: cfg.mode,
                global_seed: cfg.global_seed,
                records: Vec::new(),
                accuracy: state.accuracy.clone(),
            },
        )?;
        (manifest, state)
    };

    let cfg = manifest.config.clone();
    let budget = opts.max_problems.unwrap_or(usize::MAX);
    let mut solved_now = 0;
    while state.num_solved() < problems.len() && solved_now < budget {
        let t = state.num_solved();
        let started = Instant::now();
        solve_problem(&mut state, &problems[..=t], &cfg)?;
        let seconds = started.elapsed().as_secs_f64();
        let r = state.records.last().expect("just solved");
        eprintln!(
            "[{}] {} solved by {:?} path {} val {:.3} test {:.3} ({} trainings, {:.1}s)",
            manifest.run_name,
            r.problem_id,
            r.chosen,
            r.chosen_path.signature(),
            r.val_accuracy,
            r.test_accuracy,
            r.trainings.total(),
            seconds
        );
        save_library_atomic(&state.library, out)?;
        let records = RunRecords {
            mode: cfg.mode,
            global_seed: cfg.global_seed,
            records: state.records.clone(),
            accuracy: state.accuracy.clone(),
        };
        write_json(&out.join(RECORDS), &records)?;
        write_metrics_csv(&out.join(METRICS), &state.records, &state.accuracy)?;
        manifest.timings.push(ProblemTiming {
            problem_id: r.problem_id.clone(),
            seconds,
        });
        write_json(&manifest_path, &manifest)?;
        solved_now += 1;
    }

    let mut summary = None;
    if state.num_solved() == problems.len() && !problems.is_empty() {
        let records = RunRecords {
            mode: cfg.mode,
            global_seed: cfg.global_seed,
            records: state.records.clone(),
            accuracy: state.accuracy.clone(),
        };
        let (_, s) = summarize_run(out, &manifest, &records)?;
        write_json(&out.join(SUMMARY), &s)?;
        summary = Some(s);
        if !manifest.finalized {
            manifest.finalized = true;
            manifest.finished_unix = Some(unix_now());
            write_json(&manifest_path, &manifest)?;
        }
    }
    Ok(RunOutcome {
        solved_now,
        num_solved: state.num_solved(),
        num_problems: problems.len(),
        finalized: manifest.finalized,
        summary,
    })
}
