//! Per-problem orchestration: standalone training, the two transfer
//! searches, selection of the best path and the library update.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::AccuracyMatrix;
use crate::data::{DataBundle, TaskKind};
use crate::error::{Error, Result};
use crate::library::{train_and_evaluate, Library, Path, Slot, TrainedPath, TrialGrid, UpdateOptions};
use crate::nn::{evaluate, ArchConfig, Architecture, TrainHyper};
use crate::nt::{find_best_nt_path, BoConfig, NtConfig};
use crate::pt::{argmax_val, find_best_pt_path, PtConfig};
use crate::seed::rng_from;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Picle,
    PtOnly,
    NtOnly,
    Sa,
    Rs,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Picle, Mode::PtOnly, Mode::NtOnly, Mode::Sa, Mode::Rs];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Picle => "picle",
            Mode::PtOnly => "pt_only",
            Mode::NtOnly => "nt_only",
            Mode::Sa => "sa",
            Mode::Rs => "rs",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }

    fn uses_pt(self) -> bool {
        matches!(self, Mode::Picle | Mode::PtOnly)
    }

    fn uses_nt(self) -> bool {
        matches!(self, Mode::Picle | Mode::NtOnly)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub mode: Mode,
    pub global_seed: u64,
    pub arch: ArchConfig,
    pub train: TrainHyper,
    /// Trials per path evaluation; replaces `train.learning_rate`.
    pub trials: TrialGrid,
    /// Shortest suffix transferred by the latent search; 2 up to six
    /// layers, 3 above.
    pub l_min: Option<usize>,
    /// Input-model projection dimension.
    pub projection_dim: usize,
    pub temperature: f64,
    /// Rows used to score prefixes.
    pub score_samples: usize,
    /// Activations used to fit an input model.
    pub fit_samples: usize,
    pub probe_count: usize,
    pub beta: f64,
    /// Optimisation budget of the latent search; `L + l_min` when unset.
    pub nt_budget: Option<usize>,
    pub ei_threshold: f64,
    pub gp_jitter: f64,
    /// Fixed random-search budget; `2L + t` for problem `t` when unset.
    pub rs_budget: Option<usize>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Picle,
            global_seed: 0,
            arch: ArchConfig::default(),
            train: TrainHyper::default(),
            trials: TrialGrid::default(),
            l_min: None,
            projection_dim: 20,
            temperature: 0.001,
            score_samples: 1000,
            fit_samples: 5000,
            probe_count: 40,
            beta: 2.0,
            nt_budget: None,
            ei_threshold: 1e-3,
            gp_jitter: 1e-6,
            rs_budget: None,
        }
    }
}

impl EngineConfig {
    pub fn num_layers(&self) -> usize {
        self.arch.num_layers
    }

    pub fn l_min(&self) -> usize {
        self.l_min.unwrap_or(if self.num_layers() <= 6 { 2 } else { 3 })
    }

    pub fn nt_budget(&self) -> usize {
        self.nt_budget.unwrap_or(self.num_layers() + self.l_min())
    }

    pub fn probe_layer(&self) -> usize {
        self.num_layers() - self.l_min() + 1
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        self.trials.validate()?;
        let l = self.num_layers();
        let l_min = self.l_min();
        let invalid = |m: String| Err(Error::InvalidArgument(m));
        if l_min == 0 || l_min >= l {
            return invalid(format!("l_min {l_min} must lie in [1, {})", l));
        }
        if l - l_min < self.arch.encoder_depth() {
            return invalid("transferred suffixes must lie within the head layers".into());
        }
        if self.nt_budget() == 0 {
            return invalid("nt_budget must be at least 1".into());
        }
        if self.probe_count == 0 {
            return invalid("probe_count must be at least 1".into());
        }
        if self.projection_dim == 0 || self.score_samples == 0 || self.fit_samples < 2 {
            return invalid("projection_dim, score_samples must be positive and fit_samples at least 2".into());
        }
        if !(self.temperature > 0.0) {
            return invalid("temperature must be positive".into());
        }
        if !(self.beta >= 0.0) || !(self.gp_jitter > 0.0) {
            return invalid("beta must be non-negative and gp_jitter positive".into());
        }
        if self.rs_budget == Some(0) {
            return invalid("rs_budget must be at least 1".into());
        }
        Ok(())
    }

    fn pt_config(&self) -> PtConfig {
        PtConfig {
            temperature: self.temperature,
            score_samples: self.score_samples,
        }
    }

    fn nt_config(&self) -> NtConfig {
        NtConfig {
            l_min: self.l_min(),
            budget: Some(self.nt_budget()),
            bo: BoConfig {
                beta: self.beta,
                ei_threshold: self.ei_threshold,
                jitter: self.gp_jitter,
            },
        }
    }

    pub fn update_options(&self) -> UpdateOptions {
        UpdateOptions {
            global_seed: self.global_seed,
            fit_samples: self.fit_samples,
            projection_dim: self.projection_dim,
            probe_layer: self.probe_layer(),
            probe_count: self.probe_count,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Sa,
    Pt,
    Nt,
    Rs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub path: String,
    pub reused: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub epochs_run: usize,
}

impl From<&TrainedPath> for CandidateSummary {
    fn from(t: &TrainedPath) -> Self {
        Self {
            path: t.eval.trained_path.signature(),
            reused: t.eval.trained_path.num_reused(),
            val_accuracy: t.eval.val_accuracy,
            test_accuracy: t.eval.test_accuracy,
            train_accuracy: t.eval.train_accuracy,
            epochs_run: t.eval.epochs_run,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub candidates: Vec<CandidateSummary>,
    pub best: usize,
}

impl FamilySummary {
    pub fn best(&self) -> &CandidateSummary {
        &self.candidates[self.best]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingCounts {
    pub sa: usize,
    pub pt: usize,
    pub nt: usize,
    pub rs: usize,
}

impl TrainingCounts {
    pub fn total(&self) -> usize {
        self.sa + self.pt + self.nt + self.rs
    }
}

/// Everything recorded about one solved problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub problem_id: String,
    pub index: usize,
    pub task: TaskKind,
    pub num_layers: usize,
    pub sa: Option<FamilySummary>,
    pub pt: Option<FamilySummary>,
    pub nt: Option<FamilySummary>,
    pub rs: Option<FamilySummary>,
    /// Distinct suffixes the latent search could choose from.
    pub nt_candidates: usize,
    pub chosen: Family,
    pub chosen_path: Path,
    pub val_accuracy: f64,
    /// Test accuracy right after solving.
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub trainings: TrainingCounts,
    /// Upper bound on `trainings.total()` for this mode and problem.
    pub training_ceiling: usize,
}

/// Library, records and accuracy matrix of a run in progress.
#[derive(Clone, Debug, PartialEq)]
pub struct RunState {
    pub library: Library,
    pub records: Vec<ProblemRecord>,
    pub accuracy: AccuracyMatrix,
}

impl RunState {
    pub fn new(cfg: &EngineConfig) -> Self {
        Self {
            library: Library::new(cfg.num_layers()),
            records: Vec::new(),
            accuracy: AccuracyMatrix { rows: Vec::new() },
        }
    }

    pub fn num_solved(&self) -> usize {
        self.records.len()
    }
}

pub fn architecture_for(cfg: &EngineConfig, data: &DataBundle) -> Result<Architecture> {
    cfg.arch.build(data.input_dim(), data.task)
}

/// Test accuracy of the stored solution of problem `index`, using only
/// frozen library modules.
pub fn evaluate_solution(library: &Library, cfg: &EngineConfig, index: usize, data: &DataBundle) -> Result<f64> {
    let sol = library
        .solutions
        .get(index)
        .ok_or_else(|| Error::Sequence(format!("no solution for problem {}", index + 1)))?;
    if sol.problem_id != data.problem_id {
        return Err(Error::Sequence(format!(
            "solution {} belongs to {}, data to {}",
            index + 1,
            sol.problem_id,
            data.problem_id
        )));
    }
    let arch = architecture_for(cfg, data)?;
    let modules = sol
        .module_ids
        .iter()
        .map(|id| library.get(id).map(|m| m.params.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate(&modules, &arch, &data.test)?.accuracy)
}

/// Final test accuracy of every solved problem.
pub fn evaluate_sequence_final(state: &RunState, cfg: &EngineConfig, problems: &[DataBundle]) -> Result<Vec<f64>> {
    if problems.len() != state.library.solutions.len() {
        return Err(Error::Sequence(format!(
            "{} problems but {} solutions",
            problems.len(),
            state.library.solutions.len()
        )));
    }
    problems
        .iter()
        .enumerate()
        .map(|(j, d)| evaluate_solution(&state.library, cfg, j, d))
        .collect()
}

/// Per-layer options of random search: new, or any fitting library module.
fn rs_choices(library: &Library, arch: &Architecture) -> Vec<Vec<Slot>> {
    arch.layers
        .iter()
        .map(|spec| {
            let mut v = vec![Slot::New(spec.clone())];
            v.extend(
                library
                    .compatible_modules(spec.layer_index, spec.input_dim)
                    .into_iter()
                    .filter(|m| m.output_dim() == spec.output_dim)
                    .map(|m| Slot::Reuse(m.module_id.clone())),
            );
            v
        })
        .collect()
}

/// `budget` distinct paths drawn uniformly from the per-layer choices, the
/// all-new path first. Fewer when fewer paths exist.
pub fn random_search_paths(
    library: &Library,
    arch: &Architecture,
    budget: usize,
    global_seed: u64,
    problem_id: &str,
) -> Vec<Path> {
    let choices = rs_choices(library, arch);
    let total = choices
        .iter()
        .try_fold(1usize, |acc, c| acc.checked_mul(c.len()))
        .unwrap_or(usize::MAX);
    let target = budget.min(total);
    let all_new = Path::all_new(arch);
    let mut seen = HashSet::from([all_new.clone()]);
    let mut out = vec![all_new];
    let mut rng = rng_from(&[b"random-search", &global_seed.to_le_bytes(), problem_id.as_bytes()]);
    while out.len() < target {
        let path = Path {
            slots: choices.iter().map(|c| c[rng.random_range(0..c.len())].clone()).collect(),
        };
        if seen.insert(path.clone()) {
            out.push(path);
        }
    }
    out
}

fn summarize(cands: &[TrainedPath], best: usize) -> FamilySummary {
    FamilySummary {
        candidates: cands.iter().map(CandidateSummary::from).collect(),
        best,
    }
}

/// Solves the next problem of the sequence and records it.
///
/// `problems` holds the data of every problem solved so far followed by
/// the new one; earlier problems are re-evaluated to fill the accuracy
/// matrix.
pub fn solve_problem(state: &mut RunState, problems: &[DataBundle], cfg: &EngineConfig) -> Result<()> {
    cfg.validate()?;
    let index = state.num_solved();
    let data = problems
        .get(index)
        .ok_or_else(|| Error::Sequence(format!("no data for problem {}", index + 1)))?;
    let arch = architecture_for(cfg, data)?;
    if arch.num_layers() > state.library.num_layers() {
        return Err(Error::Shape("architecture deeper than the library".into()));
    }
    let l = arch.num_layers();
    let train = |path: &Path| train_and_evaluate(path, &state.library, &arch, data, &cfg.train, &cfg.trials, cfg.global_seed);

    let mut counts = TrainingCounts::default();
    let mut record_sa = None;
    let mut record_pt = None;
    let mut record_nt = None;
    let mut record_rs = None;
    let mut nt_candidates = 0;
    // candidates in tie-breaking order
    let mut finalists: Vec<(Family, TrainedPath)> = Vec::new();

    if cfg.mode == Mode::Rs {
        let budget = cfg.rs_budget.unwrap_or(2 * l + index + 1);
        let paths = random_search_paths(&state.library, &arch, budget, cfg.global_seed, &data.problem_id);
        let trained = paths.par_iter().map(train).collect::<Result<Vec<_>>>()?;
        counts.rs = trained.len();
        let best = argmax_val(&trained);
        record_rs = Some(summarize(&trained, best));
        finalists.push((Family::Rs, trained[best].clone()));
    } else {
        let sa = train(&Path::all_new(&arch))?;
        counts.sa = 1;
        record_sa = Some(summarize(std::slice::from_ref(&sa), 0));
        finalists.push((Family::Sa, sa));
        if cfg.mode.uses_pt() {
            if let Some(pt) = find_best_pt_path(&state.library, &arch, data, &cfg.pt_config(), train)? {
                counts.pt = pt.candidates.len();
                record_pt = Some(summarize(&pt.candidates, pt.best));
                finalists.push((Family::Pt, pt.best().clone()));
            }
        }
        if cfg.mode.uses_nt() {
            if let Some(nt) = find_best_nt_path(&state.library, &arch, data, &cfg.nt_config(), train)? {
                counts.nt = nt.candidates.len();
                nt_candidates = nt.suffixes.len();
                record_nt = Some(summarize(&nt.candidates, nt.best));
                finalists.push((Family::Nt, nt.best().clone()));
            }
        }
    }
    let ceiling = match cfg.mode {
        Mode::Rs => cfg.rs_budget.unwrap_or(2 * l + index + 1),
        Mode::Sa => 1,
        mode => {
            let pt = if mode.uses_pt() { l } else { 0 };
            let nt = if mode.uses_nt() && nt_candidates > 0 {
                cfg.nt_budget().min(nt_candidates) + (l - 1 - cfg.l_min())
            } else {
                0
            };
            1 + pt + nt
        }
    };

    let mut chosen = 0;
    for (i, (_, c)) in finalists.iter().enumerate() {
        if c.eval.val_accuracy > finalists[chosen].1.eval.val_accuracy {
            chosen = i;
        }
    }
    let (family, best) = finalists.swap_remove(chosen);
    state.library.update(&best, &arch, data, index, &cfg.update_options())?;

    let row = (0..=index)
        .map(|j| evaluate_solution(&state.library, cfg, j, &problems[j]))
        .collect::<Result<Vec<_>>>()?;
    state.accuracy.rows.push(row);
    state.records.push(ProblemRecord {
        problem_id: data.problem_id.clone(),
        index,
        task: data.task,
        num_layers: l,
        sa: record_sa,
        pt: record_pt,
        nt: record_nt,
        rs: record_rs,
        nt_candidates,
        chosen: family,
        chosen_path: best.eval.trained_path.clone(),
        val_accuracy: best.eval.val_accuracy,
        test_accuracy: best.eval.test_accuracy,
        train_accuracy: best.eval.train_accuracy,
        trainings: counts,
        training_ceiling: ceiling,
    });
    Ok(())
}
