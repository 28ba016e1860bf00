//! The module library: frozen modules per layer plus earlier solutions.

mod store;

use ndarray::{s, Array2};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use store::{load_library, save_library, FORMAT_VERSION};

use crate::data::{DataBundle, TaskKind};
use crate::error::{Error, Result};
use crate::nn::{self, collect_layer_inputs, init_module, Architecture, LayerSpec, ModuleParams, TrainHyper};
use crate::pt::{fit_input_model, InputModel};
use crate::seed::SeedKey;

pub type ModuleId = String;

/// One position of a path.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Reuse(ModuleId),
    New(LayerSpec),
}

/// A choice of one module per layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    pub slots: Vec<Slot>,
}

impl Path {
    /// Every layer new: the standalone network.
    pub fn all_new(arch: &Architecture) -> Self {
        Self {
            slots: arch.layers.iter().cloned().map(Slot::New).collect(),
        }
    }

    /// Reused `prefix` followed by new modules for the remaining layers.
    pub fn with_prefix(prefix: &[ModuleId], arch: &Architecture) -> Self {
        let mut slots: Vec<Slot> = prefix.iter().cloned().map(Slot::Reuse).collect();
        slots.extend(arch.layers[prefix.len()..].iter().cloned().map(Slot::New));
        Self { slots }
    }

    /// New modules followed by the reused `suffix`.
    pub fn with_suffix(suffix: &[ModuleId], arch: &Architecture) -> Self {
        let cut = arch.num_layers() - suffix.len();
        let mut slots: Vec<Slot> = arch.layers[..cut].iter().cloned().map(Slot::New).collect();
        slots.extend(suffix.iter().cloned().map(Slot::Reuse));
        Self { slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Canonical text form: module ids for reused slots, `n<in>x<out>` for
    /// new ones, joined by `-`.
    pub fn signature(&self) -> String {
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Reuse(id) => id.clone(),
                Slot::New(spec) => spec.tag(),
            })
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn num_reused(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s, Slot::Reuse(_))).count()
    }

    pub fn num_new(&self) -> usize {
        self.len() - self.num_reused()
    }
}

/// Outcome of training one path on one problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Validation accuracy, the quantity every search maximises.
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub trained_path: Path,
    pub epochs_run: usize,
    pub val_loss: f64,
    /// Trial of the grid that produced these numbers.
    pub learning_rate: f64,
    pub restart: usize,
}

/// A trained path together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedPath {
    pub eval: EvalResult,
    pub modules: Vec<ModuleParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LibraryModule {
    pub module_id: ModuleId,
    pub layer_index: usize,
    pub params: ModuleParams,
    pub origin_problem: String,
    /// Position of the origin problem in the sequence (0-based).
    pub origin_index: usize,
    pub origin_train_accuracy: f64,
    pub input_model: Option<InputModel>,
    /// Inputs this module saw on its origin problem; `rows x input_dim`.
    pub probe_inputs: Option<Array2<f32>>,
}

impl LibraryModule {
    pub fn input_dim(&self) -> usize {
        self.params.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.params.output_dim
    }
}

/// The path chosen for an earlier problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub problem_id: String,
    pub problem_index: usize,
    pub task: TaskKind,
    pub path: Path,
    /// Library ids of the modules the path resolved to, one per layer.
    pub module_ids: Vec<ModuleId>,
    pub eval: EvalResult,
}

/// What [`Library::update`] records besides the modules themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateOptions {
    pub global_seed: u64,
    /// Maximum number of activations used to fit an input model.
    pub fit_samples: usize,
    /// Projection dimension of input models.
    pub projection_dim: usize,
    /// 1-based layer whose inputs are stored as probes.
    pub probe_layer: usize,
    pub probe_count: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Library {
    /// `layers[i]` holds the modules at layer `i + 1`, in insertion order.
    pub layers: Vec<Vec<LibraryModule>>,
    pub solutions: Vec<Solution>,
    /// Free-form settings persisted alongside the modules.
    pub settings: serde_json::Value,
}

impl Library {
    pub fn new(num_layers: usize) -> Self {
        Self {
            layers: vec![Vec::new(); num_layers],
            solutions: Vec::new(),
            settings: serde_json::Value::Null,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_modules(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_modules() == 0
    }

    /// Modules at `layer_index` (1-based) that accept `input_dim` inputs,
    /// ordered by origin problem.
    pub fn compatible_modules(&self, layer_index: usize, input_dim: usize) -> Vec<&LibraryModule> {
        self.layers
            .get(layer_index.wrapping_sub(1))
            .map(|layer| layer.iter().filter(|m| m.input_dim() == input_dim).collect())
            .unwrap_or_default()
    }

    pub fn module(&self, id: &str) -> Option<&LibraryModule> {
        self.layers.iter().flatten().find(|m| m.module_id == id)
    }

    pub fn get(&self, id: &str) -> Result<&LibraryModule> {
        self.module(id).ok_or_else(|| Error::UnknownModule(id.to_string()))
    }

    /// Parameters for every slot of `path`: frozen copies of reused
    /// modules and fresh initialisations for new ones.
    pub fn instantiate(&self, path: &Path, arch: &Architecture, key: &SeedKey) -> Result<Vec<ModuleParams>> {
        if path.len() != arch.num_layers() {
            return Err(Error::Shape(format!(
                "path has {} slots, architecture {} layers",
                path.len(),
                arch.num_layers()
            )));
        }
        path.slots
            .iter()
            .zip(&arch.layers)
            .map(|(slot, spec)| match slot {
                Slot::Reuse(id) => {
                    let m = self.get(id)?;
                    if m.layer_index != spec.layer_index
                        || m.input_dim() != spec.input_dim
                        || m.output_dim() != spec.output_dim
                    {
                        return Err(Error::Shape(format!(
                            "module {id} does not fit layer {}",
                            spec.layer_index
                        )));
                    }
                    let mut p = m.params.clone();
                    p.frozen = true;
                    Ok(p)
                }
                Slot::New(new_spec) => {
                    if new_spec != spec {
                        return Err(Error::Shape(format!(
                            "new slot at layer {} disagrees with the architecture",
                            spec.layer_index
                        )));
                    }
                    Ok(init_module(spec, key))
                }
            })
            .collect()
    }

    /// Adds the new modules of `trained` (frozen, with input models and
    /// probes) and records it as the solution of `data`.
    pub fn update(
        &mut self,
        trained: &TrainedPath,
        arch: &Architecture,
        data: &DataBundle,
        problem_index: usize,
        opts: &UpdateOptions,
    ) -> Result<()> {
        let path = &trained.eval.trained_path;
        if path.len() > self.num_layers() {
            return Err(Error::Shape("path longer than the library".into()));
        }
        let needs_inputs = path.slots.iter().any(|s| matches!(s, Slot::New(_)));
        let inputs = if needs_inputs {
            let rows = data.train.len().min(opts.fit_samples.max(opts.probe_count));
            collect_layer_inputs(&trained.modules, arch, &data.train, arch.num_layers(), rows)?
        } else {
            Vec::new()
        };
        let mut module_ids = Vec::with_capacity(path.len());
        let mut added = Vec::new();
        for (i, slot) in path.slots.iter().enumerate() {
            let layer_index = i + 1;
            match slot {
                Slot::Reuse(id) => module_ids.push(id.clone()),
                Slot::New(_) => {
                    let module_id = format!("{}-l{}", data.problem_id, layer_index);
                    if self.module(&module_id).is_some() {
                        return Err(Error::Sequence(format!("module {module_id} already exists")));
                    }
                    let h = &inputs[i];
                    let fit_rows = interleave_branches(h, arch, layer_index, opts.fit_samples);
                    let mut rng = projection_rng(opts.global_seed, layer_index, h.ncols());
                    let input_model = fit_input_model(fit_rows.view(), opts.projection_dim, &mut rng)?;
                    let probe_inputs = (layer_index == opts.probe_layer)
                        .then(|| h.slice(s![..opts.probe_count.min(h.nrows()), ..]).to_owned());
                    let mut params = trained.modules[i].clone();
                    params.frozen = true;
                    added.push(LibraryModule {
                        module_id: module_id.clone(),
                        layer_index,
                        params,
                        origin_problem: data.problem_id.clone(),
                        origin_index: problem_index,
                        origin_train_accuracy: trained.eval.train_accuracy,
                        input_model: Some(input_model),
                        probe_inputs,
                    });
                    module_ids.push(module_id);
                }
            }
        }
        for m in added {
            self.layers[m.layer_index - 1].push(m);
        }
        self.solutions.push(Solution {
            problem_id: data.problem_id.clone(),
            problem_index,
            task: data.task,
            path: path.clone(),
            module_ids,
            eval: trained.eval.clone(),
        });
        Ok(())
    }
}

/// Projection stream shared by every input model fitted at one layer and
/// input width, so competing modules are scored in the same space.
pub fn projection_rng(global_seed: u64, layer_index: usize, input_dim: usize) -> ChaCha8Rng {
    SeedKey::new(global_seed, "input-model", format!("l{layer_index}-v{input_dim}")).stream("projection", 0)
}

/// Encoder inputs of pair problems are stored first-branch-then-second;
/// alternate the two so a truncated sample still covers both branches.
fn interleave_branches(h: &Array2<f32>, arch: &Architecture, layer_index: usize, limit: usize) -> Array2<f32> {
    let stacked = arch.task == TaskKind::Composite && layer_index <= arch.encoder_depth;
    let n = h.nrows();
    let order: Vec<usize> = if stacked {
        let half = n / 2;
        (0..half).flat_map(|r| [r, half + r]).take(limit).collect()
    } else {
        (0..n.min(limit)).collect()
    };
    nn::take_rows(h, &order)
}

/// Trains `path` on `data` with the path's own seed and packages the result.
/// Training settings tried for every path: each learning rate from each of
/// `restarts` initialisations. The trial with the best validation accuracy
/// (then lower validation loss, then earliest) is kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialGrid {
    pub learning_rates: Vec<f64>,
    pub restarts: usize,
}

impl Default for TrialGrid {
    fn default() -> Self {
        Self {
            learning_rates: vec![3e-3, 1e-2],
            restarts: 3,
        }
    }
}

impl TrialGrid {
    /// A single trial using the learning rate of `hyper`.
    pub fn single(hyper: &TrainHyper) -> Self {
        Self {
            learning_rates: vec![hyper.learning_rate],
            restarts: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.learning_rates.len() * self.restarts
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("the trial grid needs a learning rate and a restart".into()));
        }
        if self.learning_rates.iter().any(|lr| !(*lr > 0.0 && lr.is_finite())) {
            return Err(Error::InvalidArgument("learning rates must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Seed key of restart `restart` of a path; restart 0 uses the plain
/// path signature.
fn trial_key(global_seed: u64, problem_id: &str, path: &Path, restart: usize) -> SeedKey {
    let sig = path.signature();
    let sig = if restart == 0 { sig } else { format!("{sig}#{restart}") };
    SeedKey::new(global_seed, problem_id, sig)
}

/// Trains `path` under every trial of `grid` and keeps the best.
pub fn train_and_evaluate(
    path: &Path,
    library: &Library,
    arch: &Architecture,
    data: &DataBundle,
    hyper: &TrainHyper,
    grid: &TrialGrid,
    global_seed: u64,
) -> Result<TrainedPath> {
    grid.validate()?;
    let trials: Vec<(usize, f64)> = (0..grid.restarts)
        .flat_map(|r| grid.learning_rates.iter().map(move |&lr| (r, lr)))
        .collect();
    let runs = trials
        .par_iter()
        .map(|&(restart, learning_rate)| {
            let key = trial_key(global_seed, &data.problem_id, path, restart);
            let modules = library.instantiate(path, arch, &key)?;
            let hyper = TrainHyper {
                learning_rate,
                ..hyper.clone()
            };
            let trained = nn::train_network(modules, arch, data, &hyper.with_key(key))?;
            Ok(TrainedPath {
                eval: EvalResult {
                    val_accuracy: trained.val.accuracy,
                    test_accuracy: trained.test.accuracy,
                    train_accuracy: trained.train.accuracy,
                    trained_path: path.clone(),
                    epochs_run: trained.epochs_run,
                    val_loss: trained.val.loss,
                    learning_rate,
                    restart,
                },
                modules: trained.modules,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in runs.iter().enumerate().skip(1) {
        let (a, b) = (&r.eval, &runs[best].eval);
        if a.val_accuracy > b.val_accuracy || (a.val_accuracy == b.val_accuracy && a.val_loss < b.val_loss) {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("grid is nonempty"))
}
