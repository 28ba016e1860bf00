//! Perceptual-transfer search: greedy growth of a reused prefix, scored by
//! how well each module's input model explains the new problem's data.

mod model;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use model::{fit_input_model, InputModel};

use crate::data::{DataBundle, Split, TaskKind};
use crate::error::{Error, Result};
use crate::library::{Library, LibraryModule, ModuleId, Path, TrainedPath};
use crate::nn::{self, Architecture, Net};

/// Softmax prior over the modules of one layer, driven by the training
/// accuracy each module's origin network reached.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PtPrior {
    pub temperature: f64,
}

impl PtPrior {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self { temperature })
    }

    /// Log prior probabilities of `modules`, in order.
    pub fn log_probs(&self, modules: &[&LibraryModule]) -> Result<Vec<f64>> {
        let accs: Vec<f64> = modules.iter().map(|m| m.origin_train_accuracy).collect();
        log_prior_probs(&accs, self.temperature)
    }
}

fn log_prior_probs(accuracies: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if accuracies.is_empty() {
        return Err(Error::InvalidArgument("prior over an empty module set".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    let logits: Vec<f64> = accuracies.iter().map(|a| a / temperature).collect();
    let lse = log_sum_exp(&logits);
    Ok(logits.iter().map(|l| l - lse).collect())
}

/// `exp(A_j / T)` normalised over the given modules.
pub fn prior_probs(accuracies: &[f64], temperature: f64) -> Result<Vec<f64>> {
    Ok(log_prior_probs(accuracies, temperature)?.into_iter().map(f64::exp).collect())
}

/// Temperature at which an accuracy gap of `delta` is worth a
/// log-likelihood difference of `xi`.
pub fn temperature_from(delta: f64, xi: f64) -> Result<f64> {
    if !(xi > 0.0) {
        return Err(Error::InvalidArgument(format!("xi must be positive, got {xi}")));
    }
    let t = delta / xi;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "delta {delta} gives temperature {t}; the prior needs a positive temperature"
        )));
    }
    Ok(t)
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixScore {
    pub prefix: Vec<ModuleId>,
    /// Unnormalised log posterior; the sum of `per_layer_terms`.
    pub log_posterior: f64,
    pub per_layer_terms: Vec<f64>,
}

/// Per-layer evidence for every compatible module at one layer.
struct LayerEvidence {
    /// Summed log-likelihood of the layer inputs under each module.
    log_lik: Vec<f64>,
    log_prior: Vec<f64>,
    /// Summed log normaliser `sum_rows logsumexp_m (log p(h|m) + log p(m))`.
    log_norm: f64,
}

fn layer_evidence(candidates: &[&LibraryModule], h: ArrayView2<f32>, prior: &PtPrior) -> Result<LayerEvidence> {
    let per_row: Vec<Vec<f64>> = candidates
        .iter()
        .map(|m| {
            m.input_model
                .as_ref()
                .ok_or_else(|| Error::MissingInputModel(m.module_id.clone()))?
                .log_density_rows(h)
        })
        .collect::<Result<_>>()?;
    let log_prior = prior.log_probs(candidates)?;
    let mut log_norm = 0.0;
    let mut joint = vec![0.0; candidates.len()];
    for r in 0..h.nrows() {
        for (c, ll) in per_row.iter().enumerate() {
            joint[c] = ll[r] + log_prior[c];
        }
        log_norm += log_sum_exp(&joint);
    }
    Ok(LayerEvidence {
        log_lik: per_row.iter().map(|ll| ll.iter().sum()).collect(),
        log_prior,
        log_norm,
    })
}

impl LayerEvidence {
    /// Contribution of candidate `c` at 1-based `layer`; layer 1 has no
    /// normaliser because the raw inputs are observed.
    fn term(&self, c: usize, layer: usize) -> f64 {
        let norm = if layer >= 2 { self.log_norm } else { 0.0 };
        self.log_lik[c] - norm + self.log_prior[c]
    }
}

/// Applies one module (1-based `layer`) to the stacked/joined activations `h`.
fn advance(module: &LibraryModule, arch: &Architecture, layer: usize, h: Array2<f32>) -> Array2<f32> {
    let act = arch.layers[layer - 1].activation;
    let params = std::slice::from_ref(&module.params);
    let net = Net::from_params(params, &[act], 1, false);
    let out = net.forward_from(0, h).outputs.pop().expect("one layer");
    if arch.task == TaskKind::Composite && layer == arch.encoder_depth && layer < arch.num_layers() {
        nn::join(&out)
    } else {
        out
    }
}

fn stacked_inputs(split: &Split) -> Array2<f32> {
    match &split.x2 {
        Some(x2) => ndarray::concatenate(ndarray::Axis(0), &[split.x1.view(), x2.view()]).expect("same widths"),
        None => split.x1.clone(),
    }
}

/// Log posterior of a reused prefix given the rows of `inputs`.
///
/// Per-example terms are summed over rows (both inputs of a pair count as
/// observations at the encoder layers); the log prior of each module is
/// added once.
pub fn score_prefix(
    prefix: &[&LibraryModule],
    inputs: &Split,
    prior: &PtPrior,
    library: &Library,
    arch: &Architecture,
) -> Result<PrefixScore> {
    if prefix.is_empty() || prefix.len() > arch.num_layers() {
        return Err(Error::InvalidArgument(format!("prefix length {} out of range", prefix.len())));
    }
    let mut h = stacked_inputs(inputs);
    let mut terms = Vec::with_capacity(prefix.len());
    for (i, module) in prefix.iter().enumerate() {
        let layer = i + 1;
        if module.layer_index != layer {
            return Err(Error::Shape(format!("module {} does not sit at layer {layer}", module.module_id)));
        }
        let candidates = library.compatible_modules(layer, h.ncols());
        let c = candidates
            .iter()
            .position(|m| m.module_id == module.module_id)
            .ok_or_else(|| Error::Shape(format!("module {} cannot take the layer-{layer} inputs", module.module_id)))?;
        let ev = layer_evidence(&candidates, h.view(), prior)?;
        terms.push(ev.term(c, layer));
        if layer < prefix.len() {
            h = advance(module, arch, layer, h);
        }
    }
    Ok(PrefixScore {
        prefix: prefix.iter().map(|m| m.module_id.clone()).collect(),
        log_posterior: terms.iter().sum(),
        per_layer_terms: terms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PtConfig {
    pub temperature: f64,
    /// Number of training rows used for scoring.
    pub score_samples: usize,
}

impl Default for PtConfig {
    fn default() -> Self {
        Self {
            temperature: 0.001,
            score_samples: 1000,
        }
    }
}

/// Every path the search trained, in prefix-length order.
#[derive(Clone, Debug)]
pub struct PtSearch {
    pub scores: Vec<PrefixScore>,
    pub candidates: Vec<TrainedPath>,
    /// Index of the candidate with the highest validation accuracy (lower
    /// validation loss on ties).
    pub best: usize,
}

impl PtSearch {
    pub fn best(&self) -> &TrainedPath {
        &self.candidates[self.best]
    }
}

/// Greedily picks the highest-scoring module at each layer; one path per
/// prefix length. Returns the prefixes with their scores, stopping at the
/// first layer without a compatible module.
pub fn greedy_prefixes(
    library: &Library,
    arch: &Architecture,
    inputs: &Split,
    prior: &PtPrior,
) -> Result<Vec<PrefixScore>> {
    let mut out = Vec::new();
    let mut h = stacked_inputs(inputs);
    let mut prefix: Vec<ModuleId> = Vec::new();
    let mut terms = Vec::new();
    for layer in 1..=arch.num_layers() {
        let candidates = library.compatible_modules(layer, h.ncols());
        if candidates.is_empty() {
            break;
        }
        let ev = layer_evidence(&candidates, h.view(), prior)?;
        let mut best = 0;
        for c in 1..candidates.len() {
            if ev.term(c, layer) > ev.term(best, layer) {
                best = c;
            }
        }
        terms.push(ev.term(best, layer));
        prefix.push(candidates[best].module_id.clone());
        out.push(PrefixScore {
            prefix: prefix.clone(),
            log_posterior: terms.iter().sum(),
            per_layer_terms: terms.clone(),
        });
        if layer < arch.num_layers() {
            h = advance(candidates[best], arch, layer, h);
        }
    }
    Ok(out)
}

/// Greedy perceptual-transfer search. `None` when no layer-1 module fits
/// the problem (in particular for an empty library).
pub fn find_best_pt_path<F>(
    library: &Library,
    arch: &Architecture,
    data: &DataBundle,
    cfg: &PtConfig,
    train: F,
) -> Result<Option<PtSearch>>
where
    F: Fn(&Path) -> Result<TrainedPath> + Sync,
{
    let prior = PtPrior::new(cfg.temperature)?;
    let inputs = data.train.head(cfg.score_samples);
    let scores = greedy_prefixes(library, arch, &inputs, &prior)?;
    if scores.is_empty() {
        return Ok(None);
    }
    let paths: Vec<Path> = scores.iter().map(|s| Path::with_prefix(&s.prefix, arch)).collect();
    let candidates = paths.par_iter().map(&train).collect::<Result<Vec<_>>>()?;
    let best = argmax_val(&candidates);
    Ok(Some(PtSearch {
        scores,
        candidates,
        best,
    }))
}

/// Index of the highest validation accuracy, then lowest validation loss,
/// earliest on full ties. Small validation sets make accuracy ties common.
pub(crate) fn argmax_val(candidates: &[TrainedPath]) -> usize {
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        let (a, b) = (&c.eval, &candidates[best].eval);
        if a.val_accuracy > b.val_accuracy || (a.val_accuracy == b.val_accuracy && a.val_loss < b.val_loss) {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_examples() {
        let p = prior_probs(&[0.9, 0.8], 0.1).unwrap();
        assert!((p[0] - 0.7310585786300049).abs() < 1e-12);
        assert!((p[1] - 0.2689414213699951).abs() < 1e-12);
        let u = prior_probs(&[0.5, 0.5, 0.5], 0.001).unwrap();
        assert!(u.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
        assert!(prior_probs(&[], 1.0).is_err());
        // large accuracy gaps at low temperature stay finite
        let sharp = prior_probs(&[1.0, 0.0], 0.001).unwrap();
        assert_eq!(sharp[0], 1.0);
        assert!((sharp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn trained(val_accuracy: f64, val_loss: f64) -> TrainedPath {
        TrainedPath {
            eval: crate::library::EvalResult {
                val_accuracy,
                test_accuracy: 0.0,
                train_accuracy: 0.0,
                trained_path: Path { slots: Vec::new() },
                epochs_run: 0,
                val_loss,
                learning_rate: 0.01,
                restart: 0,
            },
            modules: Vec::new(),
        }
    }

    #[test]
    fn argmax_breaks_accuracy_ties_by_loss_then_order() {
        let c = [trained(0.8, 0.1), trained(1.0, 0.4), trained(0.9, 0.0), trained(1.0, 0.2), trained(1.0, 0.2)];
        assert_eq!(argmax_val(&c), 3);
        assert_eq!(argmax_val(&c[..2]), 1);
        assert_eq!(argmax_val(&[trained(0.5, 0.3), trained(0.5, 0.3)]), 0);
    }

    #[test]
    fn temperature_examples() {
        assert!((temperature_from(0.01, 10.0).unwrap() - 0.001).abs() < 1e-15);
        assert!((temperature_from(0.6248, 1.0).unwrap() - 0.6248).abs() < 1e-15);
        assert!(temperature_from(0.0, 1.0).is_err());
        assert!(temperature_from(0.1, 0.0).is_err());
        assert!(temperature_from(0.1, -2.0).is_err());
    }
}
