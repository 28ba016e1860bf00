//! Minibatch AdamW training with early stopping, and canonical evaluation.

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{loss_and_grad, loss_and_hits, Grad, Net};
use super::{Architecture, ModuleParams};
use crate::data::{DataBundle, Split, TaskKind};
use crate::error::{Error, Result};
use crate::seed::SeedKey;

/// Rows per forward chunk in [`evaluate`]. Fixed so that re-evaluating a
/// network always performs the same floating-point operations.
const EVAL_CHUNK: usize = 512;

/// Optimiser and stopping hyperparameters shared by every training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many updates without a validation improvement.
    pub patience_updates: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            weight_decay: 0.01,
            batch_size: 32,
            max_epochs: 100,
            patience_updates: 1000,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience_updates == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, max_epochs and patience_updates must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_key(&self, seed_key: SeedKey) -> TrainConfig {
        TrainConfig {
            hyper: self.clone(),
            seed_key,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub hyper: TrainHyper,
    pub seed_key: SeedKey,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitMetrics {
    pub accuracy: f64,
    /// Mean cross-entropy.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedNetwork {
    pub modules: Vec<ModuleParams>,
    pub train: SplitMetrics,
    pub val: SplitMetrics,
    pub test: SplitMetrics,
    pub epochs_run: usize,
    pub updates: usize,
}

fn net_for<'a>(modules: &'a [ModuleParams], arch: &Architecture) -> Net<'a, f32> {
    let acts: Vec<_> = arch.layers.iter().map(|l| l.activation).collect();
    Net::from_params(modules, &acts, arch.encoder_depth, arch.task == TaskKind::Composite)
}

fn check_modules(modules: &[ModuleParams], arch: &Architecture, split: &Split) -> Result<()> {
    if modules.len() != arch.num_layers() {
        return Err(Error::Shape(format!(
            "{} modules for a {}-layer architecture",
            modules.len(),
            arch.num_layers()
        )));
    }
    for (m, l) in modules.iter().zip(&arch.layers) {
        if m.input_dim != l.input_dim || m.output_dim != l.output_dim {
            return Err(Error::Shape(format!(
                "module at layer {} is {}x{}, expected {}x{}",
                l.layer_index, m.input_dim, m.output_dim, l.input_dim, l.output_dim
            )));
        }
    }
    if split.input_dim() != arch.input_dim() {
        return Err(Error::Shape(format!(
            "data has {} features, layer 1 expects {}",
            split.input_dim(),
            arch.input_dim()
        )));
    }
    if (arch.task == TaskKind::Composite) != split.x2.is_some() {
        return Err(Error::Shape("pair structure of data and architecture disagree".into()));
    }
    Ok(())
}

fn stacked_rows(net: &Net<f32>, split: &Split, lo: usize, hi: usize) -> Array2<f32> {
    net.stack_inputs(
        split.x1.slice(s![lo..hi, ..]),
        split.x2.as_ref().map(|x| x.slice(s![lo..hi, ..])),
    )
}

/// Accuracy and mean loss of a full network on `split`.
pub fn evaluate(modules: &[ModuleParams], arch: &Architecture, split: &Split) -> Result<SplitMetrics> {
    check_modules(modules, arch, split)?;
    if split.is_empty() {
        return Ok(SplitMetrics { accuracy: 0.0, loss: 0.0 });
    }
    let net = net_for(modules, arch);
    let out_act = arch.layers.last().expect("nonempty").activation;
    let (mut loss, mut hits) = (0.0, 0usize);
    for lo in (0..split.len()).step_by(EVAL_CHUNK) {
        let hi = (lo + EVAL_CHUNK).min(split.len());
        let trace = net.forward_from(0, stacked_rows(&net, split, lo, hi));
        let (l, h) = loss_and_hits(out_act, &trace.logits, &split.labels[lo..hi]);
        loss += l;
        hits += h;
    }
    let n = split.len() as f64;
    Ok(SplitMetrics {
        accuracy: hits as f64 / n,
        loss: loss / n,
    })
}

/// Inputs seen by layers `0..upto` when the network runs on the first
/// `max_rows` rows of `split`. Encoder inputs of pair problems hold both
/// branches (first inputs, then second inputs).
pub fn collect_layer_inputs(
    modules: &[ModuleParams],
    arch: &Architecture,
    split: &Split,
    upto: usize,
    max_rows: usize,
) -> Result<Vec<Array2<f32>>> {
    let net = net_for(modules, arch);
    let n = split.len().min(max_rows);
    Ok(net.layer_inputs(stacked_rows(&net, split, 0, n), upto))
}

/// Activations feeding layer `start` for a whole split, in the layout the
/// network uses internally.
fn prefix_cache(net: &Net<f32>, split: &Split, start: usize) -> Array2<f32> {
    let mut layers = net.layer_inputs(stacked_rows(net, split, 0, split.len()), start + 1);
    layers.pop().expect("layer input present")
}

/// Gathers batch rows from a cache; stacked caches hold `2n` rows.
fn gather(cache: &Array2<f32>, idx: &[usize], stacked: bool, n: usize) -> Array2<f32> {
    let rows = if stacked { 2 * idx.len() } else { idx.len() };
    let mut out = Array2::zeros((rows, cache.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&cache.row(i));
        if stacked {
            out.row_mut(idx.len() + r).assign(&cache.row(n + i));
        }
    }
    out
}

struct AdamState {
    m: Vec<Option<Grad<f32>>>,
    v: Vec<Option<Grad<f32>>>,
    t: i32,
}

impl AdamState {
    fn new(modules: &[ModuleParams]) -> Self {
        let zeros = |m: &ModuleParams| {
            (!m.frozen).then(|| {
                (
                    Array2::zeros((m.output_dim, m.input_dim)),
                    Array1::zeros(m.output_dim),
                )
            })
        };
        Self {
            m: modules.iter().map(zeros).collect(),
            v: modules.iter().map(zeros).collect(),
            t: 0,
        }
    }

    fn step(&mut self, modules: &mut [ModuleParams], grads: &[Option<Grad<f32>>], hyper: &TrainHyper) {
        const B1: f32 = 0.9;
        const B2: f32 = 0.999;
        const EPS: f32 = 1e-8;
        self.t += 1;
        let lr = hyper.learning_rate as f32;
        let decay = 1.0 - lr * hyper.weight_decay as f32;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for (i, module) in modules.iter_mut().enumerate() {
            let (Some((gw, gb)), Some((mw, mb)), Some((vw, vb))) = (&grads[i], &mut self.m[i], &mut self.v[i]) else {
                continue;
            };
            let update = |p: &mut f32, g: f32, m: &mut f32, v: &mut f32| {
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p = *p * decay - lr * mh / (vh.sqrt() + EPS);
            };
            for (((p, &g), m), v) in module
                .weights
                .iter_mut()
                .zip(gw.iter())
                .zip(mw.iter_mut())
                .zip(vw.iter_mut())
            {
                update(p, g, m, v);
            }
            for (((p, &g), m), v) in module
                .biases
                .iter_mut()
                .zip(gb.iter())
                .zip(mb.iter_mut())
                .zip(vb.iter_mut())
            {
                update(p, g, m, v);
            }
        }
    }
}

/// Trains the non-frozen modules and returns the parameters with the best
/// validation accuracy seen at an epoch boundary (ties go to the lower
/// validation loss). Frozen modules are never written to. A network with
/// no trainable module is only evaluated.
pub fn train_network(
    mut modules: Vec<ModuleParams>,
    arch: &Architecture,
    data: &DataBundle,
    cfg: &TrainConfig,
) -> Result<TrainedNetwork> {
    let hyper = &cfg.hyper;
    hyper.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    check_modules(&modules, arch, &data.train)?;
    check_modules(&modules, arch, &data.val)?;
    check_modules(&modules, arch, &data.test)?;

    let mut epochs_run = 0;
    let mut updates = 0;
    if let Some(start) = modules.iter().position(|m| !m.frozen) {
        let want: Vec<bool> = modules.iter().map(|m| !m.frozen).collect();
        let pairs = arch.task == TaskKind::Composite;
        let stacked = pairs && start < arch.encoder_depth;
        let out_act = arch.layers.last().expect("nonempty").activation;
        let (train_cache, val_cache) = {
            let net = net_for(&modules, arch);
            (prefix_cache(&net, &data.train, start), prefix_cache(&net, &data.val, start))
        };
        let n = data.train.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = cfg.seed_key.shuffle_stream();
        let mut adam = AdamState::new(&modules);
        let mut best: Option<(f64, f64, Vec<ModuleParams>)> = None;
        let mut best_loss_seen = f64::INFINITY;
        let mut since_improvement = 0usize;

        'epochs: for epoch in 0..hyper.max_epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(hyper.batch_size) {
                let input = gather(&train_cache, batch, stacked, n);
                let labels: Vec<u8> = batch.iter().map(|&i| data.train.labels[i]).collect();
                let grads = {
                    let net = net_for(&modules, arch);
                    let trace = net.forward_from(start, input);
                    let (loss, dz) = loss_and_grad(out_act, &trace.logits, &labels);
                    if !loss.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            epoch,
                            update: updates,
                            path: cfg.seed_key.path_signature.clone(),
                        });
                    }
                    net.backward(&trace, dz, &want)
                };
                adam.step(&mut modules, &grads, hyper);
                updates += 1;
                since_improvement += 1;
            }
            epochs_run = epoch + 1;

            let (val_acc, val_loss) = if data.val.is_empty() {
                (0.0, 0.0)
            } else {
                let net = net_for(&modules, arch);
                let trace = net.forward_from(start, val_cache.clone());
                let (loss, hits) = loss_and_hits(out_act, &trace.logits, &data.val.labels);
                let nv = data.val.len() as f64;
                (hits as f64 / nv, loss / nv)
            };
            if !val_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    update: updates,
                    path: cfg.seed_key.path_signature.clone(),
                });
            }
            let better = match &best {
                None => true,
                Some((acc, loss, _)) => val_acc > *acc || (val_acc == *acc && val_loss < *loss),
            };
            let improved = best.as_ref().is_none_or(|(acc, _, _)| val_acc > *acc) || val_loss < best_loss_seen;
            if better {
                best = Some((val_acc, val_loss, modules.clone()));
            }
            if improved {
                since_improvement = 0;
            }
            best_loss_seen = best_loss_seen.min(val_loss);
            if since_improvement >= hyper.patience_updates {
                break 'epochs;
            }
        }
        if let Some((_, _, snapshot)) = best {
            modules = snapshot;
        }
    }

    let train = evaluate(&modules, arch, &data.train)?;
    let val = evaluate(&modules, arch, &data.val)?;
    let test = evaluate(&modules, arch, &data.test)?;
    Ok(TrainedNetwork {
        modules,
        train,
        val,
        test,
        epochs_run,
        updates,
    })
}

/// Stacks per-example row selections; exposed for the searches, which
/// score subsamples of the training inputs.
pub(crate) fn take_rows(x: &Array2<f32>, idx: &[usize]) -> Array2<f32> {
    x.select(Axis(0), idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_module, Activation, LayerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_layer_arch() -> Architecture {
        Architecture {
            layers: vec![
                LayerSpec {
                    layer_index: 1,
                    input_dim: 2,
                    output_dim: 8,
                    activation: Activation::Relu,
                    shared_across_branches: true,
                },
                LayerSpec {
                    layer_index: 2,
                    input_dim: 8,
                    output_dim: 2,
                    activation: Activation::Softmax,
                    shared_across_branches: true,
                },
            ],
            encoder_depth: 2,
            task: TaskKind::Lower,
        }
    }

    /// Two classes on either side of the line x0 + 2 x1 = 0.3, with a margin.
    fn separable(n: usize, seed: u64) -> Split {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        while labels.len() < n {
            let a: f32 = rng.random_range(-1.0..1.0);
            let b: f32 = rng.random_range(-1.0..1.0);
            let s = a + 2.0 * b - 0.3;
            if s.abs() < 0.2 {
                continue;
            }
            rows.extend([a, b]);
            labels.push(u8::from(s > 0.0));
        }
        Split::new(Array2::from_shape_vec((n, 2), rows).unwrap(), None, labels).unwrap()
    }

    /// Perceptron run to convergence: terminates only if the labels are
    /// linearly separable.
    fn perceptron_separates(split: &Split) -> bool {
        let mut w = [0f64; 3];
        for _ in 0..10_000 {
            let mut mistakes = 0;
            for (r, &y) in split.labels.iter().enumerate() {
                let x = [split.x1[[r, 0]] as f64, split.x1[[r, 1]] as f64, 1.0];
                let t = if y == 1 { 1.0 } else { -1.0 };
                let s: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
                if s * t <= 0.0 {
                    mistakes += 1;
                    for k in 0..3 {
                        w[k] += t * x[k];
                    }
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    fn bundle() -> DataBundle {
        DataBundle {
            problem_id: "toy".into(),
            task: TaskKind::Lower,
            train: separable(200, 1),
            val: separable(100, 2),
            test: separable(100, 3),
        }
    }

    fn fresh(arch: &Architecture, key: &SeedKey) -> Vec<ModuleParams> {
        arch.layers.iter().map(|l| init_module(l, key)).collect()
    }

    #[test]
    fn separable_toy_reaches_full_validation_accuracy() {
        let data = bundle();
        let all = Split::new(
            ndarray::concatenate(Axis(0), &[data.train.x1.view(), data.val.x1.view()]).unwrap(),
            None,
            [data.train.labels.clone(), data.val.labels.clone()].concat(),
        )
        .unwrap();
        assert!(perceptron_separates(&all));
        let arch = two_layer_arch();
        let key = SeedKey::new(0, "toy", "n2x8-n8x2");
        let hyper = TrainHyper {
            learning_rate: 1e-2,
            max_epochs: 200,
            patience_updates: 100_000,
            ..Default::default()
        };
        let out = train_network(fresh(&arch, &key), &arch, &data, &hyper.with_key(key)).unwrap();
        assert_eq!(out.val.accuracy, 1.0);
        assert!(out.epochs_run <= 200);
    }

    #[test]
    fn frozen_modules_are_untouched_and_runs_repeat() {
        let data = bundle();
        let arch = two_layer_arch();
        let key = SeedKey::new(4, "toy", "sig");
        let mut modules = fresh(&arch, &key);
        modules[0].frozen = true;
        let before = modules[0].checksum();
        let cfg = TrainHyper { max_epochs: 5, ..Default::default() }.with_key(key);
        let a = train_network(modules.clone(), &arch, &data, &cfg).unwrap();
        let b = train_network(modules, &arch, &data, &cfg).unwrap();
        assert_eq!(a.modules[0].checksum(), before);
        assert_ne!(a.modules[1].checksum(), fresh(&arch, &cfg.seed_key)[1].checksum());
        assert_eq!(a, b);
    }

    #[test]
    fn all_frozen_is_evaluation_only() {
        let data = bundle();
        let arch = two_layer_arch();
        let key = SeedKey::new(4, "toy", "sig");
        let mut modules = fresh(&arch, &key);
        for m in &mut modules {
            m.frozen = true;
        }
        let out = train_network(modules.clone(), &arch, &data, &TrainHyper::default().with_key(key)).unwrap();
        assert_eq!(out.epochs_run, 0);
        assert_eq!(out.modules, modules);
        assert_eq!(out.test, evaluate(&modules, &arch, &data.test).unwrap());
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let mut data = bundle();
        data.train = data.train.head(0);
        let arch = two_layer_arch();
        let key = SeedKey::new(0, "toy", "s");
        let err = train_network(fresh(&arch, &key), &arch, &data, &TrainHyper::default().with_key(key));
        assert!(matches!(err, Err(Error::EmptyTrainingSet)));
    }

    #[test]
    fn diverging_training_reports_non_finite_loss() {
        let data = bundle();
        let arch = two_layer_arch();
        let key = SeedKey::new(0, "toy", "s");
        let mut modules = fresh(&arch, &key);
        modules[1].weights[0] = f32::NAN;
        let err = train_network(modules, &arch, &data, &TrainHyper::default().with_key(key));
        assert!(matches!(err, Err(Error::NonFiniteLoss { .. })), "{err:?}");
    }
}
