//! Small modular feed-forward networks.
//!
//! A network is a list of dense modules. Pair problems run the first
//! `encoder_depth` modules on both inputs with shared weights, concatenate
//! the two branch outputs and feed the result through the head modules.
//! Single-input problems use only the encoder.

mod net;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use net::forward;
pub(crate) use net::{join, Net};
pub(crate) use train::take_rows;
pub use train::{
    collect_layer_inputs, evaluate, train_network, SplitMetrics, TrainConfig, TrainHyper, TrainedNetwork,
};

use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::seed::SeedKey;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softmax,
    Sigmoid,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    /// 1-based position in the path.
    pub layer_index: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    /// True for encoder layers, which see both inputs of a pair.
    pub shared_across_branches: bool,
}

impl LayerSpec {
    /// Short form used in path signatures, e.g. `n16x32`.
    pub fn tag(&self) -> String {
        format!("n{}x{}", self.input_dim, self.output_dim)
    }
}

/// Layer layout of the networks built for one problem.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: Vec<LayerSpec>,
    pub encoder_depth: usize,
    pub task: TaskKind,
}

/// Shape parameters from which per-problem architectures are derived.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Number of modules in a pair-problem network.
    pub num_layers: usize,
    pub width: usize,
    /// Width of the softmax at the end of each encoder branch.
    pub latent_dim: usize,
    /// Defaults to `num_layers - 2` for up to six layers and
    /// `num_layers - 3` above that.
    pub encoder_depth: Option<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            num_layers: 6,
            width: 32,
            latent_dim: 8,
            encoder_depth: None,
        }
    }
}

impl ArchConfig {
    pub fn encoder_depth(&self) -> usize {
        self.encoder_depth.unwrap_or(if self.num_layers <= 6 {
            self.num_layers.saturating_sub(2)
        } else {
            self.num_layers - 3
        })
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.encoder_depth();
        if self.width == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidArgument("width and latent_dim must be positive".into()));
        }
        if e == 0 || e >= self.num_layers {
            return Err(Error::InvalidArgument(format!(
                "encoder depth {e} must lie in [1, {})",
                self.num_layers
            )));
        }
        Ok(())
    }

    /// Architecture for a problem with inputs of `input_dim` features.
    pub fn build(&self, input_dim: usize, task: TaskKind) -> Result<Architecture> {
        self.validate()?;
        let e = self.encoder_depth();
        let total = match task {
            TaskKind::Composite => self.num_layers,
            TaskKind::Lower => e,
        };
        let mut layers = Vec::with_capacity(total);
        for i in 1..=total {
            let (input_dim, output_dim, activation) = if i <= e {
                let inp = if i == 1 { input_dim } else { self.width };
                if i == e {
                    (inp, self.latent_dim, Activation::Softmax)
                } else {
                    (inp, self.width, Activation::Relu)
                }
            } else {
                let inp = if i == e + 1 { 2 * self.latent_dim } else { self.width };
                if i == total {
                    (inp, 1, Activation::Sigmoid)
                } else {
                    (inp, self.width, Activation::Relu)
                }
            };
            layers.push(LayerSpec {
                layer_index: i,
                input_dim,
                output_dim,
                activation,
                shared_across_branches: i <= e,
            });
        }
        let arch = Architecture {
            layers,
            encoder_depth: e,
            task,
        };
        arch.validate()?;
        Ok(arch)
    }
}

impl Architecture {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("architecture has no layers".into()));
        }
        let e = self.encoder_depth;
        match self.task {
            TaskKind::Lower if e != self.layers.len() => {
                return Err(Error::Shape("single-input networks consist of the encoder only".into()))
            }
            TaskKind::Composite if e >= self.layers.len() || e == 0 => {
                return Err(Error::Shape("pair networks need encoder and head layers".into()))
            }
            _ => {}
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            let expected = if self.task == TaskKind::Composite && i + 1 == e {
                2 * pair[0].output_dim
            } else {
                pair[0].output_dim
            };
            if pair[1].input_dim != expected {
                return Err(Error::Shape(format!(
                    "layer {} expects {} inputs, previous layer provides {}",
                    pair[1].layer_index, pair[1].input_dim, expected
                )));
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.layer_index != i + 1 {
                return Err(Error::Shape(format!("layer {} has index {}", i + 1, layer.layer_index)));
            }
            if layer.shared_across_branches != (i < e) {
                return Err(Error::Shape(format!(
                    "layer {} sharing flag disagrees with the encoder boundary",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Weights of one dense module, row-major `output_dim x input_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleParams {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
    pub frozen: bool,
}

impl ModuleParams {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            weights: vec![0.0; input_dim * output_dim],
            biases: vec![0.0; output_dim],
            frozen: false,
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for w in self.weights.iter().chain(&self.biases) {
            h.update(w.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Fresh parameters for `spec`: weights uniform in `±sqrt(6 / fan_in)` for
/// ReLU layers and `±sqrt(3 / fan_in)` otherwise, zero biases.
pub fn init_module(spec: &LayerSpec, seed_key: &SeedKey) -> ModuleParams {
    let fan_in = spec.input_dim as f32;
    let gain = if spec.activation == Activation::Relu { 6.0 } else { 3.0 };
    let bound = (gain / fan_in).sqrt();
    let mut rng = seed_key.init_stream(spec.layer_index);
    let weights = (0..spec.input_dim * spec.output_dim)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    ModuleParams {
        input_dim: spec.input_dim,
        output_dim: spec.output_dim,
        weights,
        biases: vec![0.0; spec.output_dim],
        frozen: false,
    }
}
