#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use picle_core::bench::{generate_problem, realize_sequence, Pattern, SequenceSpec, SizeTable, SizeTriple};
use picle_core::data::DataBundle;
use picle_core::engine::{EngineConfig, Mode};
use picle_core::library::TrialGrid;
use picle_core::nn::{ModuleParams, TrainHyper};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Engine settings small enough for unit-scale tests.
pub fn fast_config(mode: Mode) -> EngineConfig {
    EngineConfig {
        mode,
        train: TrainHyper {
            max_epochs: 6,
            ..TrainHyper::default()
        },
        trials: TrialGrid {
            learning_rates: vec![1e-2],
            restarts: 1,
        },
        fit_samples: 400,
        score_samples: 200,
        ..EngineConfig::default()
    }
}

/// A sequence spec with shrunken datasets.
pub fn small_spec(pattern: Pattern, seed: u64) -> SequenceSpec {
    let mut spec = SequenceSpec::new(pattern, seed);
    spec.sizes = SizeTable {
        plus: SizeTriple::new(400, None, None),
        minus_perceptual: SizeTriple::new(200, Some(40), None),
        minus_latent: SizeTriple::new(200, None, Some(30)),
        val: SizeTriple::new(200, None, None),
        test: SizeTriple::new(200, None, None),
        ..SizeTable::default()
    };
    spec
}

pub fn small_sequence(pattern: Pattern, seed: u64) -> Vec<DataBundle> {
    let spec = small_spec(pattern, seed);
    realize_sequence(&spec)
        .unwrap()
        .iter()
        .map(|p| generate_problem(p).unwrap())
        .collect()
}

pub fn random_module(input_dim: usize, output_dim: usize, seed: u64) -> ModuleParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModuleParams {
        input_dim,
        output_dim,
        weights: (0..input_dim * output_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        biases: (0..output_dim).map(|_| rng.random_range(-0.5..0.5)).collect(),
        frozen: true,
    }
}

/// Dense multivariate normal log-density via an explicit inverse and
/// determinant.
pub fn dense_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let k = x.len() as f64;
    let inv = cov.clone().try_inverse().expect("invertible");
    let d = x - mean;
    let quad = (d.transpose() * inv * &d)[(0, 0)];
    -0.5 * (k * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + quad)
}

/// Plain dense layer `act(W x + b)` in f64.
pub fn dense_layer(m: &ModuleParams, x: &[f64], act: fn(f64) -> f64) -> Vec<f64> {
    (0..m.output_dim)
        .map(|o| {
            let z = m.biases[o] as f64
                + (0..m.input_dim)
                    .map(|i| m.weights[o * m.input_dim + i] as f64 * x[i])
                    .sum::<f64>();
            act(z)
        })
        .collect()
}

pub fn relu(z: f64) -> f64 {
    z.max(0.0)
}
