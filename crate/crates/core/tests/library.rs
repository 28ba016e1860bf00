mod common;

use std::fs;

use common::{fast_config, small_sequence};
use nalgebra::DVector;
use ndarray::Array2;
use picle_core::bench::Pattern;
use picle_core::engine::{architecture_for, solve_problem, Mode, RunState};
use picle_core::library::{load_library, save_library, Path, Slot, TrainedPath};
use picle_core::pt::fit_input_model;
use picle_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn solved(n: usize) -> (RunState, Vec<picle_core::data::DataBundle>) {
    let cfg = fast_config(Mode::Picle);
    let data = small_sequence(Pattern::Out, 3);
    let mut state = RunState::new(&cfg);
    for t in 1..=n {
        solve_problem(&mut state, &data[..t], &cfg).unwrap();
    }
    (state, data)
}

#[test]
fn first_problem_adds_one_module_per_layer() {
    let (state, _) = solved(1);
    let lib = &state.library;
    assert_eq!(lib.num_modules(), lib.num_layers());
    for (i, layer) in lib.layers.iter().enumerate() {
        assert_eq!(layer.len(), 1);
        let m = &layer[0];
        assert_eq!(m.layer_index, i + 1);
        assert!(m.params.frozen);
        assert!(m.input_model.is_some());
    }
    assert_eq!(lib.solutions.len(), 1);
}

#[test]
fn save_load_round_trip_and_corruption() {
    let (state, _) = solved(3);
    let dir = tempfile::tempdir().unwrap();
    save_library(&state.library, dir.path()).unwrap();
    let back = load_library(dir.path()).unwrap();
    assert_eq!(back, state.library);
    assert_eq!(back.solutions.len(), 3);

    let victim = fs::read_dir(dir.path().join("modules")).unwrap().next().unwrap().unwrap().path();
    let mut bytes = fs::read(&victim).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    fs::write(&victim, bytes).unwrap();
    assert!(matches!(load_library(dir.path()), Err(Error::Corrupt { .. })));

    let empty = tempfile::tempdir().unwrap();
    assert!(load_library(empty.path()).is_err());
}

#[test]
fn all_reuse_path_adds_no_modules() {
    let (mut state, data) = solved(1);
    let cfg = fast_config(Mode::Picle);
    let arch = architecture_for(&cfg, &data[1]).unwrap();
    let ids = state.library.solutions[0].module_ids.clone();
    let path = Path {
        slots: ids.iter().cloned().map(Slot::Reuse).collect(),
    };
    let mut eval = state.library.solutions[0].eval.clone();
    eval.trained_path = path.clone();
    let modules = ids.iter().map(|id| state.library.get(id).unwrap().params.clone()).collect();
    let before = state.library.num_modules();
    state
        .library
        .update(&TrainedPath { eval, modules }, &arch, &data[1], 1, &cfg.update_options())
        .unwrap();
    assert_eq!(state.library.num_modules(), before);
    assert_eq!(state.library.solutions.len(), 2);
    assert_eq!(state.library.solutions[1].module_ids, ids);
}

#[test]
fn fitted_model_peaks_at_its_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples = Array2::from_shape_fn((300, 10), |(_, c)| rng.random_range(-1.0f32..1.0) * (c + 1) as f32);
    let model = fit_input_model(samples.view(), 4, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let col_mean: Vec<f64> = (0..10).map(|c| samples.column(c).iter().map(|&x| x as f64).sum::<f64>() / 300.0).collect();
    let projected = &model.projection * DVector::from_vec(col_mean.clone());
    assert!((projected - &model.mean).amax() < 1e-9);

    let at_mean: Vec<f32> = col_mean.iter().map(|&x| x as f32).collect();
    let peak = -0.5 * (4.0 * (2.0 * std::f64::consts::PI).ln() + model.log_det());
    assert!((model.log_density(&at_mean).unwrap() - peak).abs() < 1e-3);
    for r in 0..20 {
        assert!(model.log_density(samples.row(r).as_slice().unwrap()).unwrap() <= peak + 1e-9);
    }
}
