mod common;

use common::{fast_config, random_module, small_sequence};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use picle_core::bench::Pattern;
use picle_core::data::TaskKind;
use picle_core::engine::{architecture_for, solve_problem, Mode, RunState};
use picle_core::library::{EvalResult, Library, LibraryModule, Path, Solution, TrainedPath};
use picle_core::nn::{Activation, ModuleParams};
use picle_core::nt::{
    bayes_opt, expected_improvement, find_best_nt_path, function_distance, se_kernel, suffix_candidates, ucb,
    BoConfig, GpState, NtConfig,
};
use picle_core::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicUsize, Ordering};

fn module(id: &str, layer: usize, params: ModuleParams) -> LibraryModule {
    LibraryModule {
        module_id: id.into(),
        layer_index: layer,
        params,
        origin_problem: "p".into(),
        origin_index: 0,
        origin_train_accuracy: 1.0,
        input_model: None,
        probe_inputs: None,
    }
}

fn probes(n: usize, dim: usize, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.0..1.0))
}

const ACTS: [Activation; 2] = [Activation::Relu, Activation::Sigmoid];

fn suffix(seed: u64) -> [LibraryModule; 2] {
    [
        module("a", 5, random_module(6, 5, seed)),
        module("b", 6, random_module(5, 2, seed + 1000)),
    ]
}

#[test]
fn distance_identity_and_constant_offset() {
    let z = probes(40, 6, 1);
    let [a, b] = suffix(3);
    assert_eq!(function_distance(&[&a, &b], &[&a, &b], &ACTS, z.view()).unwrap(), 0.0);

    let zero = module("z", 6, ModuleParams::zeros(6, 1));
    let mut one_params = ModuleParams::zeros(6, 1);
    one_params.biases[0] = 1.0;
    let one = module("o", 6, one_params);
    let d = function_distance(&[&zero], &[&one], &[Activation::Sigmoid], z.view()).unwrap();
    assert!((d - 1.0).abs() < 1e-12);
    let empty = Array2::<f32>::zeros((0, 6));
    assert!(matches!(
        function_distance(&[&zero], &[&one], &[Activation::Sigmoid], empty.view()),
        Err(Error::EmptyProbeSet)
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn distance_is_a_metric(s1 in 0u64..1000, s2 in 0u64..1000, s3 in 0u64..1000) {
        let z = probes(40, 6, 7);
        let (x, y, w) = (suffix(s1), suffix(s2), suffix(s3));
        let d = |p: &[LibraryModule; 2], q: &[LibraryModule; 2]| {
            function_distance(&[&p[0], &p[1]], &[&q[0], &q[1]], &ACTS, z.view()).unwrap()
        };
        prop_assert!((d(&x, &y) - d(&y, &x)).abs() < 1e-9);
        prop_assert!(d(&x, &w) <= d(&x, &y) + d(&y, &w) + 1e-9);
        prop_assert!(d(&x, &y) >= 0.0);
    }

    #[test]
    fn ei_dominates_plain_improvement(mean in -2.0f64..2.0, var in 0.0f64..4.0, best in -2.0f64..2.0) {
        let ei = expected_improvement(mean, var, best);
        prop_assert!(ei >= (mean - best).max(0.0) - 1e-12);
    }

    #[test]
    fn ucb_is_monotone(mean in -2.0f64..2.0, var in 0.0f64..4.0, dm in 0.0f64..1.0, dv in 0.0f64..1.0) {
        prop_assert!(ucb(mean + dm, var, 2.0) >= ucb(mean, var, 2.0));
        prop_assert!(ucb(mean, var + dv, 2.0) >= ucb(mean, var, 2.0));
    }
}

#[test]
fn kernel_and_acquisition_values() {
    assert_eq!(se_kernel(0.0, 0.3, 2.0), 0.09);
    assert!((se_kernel(1.0, 1.0, 1.0) - (-0.5f64).exp()).abs() < 1e-15);
    assert!((se_kernel(1.0, 1.0, 1.0) - 0.60653).abs() < 1e-5);
    assert!(se_kernel(0.5, 1.0, 1.0) > se_kernel(0.6, 1.0, 1.0));
    assert!((ucb(0.5, 0.04, 2.0) - 0.9).abs() < 1e-12);
    assert_eq!(ucb(0.3, 0.0, 2.0), 0.3);
    assert_eq!(expected_improvement(0.2, 0.0, 0.5), 0.0);
    let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    assert!((expected_improvement(0.5, 1.0, 0.5) - phi0).abs() < 1e-12);
    assert!((phi0 - 0.39894).abs() < 1e-5);
}

fn gp_with(dist: DMatrix<f64>, obs: &[(usize, f64)], sigma: f64, gamma: f64, jitter: f64) -> GpState {
    let mut gp = GpState::new(dist, jitter).unwrap();
    for &(c, v) in obs {
        gp.observe(c, v);
    }
    gp.sigma = sigma;
    gp.gamma = gamma;
    gp
}

#[test]
fn gp_prior_zero_targets_and_single_point() {
    let dist = DMatrix::from_row_slice(2, 2, &[0.0, 0.7, 0.7, 0.0]);
    let gp = gp_with(dist.clone(), &[], 0.5, 1.0, 1e-6);
    assert_eq!(gp.predict(1).unwrap(), (0.0, 0.25));

    let mut zeros = gp_with(dist.clone(), &[(0, 0.0)], 0.5, 1.0, 1e-6);
    zeros.fit().unwrap();
    assert_eq!(zeros.predict(1).unwrap().0, 0.0);

    let (s2, eps, f1) = (0.64, 1e-6, 0.8);
    let one = gp_with(dist, &[(0, f1)], 0.8, 1.0, eps);
    let (mean, var) = one.predict(0).unwrap();
    assert!((mean - f1 * s2 / (s2 + eps)).abs() < 1e-12);
    assert!(var <= eps * s2 / (s2 + eps) + 1e-12);
}

#[test]
fn gp_two_point_posterior_matches_hand_solve() {
    let dist = DMatrix::from_row_slice(3, 3, &[0.0, 0.4, 0.9, 0.4, 0.0, 0.6, 0.9, 0.6, 0.0]);
    let (sigma, gamma, eps) = (0.7, 0.5, 1e-6);
    let (f0, f1) = (0.62, 0.81);
    let gp = gp_with(dist, &[(0, f0), (1, f1)], sigma, gamma, eps);
    let k = |d: f64| sigma * sigma * (-d * d / (2.0 * gamma * gamma)).exp();
    // [a b; b a] inverse in closed form
    let (a, b) = (k(0.0) + eps, k(0.4));
    let det = a * a - b * b;
    let inv = [[a / det, -b / det], [-b / det, a / det]];
    let ks = [k(0.9), k(0.6)];
    let alpha = [inv[0][0] * f0 + inv[0][1] * f1, inv[1][0] * f0 + inv[1][1] * f1];
    let mean = ks[0] * alpha[0] + ks[1] * alpha[1];
    let quad = ks[0] * (inv[0][0] * ks[0] + inv[0][1] * ks[1]) + ks[1] * (inv[1][0] * ks[0] + inv[1][1] * ks[1]);
    let (m, v) = gp.predict(2).unwrap();
    assert!((m - mean).abs() < 1e-10);
    assert!((v - (k(0.0) - quad)).abs() < 1e-10);
}

#[test]
fn gp_three_point_posterior_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<[f64; 2]> = (0..5).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
    let dist = DMatrix::from_fn(5, 5, |i, j| ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt());
    let obs = [(0, 0.5), (2, 0.9), (3, 0.7)];
    let (sigma, gamma, eps) = (0.6, 0.3, 1e-6);
    let gp = gp_with(dist.clone(), &obs, sigma, gamma, eps);
    let k = |d: f64| sigma * sigma * (-d * d / (2.0 * gamma * gamma)).exp();
    let kk = DMatrix::from_fn(3, 3, |a, b| k(dist[(obs[a].0, obs[b].0)]) + if a == b { eps } else { 0.0 });
    let inv = kk.try_inverse().unwrap();
    let f = DVector::from_iterator(3, obs.iter().map(|o| o.1));
    for c in [1, 4] {
        let ks = DVector::from_iterator(3, obs.iter().map(|o| k(dist[(c, o.0)])));
        let mean = ks.dot(&(&inv * &f));
        let var = k(0.0) - ks.dot(&(&inv * &ks));
        let (m, v) = gp.predict(c).unwrap();
        assert!((m - mean).abs() < 1e-10);
        assert!((v - var.max(0.0)).abs() < 1e-10);
    }
    for &(c, _) in &obs {
        let (_, v) = gp.predict(c).unwrap();
        let s2 = sigma * sigma;
        assert!(v <= eps * s2 / (s2 + eps) + 1e-12);
    }
}

#[test]
fn ei_stopping_waits_for_the_seed_pair() {
    let dist = DMatrix::from_fn(6, 6, |i, j| (i as f64 - j as f64).abs());
    let cfg = BoConfig {
        ei_threshold: 10.0,
        ..BoConfig::default()
    };
    let trace = bayes_opt(&dist, 6, &cfg, |c| Ok(c as f64 / 10.0)).unwrap();
    assert_eq!(trace.order.len(), 2);
    assert!(trace.stopped_by_ei);
    // the seeds are the two candidates closest to all others on average
    let mut seeds = trace.order.clone();
    seeds.sort();
    assert_eq!(seeds, vec![2, 3]);
}

/// Random points with a smooth objective around a hidden optimum.
fn synthetic_instance(seed: u64, n: usize) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let target: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let dist = DMatrix::from_fn(n, n, |i, j| d(&pts[i], &pts[j]));
    let f = pts.iter().map(|p| 0.5 + 0.45 * (-d(p, &target).powi(2) / 0.18).exp()).collect();
    (dist, f)
}

fn evals_to_optimum(order: &[usize], f: &[f64]) -> usize {
    let best = (0..f.len()).fold(0, |b, i| if f[i] > f[b] { i } else { b });
    order.iter().position(|&c| c == best).expect("optimum evaluated") + 1
}

#[test]
fn bo_reaches_the_optimum_faster_than_random_order() {
    let n = 17;
    let no_stop = BoConfig {
        ei_threshold: 0.0,
        ..BoConfig::default()
    };
    let (mut bo, mut random) = (0.0, 0.0);
    for seed in 0..20 {
        let (dist, f) = synthetic_instance(seed, n);
        let trace = bayes_opt(&dist, n, &no_stop, |c| Ok(f[c])).unwrap();
        assert_eq!(trace.order.len(), n);
        bo += evals_to_optimum(&trace.order, &f) as f64;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(1000 + seed));
        random += evals_to_optimum(&order, &f) as f64;
    }
    assert!(bo < random, "bo {bo} vs random {random}");
}

fn solution(id: &str, idx: usize, module_ids: &[&str]) -> Solution {
    Solution {
        problem_id: id.into(),
        problem_index: idx,
        task: TaskKind::Composite,
        path: Path { slots: Vec::new() },
        module_ids: module_ids.iter().map(|s| s.to_string()).collect(),
        eval: EvalResult {
            val_accuracy: 0.5,
            test_accuracy: 0.5,
            train_accuracy: 0.5,
            trained_path: Path { slots: Vec::new() },
            epochs_run: 1,
            val_loss: 0.7,
            learning_rate: 0.01,
            restart: 0,
        },
    }
}

#[test]
fn identical_suffixes_are_deduplicated_to_the_earliest_source() {
    let cfg = fast_config(Mode::Picle);
    let data = small_sequence(Pattern::Out, 1);
    let arch = architecture_for(&cfg, &data[0]).unwrap();
    let mut lib = Library::new(6);
    for (l, spec) in arch.layers.iter().enumerate() {
        for tag in ["a", "b"] {
            lib.layers[l].push(module(
                &format!("{tag}-l{}", l + 1),
                l + 1,
                random_module(spec.input_dim, spec.output_dim, l as u64),
            ));
        }
    }
    let path = |p: &str, s: &str| -> Vec<String> {
        (1..=6).map(|l| format!("{}-l{l}", if l <= 4 { p } else { s })).collect()
    };
    fn ids(v: &[String]) -> Vec<&str> {
        v.iter().map(String::as_str).collect()
    }
    let (p1, p2, p3) = (path("a", "a"), path("b", "a"), path("b", "a"));
    lib.solutions.push(solution("p01", 0, &ids(&p1)));
    lib.solutions.push(solution("p02", 1, &ids(&p2)));
    lib.solutions.push(solution("p03", 2, &ids(&p3)));
    let c = suffix_candidates(&lib, &arch, 2);
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].source_solution, 0);
    assert_eq!(c[0].modules, vec!["a-l5".to_string(), "a-l6".to_string()]);
}

#[test]
fn one_earlier_solution_bounds_both_stages() {
    let cfg = fast_config(Mode::Picle);
    let data = small_sequence(Pattern::Out, 2);
    let mut state = RunState::new(&cfg);
    solve_problem(&mut state, &data[..1], &cfg).unwrap();
    let arch = architecture_for(&cfg, &data[1]).unwrap();
    let calls = AtomicUsize::new(0);
    let train = |p: &Path| -> picle_core::Result<TrainedPath> {
        calls.fetch_add(1, Ordering::SeqCst);
        picle_core::library::train_and_evaluate(p, &state.library, &arch, &data[1], &cfg.train, &cfg.trials, 0)
    };
    let nt = find_best_nt_path(&state.library, &arch, &data[1], &NtConfig::default(), train)
        .unwrap()
        .expect("one candidate");
    let l = arch.num_layers();
    assert_eq!(nt.stage1_trainings, 1);
    assert_eq!(nt.stage2_trainings, l - 1 - 2);
    assert_eq!(calls.load(Ordering::SeqCst), 1 + l - 1 - 2);
    for (i, c) in nt.candidates.iter().enumerate() {
        let reused = c.eval.trained_path.num_reused();
        assert_eq!(reused, if i == 0 { 2 } else { 2 + i });
        // reused modules form a suffix
        let slots = &c.eval.trained_path.slots;
        assert!(slots[l - reused..].iter().all(|s| matches!(s, picle_core::library::Slot::Reuse(_))));
    }

    let empty = Library::new(l);
    let none = find_best_nt_path(&empty, &arch, &data[1], &NtConfig::default(), |_: &Path| unreachable!()).unwrap();
    assert!(none.is_none());
}
