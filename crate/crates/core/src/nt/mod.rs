//! Latent-transfer search: Bayesian optimisation over suffixes of earlier
//! solutions, followed by a sweep over how many trailing layers to reuse.

mod gp;

use std::collections::HashSet;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gp::{expected_improvement, se_kernel, ucb, GpState};

use crate::data::{DataBundle, TaskKind};
use crate::error::{Error, Result};
use crate::library::{Library, LibraryModule, ModuleId, Path, TrainedPath};
use crate::nn::{Activation, Architecture, Net};
use crate::pt::argmax_val;

/// A reusable suffix: the last `l_min` modules of an earlier solution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuffixCandidate {
    pub modules: Vec<ModuleId>,
    /// Index into the library's solution list.
    pub source_solution: usize,
    pub source_problem: String,
}

/// Suffix outputs at the probe points, before the final activation.
pub fn suffix_outputs(modules: &[&LibraryModule], acts: &[Activation], z: ArrayView2<f32>) -> Result<Array2<f64>> {
    if z.nrows() == 0 {
        return Err(Error::EmptyProbeSet);
    }
    if modules.is_empty() || modules.len() != acts.len() {
        return Err(Error::Shape("suffix and activation lists disagree".into()));
    }
    if modules[0].input_dim() != z.ncols() {
        return Err(Error::Shape(format!(
            "suffix takes {} inputs, probes have {}",
            modules[0].input_dim(),
            z.ncols()
        )));
    }
    for pair in modules.windows(2) {
        if pair[0].output_dim() != pair[1].input_dim() {
            return Err(Error::Shape("suffix modules do not chain".into()));
        }
    }
    let params: Vec<_> = modules.iter().map(|m| m.params.clone()).collect();
    let net = Net::from_params(&params, acts, modules.len(), false);
    Ok(net.forward_from(0, z.to_owned()).logits.mapv(f64::from))
}

/// Root mean squared Euclidean distance between two output matrices.
pub fn output_distance(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape("output matrices differ in shape".into()));
    }
    if a.nrows() == 0 {
        return Err(Error::EmptyProbeSet);
    }
    let sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sq / a.nrows() as f64).sqrt())
}

/// Monte Carlo distance between the functions two suffixes compute.
pub fn function_distance(
    a: &[&LibraryModule],
    b: &[&LibraryModule],
    acts: &[Activation],
    z: ArrayView2<f32>,
) -> Result<f64> {
    output_distance(&suffix_outputs(a, acts, z)?, &suffix_outputs(b, acts, z)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    pub beta: f64,
    pub ei_threshold: f64,
    pub jitter: f64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            ei_threshold: 1e-3,
            jitter: 1e-6,
        }
    }
}

/// Which candidates the optimiser evaluated, in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoTrace {
    pub order: Vec<usize>,
    pub values: Vec<f64>,
    /// True when expected improvement ended the loop before the budget.
    pub stopped_by_ei: bool,
}

/// The two candidates with the lowest mean distance to all others.
fn seed_pair(dist: &DMatrix<f64>) -> Vec<usize> {
    let n = dist.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    let avg: Vec<f64> = (0..n).map(|i| dist.row(i).sum() / n as f64).collect();
    idx.sort_by(|&a, &b| avg[a].total_cmp(&avg[b]).then(a.cmp(&b)));
    idx.truncate(2);
    idx
}

/// GP-UCB over candidates described by a distance matrix.
///
/// The two most central candidates are evaluated first. Afterwards the
/// unevaluated candidate with the highest UCB is chosen; the loop stops when
/// its expected improvement over the best value so far is below
/// `cfg.ei_threshold`, or after `budget` evaluations.
pub fn bayes_opt<F>(dist: &DMatrix<f64>, budget: usize, cfg: &BoConfig, mut evaluate: F) -> Result<BoTrace>
where
    F: FnMut(usize) -> Result<f64>,
{
    let mut gp = GpState::new(dist.clone(), cfg.jitter)?;
    let n = gp.num_candidates();
    let budget = budget.min(n);
    let mut trace = BoTrace {
        order: Vec::new(),
        values: Vec::new(),
        stopped_by_ei: false,
    };
    let mut evaluated = vec![false; n];
    for c in seed_pair(dist).into_iter().take(budget) {
        let f = evaluate(c)?;
        gp.observe(c, f);
        evaluated[c] = true;
        trace.order.push(c);
        trace.values.push(f);
    }
    while trace.order.len() < budget {
        gp.fit()?;
        let mut pick: Option<(usize, f64, f64, f64)> = None;
        for c in (0..n).filter(|&c| !evaluated[c]) {
            let (mean, var) = gp.predict(c)?;
            let score = ucb(mean, var, cfg.beta);
            if pick.is_none_or(|(_, s, _, _)| score > s) {
                pick = Some((c, score, mean, var));
            }
        }
        let Some((c, _, mean, var)) = pick else { break };
        let f_best = trace.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if expected_improvement(mean, var, f_best) < cfg.ei_threshold {
            trace.stopped_by_ei = true;
            break;
        }
        let f = evaluate(c)?;
        gp.observe(c, f);
        evaluated[c] = true;
        trace.order.push(c);
        trace.values.push(f);
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NtConfig {
    /// Length of the suffixes searched by Bayesian optimisation.
    pub l_min: usize,
    /// Evaluation budget of the optimisation stage; `L + l_min` when unset.
    pub budget: Option<usize>,
    pub bo: BoConfig,
}

impl Default for NtConfig {
    fn default() -> Self {
        Self {
            l_min: 2,
            budget: None,
            bo: BoConfig::default(),
        }
    }
}

impl NtConfig {
    pub fn budget_for(&self, num_layers: usize) -> usize {
        self.budget.unwrap_or(num_layers + self.l_min)
    }
}

fn fits_layers(library: &Library, ids: &[ModuleId], arch: &Architecture) -> bool {
    let start = arch.num_layers() - ids.len();
    ids.iter().zip(&arch.layers[start..]).all(|(id, spec)| {
        library.module(id).is_some_and(|m| {
            m.layer_index == spec.layer_index && m.input_dim() == spec.input_dim && m.output_dim() == spec.output_dim
        })
    })
}

/// Distinct length-`l_min` suffixes of earlier solutions that fit `arch`;
/// each is represented by its earliest source.
pub fn suffix_candidates(library: &Library, arch: &Architecture, l_min: usize) -> Vec<SuffixCandidate> {
    let l = arch.num_layers();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    if l_min == 0 || l_min > l {
        return out;
    }
    for (i, sol) in library.solutions.iter().enumerate() {
        if sol.task != arch.task || sol.module_ids.len() != l {
            continue;
        }
        let suffix = sol.module_ids[l - l_min..].to_vec();
        if !fits_layers(library, &suffix, arch) || !seen.insert(suffix.clone()) {
            continue;
        }
        out.push(SuffixCandidate {
            modules: suffix,
            source_solution: i,
            source_problem: sol.problem_id.clone(),
        });
    }
    out
}

/// Probe inputs of every module at `layer` taking `input_dim` inputs, in
/// library order.
pub fn probe_set(library: &Library, layer: usize, input_dim: usize) -> Array2<f32> {
    let parts: Vec<ArrayView2<f32>> = library
        .compatible_modules(layer, input_dim)
        .into_iter()
        .filter_map(|m| m.probe_inputs.as_ref().map(|p| p.view()))
        .collect();
    if parts.is_empty() {
        return Array2::zeros((0, input_dim));
    }
    ndarray::concatenate(ndarray::Axis(0), &parts).expect("equal widths")
}

/// Pairwise function distances between candidate suffixes.
pub fn distance_matrix(
    library: &Library,
    candidates: &[SuffixCandidate],
    arch: &Architecture,
    z: ArrayView2<f32>,
) -> Result<DMatrix<f64>> {
    let l = arch.num_layers();
    let outputs = candidates
        .par_iter()
        .map(|c| {
            let mods = c.modules.iter().map(|id| library.get(id)).collect::<Result<Vec<_>>>()?;
            let acts: Vec<_> = arch.layers[l - mods.len()..].iter().map(|s| s.activation).collect();
            suffix_outputs(&mods, &acts, z)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = candidates.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = output_distance(&outputs[i], &outputs[j])?;
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

#[derive(Clone, Debug)]
pub struct NtSearch {
    pub suffixes: Vec<SuffixCandidate>,
    pub bo: BoTrace,
    /// Trained paths: the optimisation stage in evaluation order, then the
    /// suffix-length sweep.
    pub candidates: Vec<TrainedPath>,
    pub stage1_trainings: usize,
    pub stage2_trainings: usize,
    pub best: usize,
}

impl NtSearch {
    pub fn best(&self) -> &TrainedPath {
        &self.candidates[self.best]
    }
}

/// Latent-transfer search. `None` when no earlier solution offers a
/// suffix that fits this problem.
pub fn find_best_nt_path<F>(
    library: &Library,
    arch: &Architecture,
    data: &DataBundle,
    cfg: &NtConfig,
    train: F,
) -> Result<Option<NtSearch>>
where
    F: Fn(&Path) -> Result<TrainedPath> + Sync,
{
    if data.input_dim() != arch.input_dim() {
        return Err(Error::Shape(format!(
            "data has {} features, layer 1 expects {}",
            data.input_dim(),
            arch.input_dim()
        )));
    }
    let l = arch.num_layers();
    if arch.task != TaskKind::Composite || cfg.l_min == 0 || cfg.l_min >= l {
        return Ok(None);
    }
    let suffixes = suffix_candidates(library, arch, cfg.l_min);
    if suffixes.is_empty() {
        return Ok(None);
    }
    let probe_layer = l - cfg.l_min + 1;
    let z = probe_set(library, probe_layer, arch.layers[probe_layer - 1].input_dim);
    let dist = distance_matrix(library, &suffixes, arch, z.view())?;

    let mut stage1: Vec<TrainedPath> = Vec::new();
    let bo = bayes_opt(&dist, cfg.budget_for(l), &cfg.bo, |c| {
        let trained = train(&Path::with_suffix(&suffixes[c].modules, arch))?;
        let f = trained.eval.val_accuracy;
        stage1.push(trained);
        Ok(f)
    })?;
    let winner = &suffixes[bo.order[argmax_val(&stage1)]];
    let source = &library.solutions[winner.source_solution].module_ids;
    let sweep: Vec<Path> = (cfg.l_min + 1..l)
        .map(|len| source[l - len..].to_vec())
        .filter(|ids| fits_layers(library, ids, arch))
        .map(|ids| Path::with_suffix(&ids, arch))
        .collect();
    let stage2 = sweep.par_iter().map(&train).collect::<Result<Vec<_>>>()?;
    let stage1_trainings = stage1.len();
    let stage2_trainings = stage2.len();
    let mut candidates = stage1;
    candidates.extend(stage2);
    let best = argmax_val(&candidates);
    Ok(Some(NtSearch {
        suffixes,
        bo,
        candidates,
        stage1_trainings,
        stage2_trainings,
        best,
    }))
}
