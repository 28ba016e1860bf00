//! Problems and their datasets.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::domain::{DomainSpec, NUM_CLASSES};
use super::upper::UpperTask;
use crate::data::{DataBundle, Split, TaskKind};
use crate::error::{Error, Result};
use crate::seed::rng_from;

pub const NUM_CELLS: usize = NUM_CLASSES * NUM_CLASSES;

/// How a split is sampled: number of examples, cap on distinct inputs,
/// cap on distinct class cells. `None` means unrestricted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SizeTriple {
    pub count: usize,
    pub unique_inputs: Option<usize>,
    pub cells: Option<usize>,
}

impl SizeTriple {
    pub const fn new(count: usize, unique_inputs: Option<usize>, cells: Option<usize>) -> Self {
        Self {
            count,
            unique_inputs,
            cells,
        }
    }

    pub fn validate(&self, task: TaskKind) -> Result<()> {
        let max_cells = match task {
            TaskKind::Composite => NUM_CELLS,
            TaskKind::Lower => NUM_CLASSES,
        };
        if self.count == 0 {
            return Err(Error::InfeasibleTriple("count must be positive".into()));
        }
        if let Some(c) = self.cells {
            if c == 0 || c > max_cells {
                return Err(Error::InfeasibleTriple(format!("{c} cells requested, {max_cells} exist")));
            }
        }
        if self.unique_inputs == Some(0) {
            return Err(Error::InfeasibleTriple("unique input cap must be positive".into()));
        }
        Ok(())
    }
}

/// Sizes of the three splits of one problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: SizeTriple,
    pub val: SizeTriple,
    pub test: SizeTriple,
}

/// A problem: a domain, its lower labeller, and for pair problems an upper
/// task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub problem_id: String,
    pub index: usize,
    pub domain: DomainSpec,
    /// Absent for single-input problems.
    pub upper: Option<UpperTask>,
    pub sizes: SplitSizes,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn task(&self) -> TaskKind {
        if self.upper.is_some() {
            TaskKind::Composite
        } else {
            TaskKind::Lower
        }
    }

    /// Label of an example computed from scratch.
    pub fn label(&self, x1: &[f32], x2: Option<&[f32]>) -> u8 {
        let a = self.domain.label(x1);
        match (self.upper, x2) {
            (Some(g), Some(x2)) => g.label(a, self.domain.label(x2)),
            _ => a as u8,
        }
    }
}

fn rng_for(spec: &ProblemSpec, split: &str, purpose: &str) -> ChaCha8Rng {
    rng_from(&[
        b"problem",
        &spec.seed.to_le_bytes(),
        spec.problem_id.as_bytes(),
        split.as_bytes(),
        purpose.as_bytes(),
    ])
}

/// Number of pool inputs per class: `unique` spread over the classes in
/// proportion to how often each class is needed (largest remainder), at
/// least one per needed class and never more than needed.
fn pool_sizes(needed: &[usize; NUM_CLASSES], unique: usize) -> Result<[usize; NUM_CLASSES]> {
    let classes = needed.iter().filter(|&&n| n > 0).count();
    if unique < classes {
        return Err(Error::InfeasibleTriple(format!(
            "{unique} unique inputs cannot cover {classes} classes"
        )));
    }
    let total: usize = needed.iter().sum();
    let mut sizes = [0usize; NUM_CLASSES];
    let mut rema = Vec::new();
    let mut used = 0;
    for c in 0..NUM_CLASSES {
        if needed[c] == 0 {
            continue;
        }
        let exact = unique as f64 * needed[c] as f64 / total as f64;
        sizes[c] = (exact.floor() as usize).clamp(1, needed[c]);
        used += sizes[c];
        rema.push((exact - exact.floor(), c));
    }
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut i = 0;
    let mut stalled = 0;
    while used < unique && stalled < rema.len() {
        let c = rema[i % rema.len()].1;
        if sizes[c] < needed[c] {
            sizes[c] += 1;
            used += 1;
            stalled = 0;
        } else {
            stalled += 1;
        }
        i += 1;
    }
    while used > unique {
        // floors clamped up to 1 can overshoot; trim the largest pools
        let c = (0..NUM_CLASSES).max_by_key(|&c| (sizes[c], NUM_CLASSES - c)).expect("classes");
        sizes[c] -= 1;
        used -= 1;
    }
    Ok(sizes)
}

/// Class of every input position: one class per row for single-input
/// problems, a cell `(a, b)` per row for pairs.
fn class_plan(task: TaskKind, triple: &SizeTriple, rng: &mut ChaCha8Rng) -> Vec<(usize, Option<usize>)> {
    let mut cells: Vec<(usize, Option<usize>)> = match task {
        TaskKind::Composite => (0..NUM_CELLS).map(|i| (i / NUM_CLASSES, Some(i % NUM_CLASSES))).collect(),
        TaskKind::Lower => (0..NUM_CLASSES).map(|c| (c, None)).collect(),
    };
    cells.shuffle(rng);
    if let Some(c) = triple.cells {
        cells.truncate(c);
    }
    // cover every allowed cell first, then draw uniformly among them
    let mut plan: Vec<_> = cells.iter().copied().take(triple.count).collect();
    while plan.len() < triple.count {
        plan.push(cells[rng.random_range(0..cells.len())]);
    }
    plan.shuffle(rng);
    plan
}

fn generate_split(spec: &ProblemSpec, name: &str, triple: &SizeTriple) -> Result<Split> {
    let task = spec.task();
    triple.validate(task)?;
    let mut rng = rng_for(spec, name, "plan");
    let plan = class_plan(task, triple, &mut rng);
    let positions = plan.len() * if task == TaskKind::Composite { 2 } else { 1 };

    let mut needed = [0usize; NUM_CLASSES];
    for &(a, b) in &plan {
        needed[a] += 1;
        if let Some(b) = b {
            needed[b] += 1;
        }
    }
    let mut sample_rng = rng_for(spec, name, "inputs");
    let pools: Option<Vec<Vec<Vec<f32>>>> = match triple.unique_inputs {
        Some(u) if u < positions => {
            let sizes = pool_sizes(&needed, u)?;
            Some(
                (0..NUM_CLASSES)
                    .map(|c| (0..sizes[c]).map(|_| spec.domain.sample(c, &mut sample_rng)).collect())
                    .collect(),
            )
        }
        _ => None,
    };
    // within a pool, cycle through a shuffled order so every pooled input is used
    let mut cursors = [0usize; NUM_CLASSES];
    let mut draw = |c: usize, rng: &mut ChaCha8Rng| -> Vec<f32> {
        match &pools {
            Some(p) => {
                let i = cursors[c];
                cursors[c] += 1;
                let k = p[c].len();
                if i < k {
                    p[c][i].clone()
                } else {
                    p[c][rng.random_range(0..k)].clone()
                }
            }
            None => spec.domain.sample(c, rng),
        }
    };

    let v = spec.domain.input_dim();
    let n = plan.len();
    let mut x1 = Array2::zeros((n, v));
    let mut x2 = (task == TaskKind::Composite).then(|| Array2::zeros((n, v)));
    let mut labels = Vec::with_capacity(n);
    for (r, &(a, b)) in plan.iter().enumerate() {
        let s1 = draw(a, &mut sample_rng);
        x1.row_mut(r).assign(&ndarray::ArrayView1::from(&s1[..]));
        match (b, x2.as_mut()) {
            (Some(b), Some(x2)) => {
                let s2 = draw(b, &mut sample_rng);
                x2.row_mut(r).assign(&ndarray::ArrayView1::from(&s2[..]));
                labels.push(spec.upper.expect("pair problem").label(a, b));
            }
            _ => labels.push(a as u8),
        }
    }
    Split::new(x1, x2, labels)
}

/// Samples the train, validation and test splits of `spec`. Each split
/// uses its own random streams, so noise draws are never shared.
pub fn generate_problem(spec: &ProblemSpec) -> Result<DataBundle> {
    Ok(DataBundle {
        problem_id: spec.problem_id.clone(),
        task: spec.task(),
        train: generate_split(spec, "train", &spec.sizes.train)?,
        val: generate_split(spec, "val", &spec.sizes.val)?,
        test: generate_split(spec, "test", &spec.sizes.test)?,
    })
}
