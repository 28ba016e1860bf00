//! In-memory datasets shared by training, searches and the generator.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a problem asks for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Binary label of an input pair, computed by an upper task over the
    /// two lower-level classes.
    Composite,
    /// Class of a single input (the lower labelling function alone).
    Lower,
}

/// One data split. Rows of `x1` (and `x2` for pair problems) line up with
/// `labels`.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub x1: Array2<f32>,
    pub x2: Option<Array2<f32>>,
    pub labels: Vec<u8>,
}

impl Split {
    pub fn new(x1: Array2<f32>, x2: Option<Array2<f32>>, labels: Vec<u8>) -> Result<Self> {
        if x1.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} labels",
                x1.nrows(),
                labels.len()
            )));
        }
        if let Some(x2) = &x2 {
            if x2.dim() != x1.dim() {
                return Err(Error::Shape(format!(
                    "second input is {:?}, first is {:?}",
                    x2.dim(),
                    x1.dim()
                )));
            }
        }
        Ok(Self { x1, x2, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x1.ncols()
    }

    pub fn row(&self, i: usize) -> InputPair {
        InputPair {
            x1: self.x1.row(i).to_vec(),
            x2: self.x2.as_ref().map(|x2| x2.row(i).to_vec()),
        }
    }

    /// All branch inputs, first input of every row then second input of
    /// every row.
    pub fn branch_inputs(&self) -> Vec<ArrayView1<'_, f32>> {
        let mut out: Vec<_> = self.x1.rows().into_iter().collect();
        if let Some(x2) = &self.x2 {
            out.extend(x2.rows());
        }
        out
    }

    /// The first `n` rows (or all of them).
    pub fn head(&self, n: usize) -> Split {
        let n = n.min(self.len());
        Split {
            x1: self.x1.slice(ndarray::s![..n, ..]).to_owned(),
            x2: self.x2.as_ref().map(|x| x.slice(ndarray::s![..n, ..]).to_owned()),
            labels: self.labels[..n].to_vec(),
        }
    }
}

/// A single example: one input, or two for pair problems.
#[derive(Clone, Debug, PartialEq)]
pub struct InputPair {
    pub x1: Vec<f32>,
    pub x2: Option<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataBundle {
    pub problem_id: String,
    pub task: TaskKind,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl DataBundle {
    pub fn input_dim(&self) -> usize {
        self.train.input_dim()
    }
}
