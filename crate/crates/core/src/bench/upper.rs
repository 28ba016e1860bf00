//! Upper labelling functions: a relabelling of each input's class followed
//! by a pattern over the 8 x 8 grid of class coordinates.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::domain::NUM_CLASSES;
use crate::seed::rng_from;

pub const NUM_MAPS: usize = 4;
pub const NUM_PATTERNS: usize = 4;
pub const NUM_UPPER_TASKS: usize = NUM_MAPS * NUM_PATTERNS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPattern {
    /// Checkerboard of 2 x 2 blocks.
    Xor,
    /// Alternating pairs of rows.
    Stripes,
    /// Both coordinates in the same half.
    Quadrant,
    /// Coordinates at most 2 apart.
    DiagonalBand,
}

impl GridPattern {
    pub const ALL: [GridPattern; NUM_PATTERNS] = [
        GridPattern::Xor,
        GridPattern::Stripes,
        GridPattern::Quadrant,
        GridPattern::DiagonalBand,
    ];

    pub fn contains(self, a: usize, b: usize) -> bool {
        match self {
            GridPattern::Xor => (a / 2 + b / 2) % 2 == 1,
            GridPattern::Stripes => (a / 2).is_multiple_of(2),
            GridPattern::Quadrant => (a < 4) == (b < 4),
            GridPattern::DiagonalBand => a.abs_diff(b) <= 2,
        }
    }

    /// True when membership is not a function of one binary feature per
    /// coordinate, i.e. the grid has more than two distinct rows or
    /// columns. Such patterns cannot be recovered from a subset of cells.
    pub fn is_interacting(self) -> bool {
        let rows: HashSet<Vec<bool>> = (0..NUM_CLASSES)
            .map(|a| (0..NUM_CLASSES).map(|b| self.contains(a, b)).collect())
            .collect();
        let cols: HashSet<Vec<bool>> = (0..NUM_CLASSES)
            .map(|b| (0..NUM_CLASSES).map(|a| self.contains(a, b)).collect())
            .collect();
        rows.len() > 2 || cols.len() > 2
    }

    pub fn positives(self) -> usize {
        (0..NUM_CLASSES)
            .flat_map(|a| (0..NUM_CLASSES).map(move |b| (a, b)))
            .filter(|&(a, b)| self.contains(a, b))
            .count()
    }
}

/// Class relabelling `j` (0-based). Map 0 is the identity; the others are
/// fixed permutations shared by every sequence.
pub fn class_map(j: usize) -> [usize; NUM_CLASSES] {
    let mut m: [usize; NUM_CLASSES] = std::array::from_fn(|i| i);
    if j > 0 {
        let mut rng = rng_from(&[b"class-map", &(j as u64).to_le_bytes()]);
        m.shuffle(&mut rng);
    }
    m
}

/// One of the 16 upper tasks; `g_id = 4 * pattern_index + map_index + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UpperTask {
    pub g_id: usize,
}

impl UpperTask {
    pub fn new(g_id: usize) -> Option<Self> {
        (1..=NUM_UPPER_TASKS).contains(&g_id).then_some(Self { g_id })
    }

    pub fn pattern(self) -> GridPattern {
        GridPattern::ALL[(self.g_id - 1) / NUM_MAPS]
    }

    pub fn map_index(self) -> usize {
        (self.g_id - 1) % NUM_MAPS
    }

    pub fn label(self, class1: usize, class2: usize) -> u8 {
        let m = class_map(self.map_index());
        u8::from(self.pattern().contains(m[class1], m[class2]))
    }
}
