//! Synthetic compositional benchmark: domains, upper tasks, problem
//! generation, sequence patterns and metrics.

mod domain;
mod io;
mod metrics;
mod problem;
mod sequence;
mod upper;

pub use domain::{DomainSpec, NUM_CLASSES};
pub use io::{problem_dir_name, read_sequence, read_split_csv, write_sequence, write_split_csv};
pub use metrics::{compute_metrics, AccuracyMatrix, MetricsReport};
pub use problem::{generate_problem, ProblemSpec, SizeTriple, SplitSizes, NUM_CELLS};
pub use sequence::{
    check_pattern_fidelity, layout, realize_sequence, Layout, Pattern, SequenceSpec, SizeKind, SizeTable, NUM_DOMAINS,
};
pub use upper::{class_map, GridPattern, UpperTask, NUM_MAPS, NUM_PATTERNS, NUM_UPPER_TASKS};
