use std::path::Path;

use picle_core::bench::{write_sequence, SequenceSpec};

use crate::error::{CliError, CliResult};
use crate::files::read_config_json;

/// Loads and validates a sequence spec file.
pub fn load_sequence_spec(path: &Path) -> CliResult<SequenceSpec> {
    let spec: SequenceSpec = read_config_json(path, "sequence spec")?;
    spec.validate()
        .map_err(|e| CliError::Config(format!("invalid sequence spec {}: {e}", path.display())))?;
    Ok(spec)
}

/// Generates every problem of the sequence described by `spec_path` into
/// `out_dir`. Returns the number of problems written.
pub fn cmd_generate(spec_path: &Path, out_dir: &Path) -> CliResult<usize> {
    let spec = load_sequence_spec(spec_path)?;
    let problems = write_sequence(&spec, out_dir)?;
    Ok(problems.len())
}
