//! Pipeline commands behind the `lps` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{Ablation, DomainEntry, Overrides, RunConfig};
pub use error::{CliError, CliResult, ErrorKind};

use std::path::{Path, PathBuf};

/// Environment variable holding the root for relative output paths.
pub const OUTPUT_ROOT_ENV: &str = "LPS_OUTPUT_ROOT";

/// Resolves a relative output path against the output root, if one is set.
pub fn output_path(root: Option<&Path>, path: &Path) -> PathBuf {
    match root {
        Some(r) if path.is_relative() => r.join(path),
        _ => path.to_path_buf(),
    }
}
