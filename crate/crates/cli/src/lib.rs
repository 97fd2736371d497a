//! Library side of the `pmwb` command: config loading and the subcommands.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use commands::{cmd_eval, cmd_gen_blocks, cmd_gen_mapping, cmd_infer, cmd_simulate, cmd_verify, InferOutput};
pub use config::{Overrides, WorkbenchConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {msg}", path.display())]
    Config { path: PathBuf, msg: String },
    #[error("{}: {msg}", path.display())]
    Input { path: PathBuf, msg: String },
    #[error("{0}")]
    Usage(String),
    #[error("scope mismatch: {0}")]
    ScopeMismatch(String),
    /// A well-formed run with a negative answer.
    #[error("{0}")]
    Negative(String),
    #[error("{0}")]
    Backend(String),
    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Negative(_) => 1,
            CliError::Config { .. } | CliError::Input { .. } | CliError::Usage(_) | CliError::ScopeMismatch(_) => 2,
            CliError::Backend(_) | CliError::Output { .. } => 3,
        }
    }
}

/// Pretty JSON with every object's keys in sorted order.
pub fn sorted_json<T: Serialize>(v: &T) -> String {
    let value = serde_json::to_value(v).expect("value serializes");
    let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let out = |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(out)?;
    }
    std::fs::write(path, contents).map_err(out)
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
