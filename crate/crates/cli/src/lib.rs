//! Subcommand implementations behind the `gridmem` binary, exposed as a
//! library so integration tests can drive them in-process.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.

pub mod analyze;
pub mod config;
pub mod eval;
pub mod gen_env;
pub mod report;
pub mod train;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub(crate) fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

pub(crate) fn write_text(path: &std::path::Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, text)
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

pub(crate) fn write_json<T: serde::Serialize>(
    path: &std::path::Path,
    value: &T,
) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| runtime(format!("cannot serialize {}: {e}", path.display())))?;
    write_text(path, &(text + "\n"))
}
