use serde_json::json;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("scene {label}: {message}")]
    Scene { label: String, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{} exists; pass --force to overwrite", .0.display())]
    Exists(PathBuf),
    #[error(transparent)]
    Core(#[from] helmstab::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Manifest(_) => "manifest",
            CliError::Scene { .. } => "scene",
            CliError::Io { .. } => "io",
            CliError::Exists(_) => "exists",
            CliError::Core(helmstab::Error::NotConverged { .. }) => "not-converged",
            CliError::Core(helmstab::Error::Precondition(_)) => "precondition",
            CliError::Core(_) => "numerics",
            CliError::Verification(_) => "verification",
        }
    }

    /// Nonzero process exit code; verification failures are 1, everything else 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            _ => 2,
        }
    }

    /// One-line machine-readable form for stderr.
    pub fn to_json(&self) -> String {
        json!({"error": self.kind(), "message": self.to_string(), "exit_code": self.exit_code()}).to_string()
    }
}
