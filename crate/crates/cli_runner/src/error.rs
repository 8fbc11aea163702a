//! Error type for the command-line surface.

use thiserror::Error;

/// Anything that can go wrong between an invocation and its report.
#[derive(Debug, Error)]
pub enum RunnerError {
    /// The config file is not valid JSON or violates strict parsing.
    #[error("config parse error: {0}")]
    Parse(String),
    /// The config parsed but a field violates its contract.
    #[error("config validation error: {0}")]
    Validation(String),
    /// File-system failure, tagged with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// A verification routine failed.
    #[error("verification error: {0}")]
    Verify(#[from] theory_verify::VerifyError),
    /// The training engine failed.
    #[error("engine error: {0}")]
    Engine(#[from] distill_engine::EngineError),
    /// A schedule constructor rejected its arguments.
    #[error("schedule error: {0}")]
    Schedule(#[from] sde_teacher::ScheduleError),
    /// A mixture constructor rejected its arguments.
    #[error("teacher error: {0}")]
    Mixture(#[from] sde_teacher::MixtureError),
    /// A divergence or quadrature primitive rejected its arguments.
    #[error("divergence error: {0}")]
    Divergence(#[from] fdivergence::DivergenceError),
}

impl RunnerError {
    /// Wrap an I/O error with the path that produced it.
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        RunnerError::Io { path: path.display().to_string(), source }
    }
}
