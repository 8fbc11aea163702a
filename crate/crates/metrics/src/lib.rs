//! Distribution-quality metrics for toy-scale generative models: mode
//! coverage against a known mixture, sliced 2-Wasserstein distance, and a
//! smoothed histogram KL estimate. All are deterministic given a seed and
//! operate on row-major sample matrices (one sample per row).

mod coverage;
mod histogram;
mod sliced;

pub use coverage::{mode_coverage, ModeCoverageReport};
pub use histogram::histogram_kl;
pub use sliced::{sliced_wasserstein, wasserstein_1d};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty sample set")]
    EmptySamples,
    #[error("sample dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("only 1-D and 2-D samples are supported, got dim {0}")]
    UnsupportedDim(usize),
    #[error("invalid parameter: {0}")]
    BadParam(String),
}
