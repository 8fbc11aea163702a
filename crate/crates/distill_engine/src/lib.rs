//! One-step distillation of a diffusion teacher.
//!
//! A single-pass generator is trained to match an analytic Gaussian-mixture
//! teacher by descending a divergence between its diffused output
//! distribution and the teacher's, through three interleaved updates:
//!
//! * a **discriminator** learns the diffused density ratio from teacher and
//!   generator samples;
//! * a **fake-score network** regresses the generator's own diffused score
//!   by denoising score matching;
//! * the **generator** descends the curvature-weighted score-product
//!   objective built from both frozen estimates (see [`losses`]).
//!
//! Closed-form oracle modes (exact ratio and exact fake score, available for
//! generators with closed-form marginals) replace the learned estimates for
//! verification, making the engine's gradient directly comparable to
//! quadrature references.

pub mod config;
pub mod generator;
pub mod losses;
pub mod probe;
pub mod teacher_rows;
pub mod train;

pub use config::{
    DsmWeight, FakeScoreSource, GeneratorArch, RatioSource, StageTwo, TimeSampler, TrainConfig,
    UpdatesPerStep,
};
pub use generator::{Generator, GeneratorNodes};
pub use losses::{
    clamp_ratios, density_ratio, disc_logits_values, discriminator_bce_node, dsm_loss_node,
    dsm_loss_value, median, uni_instruct_loss, FakeScoreInput, GanInput, GenBatch, GenLossParts,
    LossBreakdown, RatioInput, RatioStats, TracedGenLoss,
};
pub use probe::{train_ratio_probe, RatioProbe, RatioProbeConfig};
pub use teacher_rows::{diffuse_values, rowwise_score_node, RowwiseMarginals};
pub use train::{
    ring_teacher, Engine, MetricRow, RunReport, TrainerState, METRIC_CSV_HEADER,
    MODE_RADIUS_SIGMAS, MODE_THRESHOLD, SW_PROJECTIONS,
};

use thiserror::Error;

/// Errors from engine construction, loss evaluation, and training.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite curvature coefficient for sample {sample_index} at ratio {ratio}: {detail}")]
    NumericCoefficient { sample_index: usize, ratio: f64, detail: String },
    #[error("internal contract violation: {0}")]
    Internal(String),
    #[error(transparent)]
    Network(#[from] autodiff_nn::NnError),
    #[error(transparent)]
    Tape(#[from] autodiff_nn::TapeError),
    #[error(transparent)]
    Optimizer(#[from] autodiff_nn::AdamError),
    #[error(transparent)]
    Mixture(#[from] sde_teacher::gmm::MixtureError),
    #[error(transparent)]
    Schedule(#[from] sde_teacher::ScheduleError),
    #[error(transparent)]
    Divergence(#[from] fdivergence::DivergenceError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}
