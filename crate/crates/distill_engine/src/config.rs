//! Training configuration for the one-step distillation engine.
//!
//! A [`TrainConfig`] pins every stochastic and numeric choice of a run so that
//! two runs with identical configs produce bit-identical trajectories.

use fdivergence::DivergenceKind;
use serde::{Deserialize, Serialize};

use crate::EngineError;

/// Weight `lambda(t)` applied to the score-matching regression residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsmWeight {
    /// `lambda(t) = sigma_t^2`: the residual reduces to noise prediction.
    Sigma2,
    /// `lambda(t) = 1`: raw score-space residual.
    One,
}

/// Distribution from which per-sample diffusion times are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeSampler {
    /// Uniform on `[t_min, T]`.
    Uniform,
    /// `exp(mean + std * n)` with `n ~ N(0,1)`, clamped into `[t_min, T]`.
    /// Emphasizes a band of times without importance correction.
    LogNormal { mean: f64, std: f64 },
}

/// Where the density ratio fed to the curvature weights comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioSource {
    /// `r = exp(logit)` from the trained discriminator.
    Discriminator,
    /// Exact ratio of the diffused generator marginal to the diffused
    /// teacher marginal. Requires a generator with a closed-form marginal.
    Analytic,
}

/// Where the frozen estimate of the generator-marginal score comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FakeScoreSource {
    /// The regression-trained noise-prediction network.
    Network,
    /// The exact diffused score of the generator's closed-form marginal
    /// (oracle mode). Requires the scale_loc generator.
    Analytic,
}

/// Generator architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorArch {
    /// Latent Gaussian pushed through a tanh MLP.
    Mlp { hidden: usize },
    /// Mixture reparameterization: a component is picked per sample and the
    /// latent is mapped through that component's learnable scale and
    /// location. Closed-form marginal, so analytic ratio mode is available.
    ScaleLoc { components: usize },
}

/// How many optimizer updates each sub-network receives per outer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpdatesPerStep {
    pub discriminator: usize,
    pub fake_score: usize,
    pub generator: usize,
}

impl Default for UpdatesPerStep {
    fn default() -> Self {
        Self { discriminator: 1, fake_score: 2, generator: 1 }
    }
}

/// Optional divergence switch partway through a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTwo {
    /// Divergence used from `after_step` onwards.
    pub divergence: DivergenceKind,
    /// Outer step index at which the switch happens.
    pub after_step: usize,
}

/// Full specification of a distillation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Divergence whose curvature weights drive the generator update.
    pub divergence: DivergenceKind,
    /// Coefficient on the non-saturating adversarial term (`>= 0`).
    pub gan_weight: f64,
    /// Weight on the score-matching residual for the fake-score network.
    pub dsm_weight: DsmWeight,
    /// Per-sample diffusion-time distribution.
    pub time_sampler: TimeSampler,
    /// Samples per update (`>= 2`).
    pub batch_size: usize,
    /// Outer steps to run (`0` is a no-op that returns the initial state).
    pub steps: usize,
    /// Update counts per outer step.
    pub updates_per_step: UpdatesPerStep,
    /// Master seed; all streams are derived from it.
    pub seed: u64,
    /// Ratio source for the curvature weights.
    pub ratio_source: RatioSource,
    /// Fake-score source for the generator update.
    pub fake_score: FakeScoreSource,
    /// Normalize curvature coefficients to median absolute value one per
    /// batch. Off by default.
    pub c_normalize: bool,
    /// Generator architecture.
    pub generator: GeneratorArch,
    /// Latent dimension fed to the generator.
    pub latent_dim: usize,
    /// Hidden width of the fake-score network.
    pub fake_hidden: usize,
    /// Hidden width of the discriminator.
    pub disc_hidden: usize,
    /// Adam learning rate shared by all three networks.
    pub learning_rate: f64,
    /// Outer-step interval between metric evaluations (`0` disables them).
    pub eval_interval: usize,
    /// Samples drawn per side when evaluating distribution metrics.
    pub eval_samples: usize,
    /// Train the discriminator on clean rather than diffused pairs.
    pub disc_on_clean: bool,
    /// Optional divergence switch partway through the run.
    pub stage2: Option<StageTwo>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            divergence: DivergenceKind::Rkl,
            gan_weight: 0.0,
            dsm_weight: DsmWeight::Sigma2,
            time_sampler: TimeSampler::Uniform,
            batch_size: 128,
            steps: 20_000,
            updates_per_step: UpdatesPerStep::default(),
            seed: 0,
            ratio_source: RatioSource::Discriminator,
            fake_score: FakeScoreSource::Network,
            c_normalize: false,
            generator: GeneratorArch::Mlp { hidden: 64 },
            latent_dim: 2,
            fake_hidden: 128,
            disc_hidden: 128,
            learning_rate: 1e-3,
            eval_interval: 1000,
            eval_samples: 4096,
            disc_on_clean: false,
            stage2: None,
        }
    }
}

impl TrainConfig {
    /// Checks every field against its contract, returning the first
    /// violation as a configuration error naming the field.
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.gan_weight >= 0.0) {
            return Err(EngineError::Config(format!(
                "gan_weight must be >= 0, got {}",
                self.gan_weight
            )));
        }
        if self.batch_size < 2 {
            return Err(EngineError::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if let TimeSampler::LogNormal { std, .. } = self.time_sampler {
            if !(std > 0.0) {
                return Err(EngineError::Config(format!(
                    "time_sampler log-normal std must be > 0, got {std}"
                )));
            }
        }
        if self.updates_per_step.generator == 0 {
            return Err(EngineError::Config(
                "updates_per_step.generator must be >= 1".into(),
            ));
        }
        if let GeneratorArch::Mlp { hidden } = self.generator {
            if hidden == 0 {
                return Err(EngineError::Config("generator hidden width must be >= 1".into()));
            }
        }
        if let GeneratorArch::ScaleLoc { components } = self.generator {
            if components == 0 {
                return Err(EngineError::Config(
                    "generator component count must be >= 1".into(),
                ));
            }
        }
        if self.latent_dim == 0 {
            return Err(EngineError::Config("latent_dim must be >= 1".into()));
        }
        if self.fake_hidden == 0 || self.disc_hidden == 0 {
            return Err(EngineError::Config("network hidden widths must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EngineError::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.eval_interval > 0 && self.eval_samples < 2 {
            return Err(EngineError::Config(format!(
                "eval_samples must be >= 2 when evaluation is on, got {}",
                self.eval_samples
            )));
        }
        let needs_marginal = matches!(self.ratio_source, RatioSource::Analytic)
            || matches!(self.fake_score, FakeScoreSource::Analytic);
        if needs_marginal && matches!(self.generator, GeneratorArch::Mlp { .. }) {
            return Err(EngineError::Config(
                "analytic ratio/fake-score modes require a generator with a \
                 closed-form marginal (scale_loc), not an MLP"
                    .into(),
            ));
        }
        Ok(())
    }
}
