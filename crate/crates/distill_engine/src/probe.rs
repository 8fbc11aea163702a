//! Standalone density-ratio probe: train a time-conditioned discriminator
//! between two known densities at one fixed diffusion time, so its logits
//! can be read as a log density ratio and checked against the closed form.

use autodiff_nn::{
    collect_mlp_grad, mlp_leaves, Activation, AdamState, DetRng, MlpSpec, ParamStore, Tape,
    Tensor, TimeEmbedding,
};
use sde_teacher::{GaussianMixtureDensity, SdeSchedule};

use crate::losses::{disc_logits_values, discriminator_bce_node};
use crate::teacher_rows::diffuse_values;
use crate::EngineError;

/// Settings for [`train_ratio_probe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioProbeConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    /// The single diffusion time both batches are perturbed to.
    pub t: f64,
    pub seed: u64,
}

impl Default for RatioProbeConfig {
    fn default() -> Self {
        RatioProbeConfig {
            steps: 2000,
            batch_size: 256,
            hidden: 128,
            learning_rate: 1e-3,
            t: 1e-3,
            seed: 0,
        }
    }
}

impl RatioProbeConfig {
    fn validate(&self, schedule: &SdeSchedule) -> Result<(), EngineError> {
        if self.batch_size < 2 {
            return Err(EngineError::Config(format!(
                "probe batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.hidden == 0 {
            return Err(EngineError::Config("probe hidden width must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(EngineError::Config(format!(
                "probe learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(self.t >= schedule.t_min() && self.t <= schedule.horizon_t()) {
            return Err(EngineError::Config(format!(
                "probe time {} outside [{}, {}]",
                self.t,
                schedule.t_min(),
                schedule.horizon_t()
            )));
        }
        Ok(())
    }
}

/// A trained ratio probe: the discriminator, its architecture, and the
/// cross-entropy of the final update.
#[derive(Debug, Clone)]
pub struct RatioProbe {
    pub spec: MlpSpec,
    pub params: ParamStore,
    pub final_loss: f64,
}

/// Train a discriminator between `real` (positive class) and `fake`
/// (negative class), both diffused to the fixed time `cfg.t`, so that
/// `exp(logit)` estimates the diffused density ratio `real_t / fake_t`.
pub fn train_ratio_probe(
    real: &GaussianMixtureDensity,
    fake: &GaussianMixtureDensity,
    schedule: &SdeSchedule,
    cfg: &RatioProbeConfig,
) -> Result<RatioProbe, EngineError> {
    if real.dim() != fake.dim() {
        return Err(EngineError::Config(format!(
            "probe densities disagree on dimension: {} vs {}",
            real.dim(),
            fake.dim()
        )));
    }
    cfg.validate(schedule)?;

    let d = real.dim();
    let b = cfg.batch_size;
    let spec = MlpSpec::new(
        d,
        vec![cfg.hidden, cfg.hidden],
        1,
        Activation::SmoothRectifier,
        TimeEmbedding::Sinusoidal(8),
    )?;
    let mut params = ParamStore::init_mlp(&spec, &mut DetRng::stream(cfg.seed, "ratio-probe-init"));
    let mut adam = AdamState::new(params.total_len(), cfg.learning_rate);
    let mut rng = DetRng::stream(cfg.seed, "ratio-probe-loop");
    let t = vec![cfg.t; b];

    let mut final_loss = f64::NAN;
    for _ in 0..cfg.steps {
        let real0 = real.sample(b, &mut rng);
        let fake0 = fake.sample(b, &mut rng);
        let mut eps_r = Tensor::zeros((b, d));
        rng.fill_normal(eps_r.as_slice_mut().expect("contiguous"));
        let mut eps_f = Tensor::zeros((b, d));
        rng.fill_normal(eps_f.as_slice_mut().expect("contiguous"));
        let xr = diffuse_values(schedule, &real0, &eps_r, &t)?;
        let xf = diffuse_values(schedule, &fake0, &eps_f, &t)?;

        let mut tape = Tape::new();
        let nodes = mlp_leaves(&mut tape, &spec, &params, true)?;
        let xr_node = tape.constant(xr);
        let xf_node = tape.constant(xf);
        let (loss, _, _) = discriminator_bce_node(&mut tape, &spec, &nodes, xr_node, xf_node, &t)?;
        final_loss = tape.value(loss)[(0, 0)];
        let grads = tape.backward(loss)?;
        let flat = collect_mlp_grad(&tape, &grads, &nodes);
        adam.step(&mut params, &flat)?;
    }

    Ok(RatioProbe { spec, params, final_loss })
}

impl RatioProbe {
    /// Logits on a 1-D grid at the probe's training time `t`.
    pub fn logits_1d(&self, xs: &[f64], t: f64) -> Result<Vec<f64>, EngineError> {
        let x = autodiff_nn::col(xs);
        let logits = disc_logits_values(&self.spec, &self.params, &x, &vec![t; xs.len()])?;
        Ok((0..xs.len()).map(|i| logits[(i, 0)]).collect())
    }
}
