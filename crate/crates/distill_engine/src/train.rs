//! The training loop: alternating discriminator, fake-score, and generator
//! updates with periodic metric evaluation.
//!
//! Each outer step runs the configured update counts in a fixed order
//! (discriminator, then fake score, then generator), every stochastic draw
//! coming from one named stream of the run seed, so a whole run is a pure
//! function of its configuration. If any update produces a non-finite loss
//! or gradient the loop stops and returns the state from the last fully
//! completed step together with an aborted report.

use autodiff_nn::{AdamState, DetRng, MlpSpec, ParamStore, Tensor};
use fdivergence::DivergenceSpec;
use metrics::{mode_coverage, sliced_wasserstein};
use sde_teacher::{GaussianMixtureDensity, SdeSchedule};
use serde::{Deserialize, Serialize};

use crate::config::{FakeScoreSource, RatioSource, TimeSampler, TrainConfig};
use crate::generator::Generator;
use crate::losses::{
    discriminator_bce_node, dsm_loss_node, uni_instruct_loss, FakeScoreInput, GanInput, GenBatch,
    GenLossParts, LossBreakdown, RatioInput, TracedGenLoss,
};
use crate::teacher_rows::diffuse_values;
use crate::EngineError;

/// Distance metric settings used at evaluation checkpoints.
pub const SW_PROJECTIONS: usize = 64;
/// A mode counts as hit within this many component standard deviations.
pub const MODE_RADIUS_SIGMAS: f64 = 3.0;
/// A mode counts as covered above this sample fraction.
pub const MODE_THRESHOLD: f64 = 0.01;

/// Mutable training state: the three parameter stores, their optimizer
/// moments, and the loop's random stream.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub iteration: usize,
    pub generator: ParamStore,
    pub fake: ParamStore,
    pub disc: ParamStore,
    adam_gen: AdamState,
    adam_fake: AdamState,
    adam_disc: AdamState,
    rng: DetRng,
}

/// One evaluation checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub l_sim: f64,
    pub l_di: f64,
    pub l_gan: f64,
    pub l_dsm: f64,
    pub l_disc: f64,
    pub sw_distance: f64,
    pub modes_covered: usize,
    pub ratio_median: f64,
}

/// Outcome of a run: checkpoint rows plus summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<MetricRow>,
    pub iterations_run: usize,
    pub best_sw: Option<f64>,
    pub best_sw_iteration: Option<usize>,
    pub final_sw: Option<f64>,
    pub final_modes_covered: Option<usize>,
    /// Ratio evaluations clamped at either bound, summed over the last
    /// generator update of every completed step.
    pub ratio_clamped_total: usize,
    pub aborted: bool,
    pub abort_detail: Option<String>,
}

/// A teacher, a noise schedule, and a training configuration, ready to run.
pub struct Engine {
    teacher: GaussianMixtureDensity,
    schedule: SdeSchedule,
    cfg: TrainConfig,
    generator: Generator,
    fake_spec: MlpSpec,
    disc_spec: MlpSpec,
}

impl Engine {
    pub fn new(
        teacher: GaussianMixtureDensity,
        schedule: SdeSchedule,
        cfg: TrainConfig,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        let d = teacher.dim();
        let generator = Generator::new(&cfg.generator, cfg.latent_dim, d)?;
        let fake_spec = MlpSpec::new(
            d,
            vec![cfg.fake_hidden, cfg.fake_hidden],
            d,
            autodiff_nn::Activation::Tanh,
            autodiff_nn::TimeEmbedding::Sinusoidal(8),
        )?;
        let disc_spec = MlpSpec::new(
            d,
            vec![cfg.disc_hidden, cfg.disc_hidden],
            1,
            autodiff_nn::Activation::SmoothRectifier,
            autodiff_nn::TimeEmbedding::Sinusoidal(8),
        )?;
        Ok(Self { teacher, schedule, cfg, generator, fake_spec, disc_spec })
    }

    pub fn cfg(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn teacher(&self) -> &GaussianMixtureDensity {
        &self.teacher
    }

    pub fn schedule(&self) -> &SdeSchedule {
        &self.schedule
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn fake_spec(&self) -> &MlpSpec {
        &self.fake_spec
    }

    pub fn disc_spec(&self) -> &MlpSpec {
        &self.disc_spec
    }

    /// Fresh state: independently seeded parameter stores, zeroed optimizer
    /// moments, and the loop stream at its origin.
    pub fn init_state(&self) -> TrainerState {
        let seed = self.cfg.seed;
        let gen_params = self
            .generator
            .init_params(&mut DetRng::stream(seed, "generator-init"));
        let fake_params =
            ParamStore::init_mlp(&self.fake_spec, &mut DetRng::stream(seed, "fake-init"));
        let disc_params =
            ParamStore::init_mlp(&self.disc_spec, &mut DetRng::stream(seed, "disc-init"));
        let lr = self.cfg.learning_rate;
        TrainerState {
            iteration: 0,
            adam_gen: AdamState::new(gen_params.total_len(), lr),
            adam_fake: AdamState::new(fake_params.total_len(), lr),
            adam_disc: AdamState::new(disc_params.total_len(), lr),
            generator: gen_params,
            fake: fake_params,
            disc: disc_params,
            rng: DetRng::stream(seed, "train-loop"),
        }
    }

    /// Divergence in effect at a given outer step (honoring the optional
    /// second stage).
    pub fn divergence_at(&self, iteration: usize) -> DivergenceSpec {
        let kind = match self.cfg.stage2 {
            Some(s2) if iteration >= s2.after_step => s2.divergence,
            _ => self.cfg.divergence,
        };
        DivergenceSpec::new(kind)
    }

    /// Per-sample diffusion times from the configured sampler.
    pub fn sample_times(&self, n: usize, rng: &mut DetRng) -> Vec<f64> {
        let (lo, hi) = (self.schedule.t_min(), self.schedule.horizon_t());
        match self.cfg.time_sampler {
            TimeSampler::Uniform => (0..n).map(|_| rng.uniform(lo, hi)).collect(),
            TimeSampler::LogNormal { mean, std } => (0..n)
                .map(|_| (mean + std * rng.normal()).exp().clamp(lo, hi))
                .collect(),
        }
    }

    /// Draw a full generator batch (times, latents, picks, noise).
    pub fn draw_gen_batch(&self, rng: &mut DetRng) -> GenBatch {
        let b = self.cfg.batch_size;
        let t = self.sample_times(b, rng);
        let (z, picks) = self.generator.draw_latents(b, rng);
        let mut eps = Tensor::zeros((b, self.generator.data_dim()));
        rng.fill_normal(eps.as_slice_mut().expect("contiguous"));
        GenBatch { z, picks, eps, t }
    }

    /// Record the generator objective for an arbitrary state and batch.
    pub fn traced_generator_loss(
        &self,
        state: &TrainerState,
        batch: &GenBatch,
        divergence: DivergenceSpec,
    ) -> Result<TracedGenLoss, EngineError> {
        let fake = match self.cfg.fake_score {
            FakeScoreSource::Network => {
                FakeScoreInput::Network { spec: &self.fake_spec, params: &state.fake }
            }
            FakeScoreSource::Analytic => FakeScoreInput::AnalyticMarginal,
        };
        let ratio = match self.cfg.ratio_source {
            RatioSource::Discriminator => {
                RatioInput::Discriminator { spec: &self.disc_spec, params: &state.disc }
            }
            RatioSource::Analytic => RatioInput::Analytic,
        };
        let gan = (self.cfg.gan_weight > 0.0).then_some(GanInput {
            spec: &self.disc_spec,
            params: &state.disc,
            weight: self.cfg.gan_weight,
        });
        let parts = GenLossParts {
            teacher: &self.teacher,
            schedule: &self.schedule,
            divergence,
            generator: &self.generator,
            gen_params: &state.generator,
            fake,
            ratio,
            gan,
            c_normalize: self.cfg.c_normalize,
        };
        uni_instruct_loss(&parts, batch)
    }

    fn update_discriminator(&self, state: &mut TrainerState) -> Result<f64, EngineError> {
        let b = self.cfg.batch_size;
        let d = self.generator.data_dim();
        let t = self.sample_times(b, &mut state.rng);
        let real0 = self.teacher.sample(b, &mut state.rng);
        let (z, picks) = self.generator.draw_latents(b, &mut state.rng);
        let fake0 = self.generator.forward_values(&state.generator, &z, &picks)?;
        let (x_real, x_fake, t_emb) = if self.cfg.disc_on_clean {
            // Clean pairs; the time feature is pinned to zero.
            (real0, fake0, vec![0.0; b])
        } else {
            let mut eps_r = Tensor::zeros((b, d));
            state.rng.fill_normal(eps_r.as_slice_mut().expect("contiguous"));
            let mut eps_f = Tensor::zeros((b, d));
            state.rng.fill_normal(eps_f.as_slice_mut().expect("contiguous"));
            (
                diffuse_values(&self.schedule, &real0, &eps_r, &t)?,
                diffuse_values(&self.schedule, &fake0, &eps_f, &t)?,
                t,
            )
        };
        let mut tape = autodiff_nn::Tape::new();
        let nodes = autodiff_nn::mlp_leaves(&mut tape, &self.disc_spec, &state.disc, true)?;
        let xr = tape.constant(x_real);
        let xf = tape.constant(x_fake);
        let (loss, _, _) =
            discriminator_bce_node(&mut tape, &self.disc_spec, &nodes, xr, xf, &t_emb)?;
        let value = tape.value(loss)[(0, 0)];
        let grads = tape.backward(loss)?;
        let flat = autodiff_nn::collect_mlp_grad(&tape, &grads, &nodes);
        state.adam_disc.step(&mut state.disc, &flat)?;
        Ok(value)
    }

    fn update_fake(&self, state: &mut TrainerState) -> Result<f64, EngineError> {
        let b = self.cfg.batch_size;
        let d = self.generator.data_dim();
        let t = self.sample_times(b, &mut state.rng);
        let (z, picks) = self.generator.draw_latents(b, &mut state.rng);
        let x0 = self.generator.forward_values(&state.generator, &z, &picks)?;
        let mut eps = Tensor::zeros((b, d));
        state.rng.fill_normal(eps.as_slice_mut().expect("contiguous"));
        let xt = diffuse_values(&self.schedule, &x0, &eps, &t)?;
        let mut sigma = Tensor::zeros((b, 1));
        for (i, &ti) in t.iter().enumerate() {
            sigma[(i, 0)] = self.schedule.transition(ti)?.sigma_t;
        }
        let mut tape = autodiff_nn::Tape::new();
        let nodes = autodiff_nn::mlp_leaves(&mut tape, &self.fake_spec, &state.fake, true)?;
        let xt_node = tape.constant(xt);
        let loss = dsm_loss_node(
            &mut tape,
            &self.fake_spec,
            &nodes,
            xt_node,
            &eps,
            &sigma,
            &t,
            self.cfg.dsm_weight,
        )?;
        let value = tape.value(loss)[(0, 0)];
        let grads = tape.backward(loss)?;
        let flat = autodiff_nn::collect_mlp_grad(&tape, &grads, &nodes);
        state.adam_fake.step(&mut state.fake, &flat)?;
        Ok(value)
    }

    fn update_generator(
        &self,
        state: &mut TrainerState,
        divergence: DivergenceSpec,
    ) -> Result<LossBreakdown, EngineError> {
        let batch = self.draw_gen_batch(&mut state.rng);
        let traced = self.traced_generator_loss(state, &batch, divergence)?;
        let grads = traced.tape.backward(traced.loss)?;
        let flat = traced.gen_nodes.collect_grad(&traced.tape, &grads);
        state.adam_gen.step(&mut state.generator, &flat)?;
        Ok(traced.breakdown)
    }

    /// One outer step: the configured number of discriminator, fake-score,
    /// and generator updates, in that order.
    pub fn step(&self, state: &mut TrainerState) -> Result<LossBreakdown, EngineError> {
        let divergence = self.divergence_at(state.iteration);
        let mut l_disc = 0.0;
        for _ in 0..self.cfg.updates_per_step.discriminator {
            l_disc = self.update_discriminator(state)?;
        }
        let mut l_dsm = 0.0;
        for _ in 0..self.cfg.updates_per_step.fake_score {
            l_dsm = self.update_fake(state)?;
        }
        let mut breakdown = None;
        for _ in 0..self.cfg.updates_per_step.generator {
            breakdown = Some(self.update_generator(state, divergence)?);
        }
        let mut breakdown = breakdown.expect("generator update count validated >= 1");
        breakdown.l_disc = l_disc;
        breakdown.l_dsm = l_dsm;
        state.iteration += 1;
        Ok(breakdown)
    }

    /// Distribution metrics of the current generator: sliced 2-Wasserstein
    /// distance to fresh teacher samples and covered teacher modes. Draws
    /// come from a checkpoint-specific stream, never the training stream.
    pub fn evaluate(&self, state: &TrainerState) -> Result<(f64, usize), EngineError> {
        let n = self.cfg.eval_samples;
        let mut rng = DetRng::stream(self.cfg.seed, &format!("eval-{}", state.iteration));
        let gen_samples = self.generator.sample(&state.generator, n, &mut rng)?;
        let teacher_samples = self.teacher.sample(n, &mut rng);
        let sw = sliced_wasserstein(
            &gen_samples,
            &teacher_samples,
            SW_PROJECTIONS,
            self.cfg.seed ^ state.iteration as u64,
        )?;
        let coverage =
            mode_coverage(&gen_samples, &self.teacher, MODE_RADIUS_SIGMAS, MODE_THRESHOLD)?;
        Ok((sw, coverage.covered_count))
    }

    /// Draw samples from the generator in a given state.
    pub fn sample_generator(
        &self,
        state: &TrainerState,
        n: usize,
        rng: &mut DetRng,
    ) -> Result<Tensor, EngineError> {
        self.generator.sample(&state.generator, n, rng)
    }

    /// Run the configured number of steps from a fresh state.
    pub fn train(&self) -> Result<(TrainerState, RunReport), EngineError> {
        self.train_from(self.init_state())
    }

    /// Run the configured number of steps from an explicit state.
    ///
    /// On a non-finite loss or gradient the loop stops and returns the state
    /// as of the last fully completed step, with the report marked aborted.
    pub fn train_from(
        &self,
        mut state: TrainerState,
    ) -> Result<(TrainerState, RunReport), EngineError> {
        let eval_on = self.cfg.eval_interval > 0;
        let mut rows: Vec<MetricRow> = Vec::new();
        let mut best: Option<(f64, usize)> = None;
        let mut aborted = false;
        let mut abort_detail = None;
        let mut last_good = state.clone();
        let start_iteration = state.iteration;
        let mut ratio_clamped_total = 0usize;

        for _ in 0..self.cfg.steps {
            match self.step(&mut state) {
                Ok(breakdown) => {
                    let finite = breakdown.total.is_finite()
                        && breakdown.l_dsm.is_finite()
                        && breakdown.l_disc.is_finite();
                    if !finite {
                        aborted = true;
                        abort_detail = Some(format!(
                            "non-finite loss at iteration {}: generator {}, \
                             score-matching {}, discriminator {}",
                            state.iteration, breakdown.total, breakdown.l_dsm, breakdown.l_disc
                        ));
                        state = last_good;
                        break;
                    }
                    last_good = state.clone();
                    ratio_clamped_total +=
                        breakdown.ratio_stats.clamped_low + breakdown.ratio_stats.clamped_high;
                    let due = eval_on
                        && (state.iteration % self.cfg.eval_interval == 0
                            || state.iteration == start_iteration + self.cfg.steps);
                    if due {
                        let (sw, modes) = self.evaluate(&state)?;
                        if best.map_or(true, |(b, _)| sw < b) {
                            best = Some((sw, state.iteration));
                        }
                        rows.push(MetricRow {
                            iteration: state.iteration,
                            l_sim: breakdown.l_sim,
                            l_di: breakdown.l_di,
                            l_gan: breakdown.l_gan,
                            l_dsm: breakdown.l_dsm,
                            l_disc: breakdown.l_disc,
                            sw_distance: sw,
                            modes_covered: modes,
                            ratio_median: breakdown.ratio_stats.median,
                        });
                    }
                }
                Err(e) => {
                    aborted = true;
                    abort_detail = Some(e.to_string());
                    state = last_good;
                    break;
                }
            }
        }

        let report = RunReport {
            iterations_run: state.iteration - start_iteration,
            best_sw: best.map(|(sw, _)| sw),
            best_sw_iteration: best.map(|(_, it)| it),
            final_sw: rows.last().map(|r| r.sw_distance),
            final_modes_covered: rows.last().map(|r| r.modes_covered),
            ratio_clamped_total,
            rows,
            aborted,
            abort_detail,
        };
        Ok((state, report))
    }
}

/// CSV header matching [`MetricRow`]'s field order.
pub const METRIC_CSV_HEADER: &str =
    "iteration,l_sim,l_di,l_gan,l_dsm,l_disc,sw_distance,modes_covered,ratio_median";

impl MetricRow {
    /// One CSV line in [`METRIC_CSV_HEADER`] order.
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.l_sim,
            self.l_di,
            self.l_gan,
            self.l_dsm,
            self.l_disc,
            self.sw_distance,
            self.modes_covered,
            self.ratio_median
        )
    }
}

/// Convenience teacher: the standard eight-mode ring benchmark.
pub fn ring_teacher() -> GaussianMixtureDensity {
    GaussianMixtureDensity::ring(8, 1.5, 0.12).expect("valid ring parameters")
}
