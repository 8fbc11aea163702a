//! Analytic diffusion teacher: forward SDE schedules, Gaussian transition
//! kernels, and Gaussian-mixture data distributions whose diffused
//! marginals, scores, and score Jacobians are available in closed form.
//!
//! This replaces the "pretrained diffusion model" of a real distillation
//! pipeline with exact mathematics, so that everything downstream (loss
//! identities, gradient identities, training behavior) can be checked
//! against oracles rather than another learned model.

pub mod gmm;
pub mod schedule;
pub mod tape_ops;

pub use gmm::{
    conditional_score, diffuse_sample, diffuse_with_noise, Component, GaussianMixtureDensity,
    MixtureError,
};
pub use schedule::{ScheduleError, SdeSchedule, TransitionParams};
pub use tape_ops::{gmm_logdensity_node, gmm_score_node};
