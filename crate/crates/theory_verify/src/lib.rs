//! Numerical verification of the identities that justify score-based
//! distillation training:
//!
//! * **Expansion** ([`verify_expansion`]) — an f-divergence between two clean
//!   densities equals the time integral of a diffusion-weighted score-gap
//!   rate plus a terminal divergence, checked end to end by quadrature.
//! * **Gradient equality** ([`verify_gradient_equality`]) — the parameter
//!   gradient of that expanded objective equals the reverse-mode gradient of
//!   a tractable stop-gradient surrogate, compared against central finite
//!   differences on an affine generator family.
//! * **Weighting** ([`verify_weighting_equivalence`]) — reweighting the rate
//!   by a cumulative time weight reproduces the weighted divergence
//!   trajectory up to an explicit boundary term.
//! * **Ratios** ([`analytic_density_ratio`], [`optimal_discriminator`]) —
//!   exact density ratios and the Bayes-optimal discriminator used as
//!   references for learned ratio estimators.
//!
//! Every check returns a serializable report carrying both sides of the
//! identity, the residual, and an echo of the configuration that produced it,
//! so runs can be archived and compared byte for byte.

mod expansion;
mod gradient;
mod ratio;
mod report;
mod weighting;

pub use expansion::{expansion_integrand, p_times_weight, score_difference_rate, verify_expansion};
pub use gradient::{
    gaussian_expectation_nodes, surrogate_gradient, verify_gradient_equality, AffineGenerator,
    GradientForm,
};
pub use ratio::{
    analytic_density_ratio, analytic_log_ratio, optimal_discriminator, stable_sigmoid,
};
pub use report::{
    ConfigEcho, GradientReport, RatioResult, VerificationReport, WeightingReport,
};
pub use weighting::{verify_weighting_equivalence, TimeWeight};

pub use fdivergence::QuadratureGrid;

use autodiff_nn::TapeError;
use fdivergence::DivergenceError;
use sde_teacher::{MixtureError, ScheduleError};
use thiserror::Error;

/// Errors surfaced by the verification routines.
#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("mixture density error: {0}")]
    Mixture(#[from] MixtureError),
    #[error("divergence error: {0}")]
    Divergence(#[from] DivergenceError),
    #[error("schedule error: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("autodiff error: {0}")]
    Tape(#[from] TapeError),
    #[error("non-finite integrand at t = {t}, x = {x:?}: {detail}")]
    NonFiniteIntegrand { t: f64, x: Vec<f64>, detail: String },
    #[error("contract violation: {0}")]
    Contract(String),
}
