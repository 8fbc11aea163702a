//! Serializable result types for the verification operations.

use serde::{Deserialize, Serialize};

/// Echo of the settings a verification ran with, for self-describing output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub divergence: String,
    pub schedule: String,
    pub space_points: usize,
    pub space_extent: f64,
    pub time_points: usize,
}

/// Both sides of the expansion identity plus the residual breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Direct quadrature of the divergence between the clean distributions.
    pub lhs: f64,
    /// Time integral of the weighted score-difference expectation plus the
    /// terminal divergence.
    pub rhs: f64,
    /// Divergence still present at the time horizon (not assumed zero).
    pub terminal_term: f64,
    /// `|lhs - rhs|`.
    pub residual: f64,
    /// Residual over `max(|lhs|, |rhs|, 1e-12)`.
    pub rel_residual: f64,
    /// `(t, integrand)` at each interior time node.
    pub per_time_integrand: Vec<(f64, f64)>,
    pub config_echo: ConfigEcho,
}

/// Finite-difference vs surrogate parameter gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    /// `d/d(theta_s, theta_b)` of the expanded divergence, by central
    /// finite differences of the time-space quadrature.
    pub lhs_grad: Vec<f64>,
    /// Gradient of the tractable surrogate built with frozen fields,
    /// by reverse-mode differentiation through the reparameterized sample.
    pub rhs_grad: Vec<f64>,
    /// `‖lhs − rhs‖ / max(‖lhs‖, 1e-12)`.
    pub rel_err: f64,
    /// Which surrogate form produced `rhs_grad`.
    pub gradient_form: String,
    pub config_echo: ConfigEcho,
}

/// Both sides of the time-reweighting equivalence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingReport {
    /// Accumulated-weight side: `∫ ½g²(t) W(t) · rate(t) dt`.
    pub lhs: f64,
    /// Instantaneous side: `∫ w(t) D_f(q_t‖p_t) dt − W(T) D_f(q_T‖p_T)`.
    pub rhs: f64,
    pub residual: f64,
    /// Residual over `max(|rhs|, 1e-12)`.
    pub rel_residual: f64,
    /// The boundary correction `W(T) · D_f(q_T‖p_T)`.
    pub boundary_term: f64,
    pub weight: String,
    pub config_echo: ConfigEcho,
}

/// An analytic density ratio, possibly clamped where the denominator
/// underflowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioResult {
    pub ratio: f64,
    pub clamped: bool,
}
