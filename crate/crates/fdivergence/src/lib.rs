//! The f-divergence family for score-based distillation: five convex
//! generators with exact derivatives to fourth order, the curvature coupling
//! weights built from them, mode-seeking classification, Gauss–Legendre /
//! trapezoid quadrature utilities, and direct quadrature evaluation of
//! `D_f(q‖p)` on Gaussian mixtures.
//!
//! Orientation convention: every divergence here is `D_f(q‖p) = ∫ p f(q/p)`
//! with `p` carrying the expectation. Plugging the reverse generator
//! `f(r) = -ln r` therefore yields `KL(p‖q)`; reports label orientation
//! explicitly.

pub mod divergence;
pub mod kinds;
pub mod quad;

pub use divergence::divergence_quadrature;
pub use kinds::{
    curvature, curvature_c1, curvature_c2_from_derivatives, f_eval, mode_seeking_class,
    pf_from_logs, weight_r2f2, CurvatureWeights, DivergenceError, DivergenceKind, DivergenceSpec,
    ModeSeekingClass,
};
pub use quad::{gauss_legendre, gauss_legendre_unit, trapezoid, QuadratureGrid};
