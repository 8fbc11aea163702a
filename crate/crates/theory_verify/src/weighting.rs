//! Time-weighted objectives: reweighting the dissipation integrand by the
//! cumulative weight `W(t) = ∫₀ᵗ w(u) du` matches, up to an explicit boundary
//! term, the divergence trajectory averaged with `w(t)` itself:
//!
//! ```text
//! ∫₀ᵀ W(t) · ½ g²(t) · rate(t) dt
//!     = ∫₀ᵀ w(t) · D_f(q_t ‖ p_t) dt  −  W(T) · D_f(q_T ‖ p_T)
//! ```
//!
//! which follows from integration by parts against the exact trajectory
//! derivative `d/dt D_f(q_t‖p_t) = −½ g²(t) · rate(t)`. Both sides are
//! evaluated by quadrature over the **full** time interval `[0, T]`; the
//! cumulative weight is itself integrated numerically so that the identity is
//! checked without assuming any closed form for `W`.

use crate::expansion::{echo, score_difference_rate};
use crate::report::WeightingReport;
use crate::VerifyError;
use fdivergence::{divergence_quadrature, gauss_legendre, DivergenceSpec, QuadratureGrid};
use sde_teacher::{GaussianMixtureDensity, SdeSchedule};

/// Scalar time weight `w(t)` applied to the divergence trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeWeight {
    /// `w(t) ≡ 0` — both sides vanish.
    Zero,
    /// `w(t) ≡ 1` — uniform trajectory average, `W(t) = t`.
    One,
    /// `w(t) = 2t` — late-time emphasis, `W(t) = t²`.
    TwoT,
}

impl TimeWeight {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeWeight::Zero => 0.0,
            TimeWeight::One => 1.0,
            TimeWeight::TwoT => 2.0 * t,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TimeWeight::Zero => "zero",
            TimeWeight::One => "one",
            TimeWeight::TwoT => "two_t",
        }
    }

    /// `W(t) = ∫₀ᵗ w(u) du` by 32-node Gauss–Legendre (exact here, but kept
    /// numeric so arbitrary weights slot in without code changes).
    pub fn cumulative(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        gauss_legendre(32, 0.0, t).into_iter().map(|(u, w)| w * self.eval(u)).sum()
    }
}

/// Check the weighted trajectory identity for one divergence and weight.
pub fn verify_weighting_equivalence(
    schedule: &SdeSchedule,
    q0: &GaussianMixtureDensity,
    p0: &GaussianMixtureDensity,
    spec: &DivergenceSpec,
    grid: &QuadratureGrid,
    weight: TimeWeight,
) -> Result<WeightingReport, VerifyError> {
    let (_, t_hi) = grid.time_window();
    let nodes = gauss_legendre(grid.time_points, 0.0, t_hi);

    let mut lhs = 0.0;
    let mut traj = 0.0;
    for &(t, w) in &nodes {
        let rate = score_difference_rate(
            spec.kind,
            q0,
            p0,
            schedule,
            t,
            grid.space_points,
            grid.space_extent,
        )?;
        lhs += w * weight.cumulative(t) * 0.5 * schedule.g2(t)? * rate;

        let qt = q0.diffuse(schedule, t)?;
        let pt = p0.diffuse(schedule, t)?;
        traj += w * weight.eval(t) * divergence_quadrature(spec, &qt, &pt, grid)?;
    }

    let q_end = q0.diffuse(schedule, t_hi)?;
    let p_end = p0.diffuse(schedule, t_hi)?;
    let boundary_term = weight.cumulative(t_hi) * divergence_quadrature(spec, &q_end, &p_end, grid)?;
    let rhs = traj - boundary_term;

    let residual = lhs - rhs;
    let rel_residual = residual.abs() / rhs.abs().max(1e-12);
    Ok(WeightingReport {
        lhs,
        rhs,
        residual,
        rel_residual,
        boundary_term,
        weight: weight.name().to_string(),
        config_echo: echo(spec, schedule, grid),
    })
}
