//! Exact density ratios and the Bayes-optimal discriminator for a pair of
//! analytic densities. These are the references the learned discriminator is
//! judged against: `r(x) = q(x)/p(x)` computed in log space, and
//! `D*(x) = r/(1+r) = sigmoid(log q − log p)`.

use crate::report::RatioResult;
use crate::VerifyError;
use fdivergence::DivergenceSpec;
use sde_teacher::GaussianMixtureDensity;

/// `q(x)/p(x)` computed stably from log-densities, clamped into the spec's
/// ratio window. `clamped` reports whether the raw value fell outside it
/// (deep tails underflow or overflow the ratio long before `f64` does).
pub fn analytic_density_ratio(
    spec: &DivergenceSpec,
    q: &GaussianMixtureDensity,
    p: &GaussianMixtureDensity,
    x: &[f64],
) -> Result<RatioResult, VerifyError> {
    let (lq, _) = q.logdensity_score(x)?;
    let (lp, _) = p.logdensity_score(x)?;
    let raw = (lq - lp).exp();
    let ratio = spec.clamp_ratio(raw);
    Ok(RatioResult { ratio, clamped: ratio != raw })
}

/// Log of the exact ratio, `log q(x) − log p(x)` — the target for a
/// discriminator trained with a logistic objective.
pub fn analytic_log_ratio(
    q: &GaussianMixtureDensity,
    p: &GaussianMixtureDensity,
    x: &[f64],
) -> Result<f64, VerifyError> {
    let (lq, _) = q.logdensity_score(x)?;
    let (lp, _) = p.logdensity_score(x)?;
    Ok(lq - lp)
}

/// Bayes-optimal discriminator `D*(x) = q/(q+p)`, evaluated as a stable
/// sigmoid of the log-ratio.
pub fn optimal_discriminator(
    q: &GaussianMixtureDensity,
    p: &GaussianMixtureDensity,
    x: &[f64],
) -> Result<f64, VerifyError> {
    let logit = analytic_log_ratio(q, p, x)?;
    Ok(stable_sigmoid(logit))
}

/// `1/(1+e^{-z})` without overflow on either tail.
pub fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
