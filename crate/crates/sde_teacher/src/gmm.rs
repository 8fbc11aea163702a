//! Gaussian mixtures with diagonal covariances: exact log-densities, scores,
//! score Jacobians, forward-diffused marginals, and sampling.
//!
//! These mixtures play the teacher's data distribution: because a Gaussian
//! kernel applied to a Gaussian mixture is again a Gaussian mixture, every
//! diffused marginal, score, and score Jacobian is available in closed form,
//! replacing a pretrained score network with exact mathematics.

use crate::schedule::{ScheduleError, SdeSchedule};
use autodiff_nn::{DetRng, Tensor};
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MixtureError {
    #[error("invalid mixture: {0}")]
    Invalid(String),
    #[error("point has dim {got}, mixture has dim {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// One mixture component: `weight * N(mean, diag(diag_cov))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub diag_cov: Vec<f64>,
}

/// A finite Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureDensity {
    dim: usize,
    components: Vec<Component>,
    /// Per-component `log w_k - 1/2 sum_d ln(2 pi v_kd)`.
    log_norms: Vec<f64>,
}

const LN_2PI: f64 = 1.8378770664093453;

impl GaussianMixtureDensity {
    pub fn new(components: Vec<Component>) -> Result<Self, MixtureError> {
        if components.is_empty() {
            return Err(MixtureError::Invalid("mixture needs at least one component".into()));
        }
        let dim = components[0].mean.len();
        if dim == 0 {
            return Err(MixtureError::Invalid("dimension must be >= 1".into()));
        }
        let mut weight_sum = 0.0;
        for (k, c) in components.iter().enumerate() {
            if c.mean.len() != dim || c.diag_cov.len() != dim {
                return Err(MixtureError::Invalid(format!(
                    "component {k}: mean/cov dims must all equal {dim}"
                )));
            }
            if !(c.weight > 0.0) {
                return Err(MixtureError::Invalid(format!(
                    "component {k}: weight must be > 0, got {}",
                    c.weight
                )));
            }
            if c.diag_cov.iter().any(|&v| !(v > 0.0)) {
                return Err(MixtureError::Invalid(format!(
                    "component {k}: all variances must be > 0"
                )));
            }
            weight_sum += c.weight;
        }
        if (weight_sum - 1.0).abs() > 1e-12 {
            return Err(MixtureError::Invalid(format!(
                "weights must sum to 1 within 1e-12, got {weight_sum}"
            )));
        }
        let log_norms = components
            .iter()
            .map(|c| {
                c.weight.ln() - 0.5 * c.diag_cov.iter().map(|v| LN_2PI + v.ln()).sum::<f64>()
            })
            .collect();
        Ok(GaussianMixtureDensity { dim, components, log_norms })
    }

    /// Single isotropic Gaussian `N(mean, var I)`.
    pub fn gaussian(mean: Vec<f64>, var: f64) -> Result<Self, MixtureError> {
        let d = mean.len();
        Self::new(vec![Component { weight: 1.0, mean, diag_cov: vec![var; d] }])
    }

    /// `k` equal-weight isotropic modes on a circle of given radius.
    pub fn ring(k: usize, radius: f64, sd: f64) -> Result<Self, MixtureError> {
        if k == 0 {
            return Err(MixtureError::Invalid("ring needs k >= 1".into()));
        }
        let comps = (0..k)
            .map(|i| {
                let theta = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                Component {
                    weight: 1.0 / k as f64,
                    mean: vec![radius * theta.cos(), radius * theta.sin()],
                    diag_cov: vec![sd * sd, sd * sd],
                }
            })
            .collect();
        Self::new(comps)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), MixtureError> {
        if x.len() != self.dim {
            return Err(MixtureError::DimMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    /// Per-component joint log-likelihoods `log(w_k N_k(x))`.
    fn component_logliks(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .zip(&self.log_norms)
            .map(|(c, &ln)| {
                let quad: f64 = x
                    .iter()
                    .zip(&c.mean)
                    .zip(&c.diag_cov)
                    .map(|((xi, mi), vi)| (xi - mi) * (xi - mi) / vi)
                    .sum();
                ln - 0.5 * quad
            })
            .collect()
    }

    /// Log-density and score at one point (log-sum-exp stabilized).
    pub fn logdensity_score(&self, x: &[f64]) -> Result<(f64, Vec<f64>), MixtureError> {
        self.check_dim(x)?;
        let ll = self.component_logliks(x);
        let max = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + ll.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let mut score = vec![0.0; self.dim];
        for (c, &l) in self.components.iter().zip(&ll) {
            let resp = (l - lse).exp();
            for d in 0..self.dim {
                score[d] += resp * (c.mean[d] - x[d]) / c.diag_cov[d];
            }
        }
        Ok((lse, score))
    }

    pub fn logdensity(&self, x: &[f64]) -> Result<f64, MixtureError> {
        Ok(self.logdensity_score(x)?.0)
    }

    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>, MixtureError> {
        Ok(self.logdensity_score(x)?.1)
    }

    /// Jacobian of the score (the log-density Hessian); symmetric `(d, d)`.
    pub fn score_jacobian(&self, x: &[f64]) -> Result<Tensor, MixtureError> {
        self.check_dim(x)?;
        let d = self.dim;
        let ll = self.component_logliks(x);
        let max = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + ll.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let mut s = vec![0.0; d];
        let mut h = Array2::<f64>::zeros((d, d));
        for (c, &l) in self.components.iter().zip(&ll) {
            let resp = (l - lse).exp();
            let sk: Vec<f64> = (0..d).map(|i| (c.mean[i] - x[i]) / c.diag_cov[i]).collect();
            for i in 0..d {
                s[i] += resp * sk[i];
                h[(i, i)] -= resp / c.diag_cov[i];
                for j in 0..d {
                    h[(i, j)] += resp * sk[i] * sk[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                h[(i, j)] -= s[i] * s[j];
            }
        }
        Ok(h)
    }

    /// Batched log-density `(B,1)` and score `(B,d)`.
    pub fn logdensity_score_batch(&self, x: &Tensor) -> Result<(Tensor, Tensor), MixtureError> {
        let b = x.nrows();
        if x.ncols() != self.dim {
            return Err(MixtureError::DimMismatch { expected: self.dim, got: x.ncols() });
        }
        let mut logp = Tensor::zeros((b, 1));
        let mut score = Tensor::zeros((b, self.dim));
        let mut row = vec![0.0; self.dim];
        for i in 0..b {
            for (d, v) in row.iter_mut().enumerate() {
                *v = x[(i, d)];
            }
            let (lp, s) = self.logdensity_score(&row)?;
            logp[(i, 0)] = lp;
            for (d, sv) in s.into_iter().enumerate() {
                score[(i, d)] = sv;
            }
        }
        Ok((logp, score))
    }

    pub fn score_batch(&self, x: &Tensor) -> Result<Tensor, MixtureError> {
        Ok(self.logdensity_score_batch(x)?.1)
    }

    /// Exact marginal of `x_t` when `x_0` follows this mixture: component `k`
    /// becomes `N(alpha_t mu_k, alpha_t^2 Sigma_k + sigma_t^2 I)`.
    pub fn diffuse(&self, schedule: &SdeSchedule, t: f64) -> Result<Self, MixtureError> {
        let p = schedule.transition(t)?;
        let comps = self
            .components
            .iter()
            .map(|c| Component {
                weight: c.weight,
                mean: c.mean.iter().map(|m| p.alpha_t * m).collect(),
                diag_cov: c
                    .diag_cov
                    .iter()
                    .map(|v| p.alpha_t * p.alpha_t * v + p.sigma_t * p.sigma_t)
                    .collect(),
            })
            .collect();
        Self::new(comps)
    }

    /// Draw `n` points; `(n, dim)` tensor.
    pub fn sample(&self, n: usize, rng: &mut DetRng) -> Tensor {
        let mut out = Tensor::zeros((n, self.dim));
        for i in 0..n {
            let mut u = rng.next_f64();
            let mut k = self.components.len() - 1;
            for (j, c) in self.components.iter().enumerate() {
                if u < c.weight {
                    k = j;
                    break;
                }
                u -= c.weight;
            }
            let c = &self.components[k];
            for d in 0..self.dim {
                out[(i, d)] = c.mean[d] + c.diag_cov[d].sqrt() * rng.normal();
            }
        }
        out
    }

    /// Mixture mean (weighted component means).
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in &self.components {
            for d in 0..self.dim {
                m[d] += c.weight * c.mean[d];
            }
        }
        m
    }

    /// Numerically integrate the density over a wide box (dims 1 and 2 only);
    /// should return ~1.
    pub fn normalization_quadrature(&self, n_per_axis: usize) -> Result<f64, MixtureError> {
        if self.dim > 2 {
            return Err(MixtureError::Invalid(
                "normalization check supported only for dim <= 2".into(),
            ));
        }
        // Box: union of component means ± 10 std on each axis.
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for c in &self.components {
            for d in 0..self.dim {
                let sd = c.diag_cov[d].sqrt();
                lo[d] = lo[d].min(c.mean[d] - 10.0 * sd);
                hi[d] = hi[d].max(c.mean[d] + 10.0 * sd);
            }
        }
        let n = n_per_axis.max(2);
        if self.dim == 1 {
            let h = (hi[0] - lo[0]) / (n - 1) as f64;
            let mut total = 0.0;
            for i in 0..n {
                let x = lo[0] + i as f64 * h;
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                total += w * self.logdensity(&[x])?.exp();
            }
            Ok(total * h)
        } else {
            let hx = (hi[0] - lo[0]) / (n - 1) as f64;
            let hy = (hi[1] - lo[1]) / (n - 1) as f64;
            let mut total = 0.0;
            for i in 0..n {
                let x = lo[0] + i as f64 * hx;
                let wx = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                for j in 0..n {
                    let y = lo[1] + j as f64 * hy;
                    let wy = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                    total += wx * wy * self.logdensity(&[x, y])?.exp();
                }
            }
            Ok(total * hx * hy)
        }
    }
}

/// Push a batch forward through the transition kernel using fresh noise:
/// returns `(x_t, eps)` with `x_t = alpha_t x0 + sigma_t eps`.
pub fn diffuse_sample(
    schedule: &SdeSchedule,
    x0: &Tensor,
    t: f64,
    rng: &mut DetRng,
) -> Result<(Tensor, Tensor), ScheduleError> {
    let p = schedule.transition(t)?;
    let mut eps = Tensor::zeros(x0.raw_dim());
    for v in eps.iter_mut() {
        *v = rng.normal();
    }
    let xt = x0.mapv(|x| p.alpha_t * x) + &eps.mapv(|e| p.sigma_t * e);
    Ok((xt, eps))
}

/// Deterministic form given the noise: `x_t = alpha_t x0 + sigma_t noise`.
pub fn diffuse_with_noise(
    schedule: &SdeSchedule,
    x0: &Tensor,
    t: f64,
    noise: &Tensor,
) -> Result<Tensor, MixtureError> {
    if noise.raw_dim() != x0.raw_dim() {
        return Err(MixtureError::DimMismatch { expected: x0.ncols(), got: noise.ncols() });
    }
    let p = schedule.transition(t)?;
    Ok(x0.mapv(|x| p.alpha_t * x) + &noise.mapv(|e| p.sigma_t * e))
}

/// Score of the Gaussian transition kernel:
/// `grad_{x_t} log q(x_t | x_0) = -(x_t - alpha_t x0) / sigma_t^2`.
///
/// Fails at `t = 0` where the kernel degenerates to a point mass.
pub fn conditional_score(
    schedule: &SdeSchedule,
    xt: &Tensor,
    x0: &Tensor,
    t: f64,
) -> Result<Tensor, MixtureError> {
    if xt.raw_dim() != x0.raw_dim() {
        return Err(MixtureError::DimMismatch { expected: x0.ncols(), got: xt.ncols() });
    }
    let p = schedule.transition_nonsingular(t)?;
    let inv_var = 1.0 / (p.sigma_t * p.sigma_t);
    Ok((x0.mapv(|x| p.alpha_t * x) - xt).mapv(|d| d * inv_var))
}
