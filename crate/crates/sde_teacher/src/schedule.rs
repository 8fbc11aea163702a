//! Forward-SDE noise schedules and their Gaussian transition kernels.
//!
//! Both supported parameterizations make the conditional law of `x_t` given
//! `x_0` an explicit Gaussian `N(alpha_t x_0, sigma_t^2 I)`:
//!
//! * **VP** (variance-preserving): linear rate `beta(t) = beta_min +
//!   t (beta_max - beta_min) / T`, `alpha_t = exp(-1/2 ∫_0^t beta)`,
//!   `sigma_t^2 = 1 - alpha_t^2`, diffusion term `g(t)^2 = beta(t)`.
//! * **VE** (variance-exploding): `alpha_t = 1`,
//!   `sigma(t) = sigma_min (sigma_max/sigma_min)^{t/T}`, transition variance
//!   `sigma(t)^2 - sigma_min^2`, and `g(t)^2 = d sigma^2/dt`.
//!
//! All time integration and sampling elsewhere operate on `[t_min, T]`
//! because several integrands carry a `1/sigma_t^2` factor that is singular
//! at `t = 0`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule: {0}")]
    Invalid(String),
    #[error("time {t} outside [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },
    #[error("transition kernel is singular at t = 0 (noise std is zero)")]
    SingularTime,
}

/// Scale/noise pair of the Gaussian kernel `q_{t|0} = N(alpha_t x0, sigma_t^2 I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionParams {
    pub alpha_t: f64,
    pub sigma_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Vp { beta_min: f64, beta_max: f64 },
    Ve { sigma_min: f64, sigma_max: f64 },
}

/// A forward diffusion schedule over `t ∈ [0, horizon_T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeSchedule {
    kind: Kind,
    horizon_t: f64,
    t_min: f64,
}

impl SdeSchedule {
    /// Variance-preserving schedule with linear rate.
    pub fn vp(beta_min: f64, beta_max: f64, horizon_t: f64, t_min: f64) -> Result<Self, ScheduleError> {
        if !(beta_min > 0.0 && beta_max >= beta_min) {
            return Err(ScheduleError::Invalid(format!(
                "need 0 < beta_min <= beta_max, got ({beta_min}, {beta_max})"
            )));
        }
        Self::check_times(horizon_t, t_min)?;
        Ok(SdeSchedule { kind: Kind::Vp { beta_min, beta_max }, horizon_t, t_min })
    }

    /// Variance-exploding schedule with geometric noise growth.
    pub fn ve(sigma_min: f64, sigma_max: f64, horizon_t: f64, t_min: f64) -> Result<Self, ScheduleError> {
        if !(sigma_min > 0.0 && sigma_max > sigma_min) {
            return Err(ScheduleError::Invalid(format!(
                "need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
            )));
        }
        Self::check_times(horizon_t, t_min)?;
        Ok(SdeSchedule { kind: Kind::Ve { sigma_min, sigma_max }, horizon_t, t_min })
    }

    /// The default laboratory schedule: VP with beta in [0.1, 20] over T = 1.
    pub fn vp_default() -> Self {
        Self::vp(0.1, 20.0, 1.0, 1e-3).expect("default VP schedule is valid")
    }

    fn check_times(horizon_t: f64, t_min: f64) -> Result<(), ScheduleError> {
        if !(t_min > 0.0 && t_min < horizon_t && horizon_t.is_finite()) {
            return Err(ScheduleError::Invalid(format!(
                "need 0 < t_min < horizon_T, got t_min={t_min}, horizon_T={horizon_t}"
            )));
        }
        Ok(())
    }

    pub fn horizon_t(&self) -> f64 {
        self.horizon_t
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn is_vp(&self) -> bool {
        matches!(self.kind, Kind::Vp { .. })
    }

    fn check_t(&self, t: f64) -> Result<(), ScheduleError> {
        if !(t >= 0.0 && t <= self.horizon_t && t.is_finite()) {
            return Err(ScheduleError::TimeOutOfRange { t, t_max: self.horizon_t });
        }
        Ok(())
    }

    /// Gaussian-kernel parameters `(alpha_t, sigma_t)` at time `t`.
    pub fn transition(&self, t: f64) -> Result<TransitionParams, ScheduleError> {
        self.check_t(t)?;
        Ok(match self.kind {
            Kind::Vp { beta_min, beta_max } => {
                // alpha = exp(-1/2 ∫_0^t beta(s) ds) with the rate linear in s/T.
                let u = t / self.horizon_t;
                let integral = self.horizon_t * (beta_min * u + 0.5 * (beta_max - beta_min) * u * u);
                let alpha_t = (-0.5 * integral).exp();
                let sigma_t = (1.0 - alpha_t * alpha_t).max(0.0).sqrt();
                TransitionParams { alpha_t, sigma_t }
            }
            Kind::Ve { sigma_min, sigma_max } => {
                let s = sigma_min * (sigma_max / sigma_min).powf(t / self.horizon_t);
                let var = (s * s - sigma_min * sigma_min).max(0.0);
                TransitionParams { alpha_t: 1.0, sigma_t: var.sqrt() }
            }
        })
    }

    /// Squared diffusion coefficient `g(t)^2`.
    pub fn g2(&self, t: f64) -> Result<f64, ScheduleError> {
        self.check_t(t)?;
        Ok(match self.kind {
            Kind::Vp { beta_min, beta_max } => {
                beta_min + (t / self.horizon_t) * (beta_max - beta_min)
            }
            Kind::Ve { sigma_min, sigma_max } => {
                let s = sigma_min * (sigma_max / sigma_min).powf(t / self.horizon_t);
                s * s * 2.0 * (sigma_max / sigma_min).ln() / self.horizon_t
            }
        })
    }

    /// Like [`transition`](Self::transition) but rejects `t` where the kernel
    /// has zero noise (needed before dividing by `sigma_t`).
    pub fn transition_nonsingular(&self, t: f64) -> Result<TransitionParams, ScheduleError> {
        let p = self.transition(t)?;
        if p.sigma_t <= 0.0 {
            return Err(ScheduleError::SingularTime);
        }
        Ok(p)
    }
}
