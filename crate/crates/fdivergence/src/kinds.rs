//! The five supported convex generators `f` with closed-form derivatives to
//! fourth order, the curvature coupling weights built from them, and the
//! mode-seeking classification.
//!
//! Generators (all satisfy `f(1) = 0`, `f convex on (0, ∞)`):
//!
//! | kind  | f(r)                                | behaviour      |
//! |-------|-------------------------------------|----------------|
//! | fkl   | `r ln r`                            | mode-covering  |
//! | rkl   | `-ln r`                             | mode-seeking   |
//! | jkl   | `r ln r - ln r`                     | mode-covering  |
//! | chi2  | `(r - 1)^2`                         | mode-covering  |
//! | js    | `r ln r - (1+r) ln((1+r)/2)`        | mode-seeking   |
//!
//! The curvature weights are defined as `C1(r) = r^3 f'''(r)` and
//! `C2(r) = 2 r^2 f''(r) + 4 r^3 f'''(r) + r^4 f''''(r)`. For several kinds
//! the raw derivatives overflow or lose precision at extreme ratios while the
//! products `r^k f^{(k)}` stay tame, so the products are implemented directly
//! in simplified closed form and the raw derivatives separately.

use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DivergenceError {
    #[error("ratio must be > 0, got {r}")]
    NonPositiveRatio { r: f64 },
    #[error("unknown divergence kind `{0}` (expected fkl | rkl | jkl | chi2 | js)")]
    UnknownKind(String),
    #[error("derivative order must be 0..=4, got {0}")]
    BadOrder(u32),
    #[error("invalid ratio clamp: {0}")]
    BadClamp(String),
    #[error("mixtures have different dims: q is {q_dim}-D, p is {p_dim}-D")]
    MismatchedDims { q_dim: usize, p_dim: usize },
    #[error("quadrature supports dim <= 2, got {0}")]
    UnsupportedDim(usize),
    #[error("non-finite integrand at x = {x:?}: {detail}")]
    NonFiniteIntegrand { x: Vec<f64>, detail: String },
    #[error("invalid quadrature grid: {0}")]
    BadGrid(String),
}

/// Which convex generator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DivergenceKind {
    Fkl,
    Rkl,
    Jkl,
    ChiSq,
    Js,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 5] = [
        DivergenceKind::Fkl,
        DivergenceKind::Rkl,
        DivergenceKind::Jkl,
        DivergenceKind::ChiSq,
        DivergenceKind::Js,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DivergenceKind::Fkl => "fkl",
            DivergenceKind::Rkl => "rkl",
            DivergenceKind::Jkl => "jkl",
            DivergenceKind::ChiSq => "chi2",
            DivergenceKind::Js => "js",
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DivergenceKind {
    type Err = DivergenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fkl" => Ok(DivergenceKind::Fkl),
            "rkl" => Ok(DivergenceKind::Rkl),
            "jkl" => Ok(DivergenceKind::Jkl),
            "chi2" => Ok(DivergenceKind::ChiSq),
            "js" => Ok(DivergenceKind::Js),
            other => Err(DivergenceError::UnknownKind(other.to_string())),
        }
    }
}

// Serialized as the canonical short name so configs read `"chi2"`, not an
// enum-variant spelling.
impl serde::Serialize for DivergenceKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> serde::Deserialize<'de> for DivergenceKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Mode behaviour, decided by whether `lim_{r→∞} f(r)/r` is finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSeekingClass {
    ModeSeeking,
    ModeCovering,
}

/// A divergence kind plus the positive ratio clamp used by training code.
///
/// The clamp is applied only inside training losses; exact quadrature and
/// identity verification use raw ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceSpec {
    pub kind: DivergenceKind,
    pub ratio_clamp: (f64, f64),
}

impl DivergenceSpec {
    pub fn new(kind: DivergenceKind) -> Self {
        DivergenceSpec { kind, ratio_clamp: (1e-4, 1e4) }
    }

    pub fn with_clamp(kind: DivergenceKind, lo: f64, hi: f64) -> Result<Self, DivergenceError> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(DivergenceError::BadClamp(format!("need 0 < lo < hi finite, got ({lo}, {hi})")));
        }
        Ok(DivergenceSpec { kind, ratio_clamp: (lo, hi) })
    }

    pub fn clamp_ratio(&self, r: f64) -> f64 {
        r.clamp(self.ratio_clamp.0, self.ratio_clamp.1)
    }
}

fn check_ratio(r: f64) -> Result<(), DivergenceError> {
    if !(r > 0.0) {
        return Err(DivergenceError::NonPositiveRatio { r });
    }
    Ok(())
}

/// `f^{(order)}(r)` in closed form, `order ∈ 0..=4`.
pub fn f_eval(kind: DivergenceKind, r: f64, order: u32) -> Result<f64, DivergenceError> {
    check_ratio(r)?;
    if order > 4 {
        return Err(DivergenceError::BadOrder(order));
    }
    Ok(match kind {
        DivergenceKind::Fkl => match order {
            0 => r * r.ln(),
            1 => r.ln() + 1.0,
            2 => 1.0 / r,
            3 => -1.0 / (r * r),
            _ => 2.0 / (r * r * r),
        },
        DivergenceKind::Rkl => match order {
            0 => -r.ln(),
            1 => -1.0 / r,
            2 => 1.0 / (r * r),
            3 => -2.0 / (r * r * r),
            _ => 6.0 / (r * r * r * r),
        },
        DivergenceKind::Jkl => {
            f_eval(DivergenceKind::Fkl, r, order)? + f_eval(DivergenceKind::Rkl, r, order)?
        }
        DivergenceKind::ChiSq => match order {
            0 => (r - 1.0) * (r - 1.0),
            1 => 2.0 * (r - 1.0),
            2 => 2.0,
            _ => 0.0,
        },
        DivergenceKind::Js => match order {
            // f = r ln r - (1+r) ln((1+r)/2)
            0 => r * r.ln() - (1.0 + r) * (r.ln_1p() - std::f64::consts::LN_2),
            1 => (2.0 * r / (1.0 + r)).ln(),
            2 => 1.0 / (r * (1.0 + r)),
            3 => -(1.0 + 2.0 * r) / (r * r * (1.0 + r) * (1.0 + r)),
            _ => 2.0 / (r * r * r) - 2.0 / ((1.0 + r) * (1.0 + r) * (1.0 + r)),
        },
    })
}

/// `r^2 f''(r)` in simplified closed form — the expansion-identity weight.
pub fn weight_r2f2(kind: DivergenceKind, r: f64) -> Result<f64, DivergenceError> {
    check_ratio(r)?;
    Ok(match kind {
        DivergenceKind::Fkl => r,
        DivergenceKind::Rkl => 1.0,
        DivergenceKind::Jkl => r + 1.0,
        DivergenceKind::ChiSq => 2.0 * r * r,
        DivergenceKind::Js => r / (1.0 + r),
    })
}

/// `r^4 f''''(r)` in simplified closed form.
fn weight_r4f4(kind: DivergenceKind, r: f64) -> f64 {
    match kind {
        DivergenceKind::Fkl => 2.0 * r,
        DivergenceKind::Rkl => 6.0,
        DivergenceKind::Jkl => 2.0 * r + 6.0,
        DivergenceKind::ChiSq => 0.0,
        DivergenceKind::Js => {
            let s = 1.0 + r;
            2.0 * r * (3.0 * r * r + 3.0 * r + 1.0) / (s * s * s)
        }
    }
}

/// Curvature coupling weights `C1 = r^3 f'''` and
/// `C2 = 2 r^2 f'' + 4 r^3 f''' + r^4 f''''` at a given ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureWeights {
    pub c1: f64,
    pub c2: f64,
    pub at_ratio: f64,
}

/// `r^3 f'''(r)` in simplified closed form.
pub fn curvature_c1(kind: DivergenceKind, r: f64) -> Result<f64, DivergenceError> {
    check_ratio(r)?;
    Ok(match kind {
        DivergenceKind::Fkl => -r,
        DivergenceKind::Rkl => -2.0,
        DivergenceKind::Jkl => -r - 2.0,
        DivergenceKind::ChiSq => 0.0,
        DivergenceKind::Js => {
            let s = 1.0 + r;
            -r * (2.0 * r + 1.0) / (s * s)
        }
    })
}

pub fn curvature(kind: DivergenceKind, r: f64) -> Result<CurvatureWeights, DivergenceError> {
    let c1 = curvature_c1(kind, r)?;
    let c2 = match kind {
        // Exact simplifications of 2r²f'' + 4r³f''' + r⁴f''''.
        DivergenceKind::Fkl | DivergenceKind::Rkl | DivergenceKind::Jkl => 0.0,
        DivergenceKind::ChiSq => 4.0 * r * r,
        DivergenceKind::Js => {
            let s = 1.0 + r;
            -2.0 * r * r / (s * s * s)
        }
    };
    Ok(CurvatureWeights { c1, c2, at_ratio: r })
}

/// `C2` assembled from raw derivatives (reference path; less stable at
/// extreme ratios than [`curvature`], used to cross-check it).
pub fn curvature_c2_from_derivatives(kind: DivergenceKind, r: f64) -> Result<f64, DivergenceError> {
    Ok(2.0 * weight_r2f2(kind, r)? + 4.0 * curvature_c1(kind, r)? + weight_r4f4(kind, r))
}

/// Mode-seeking iff `lim_{r→∞} f(r)/r` is finite.
pub fn mode_seeking_class(kind: DivergenceKind) -> ModeSeekingClass {
    match kind {
        // f/r: fkl → ln r (∞); jkl → ln r (∞); chi2 → r (∞)
        DivergenceKind::Fkl | DivergenceKind::Jkl | DivergenceKind::ChiSq => {
            ModeSeekingClass::ModeCovering
        }
        // f/r: rkl → -ln r / r → 0; js → ln 2 (bounded)
        DivergenceKind::Rkl | DivergenceKind::Js => ModeSeekingClass::ModeSeeking,
    }
}

/// Stable integrand product `p · f(q/p)` from log-densities.
///
/// Working from `(ln q, ln p)` avoids overflow of the raw ratio in tails;
/// each kind has an algebraically simplified form.
pub fn pf_from_logs(kind: DivergenceKind, lq: f64, lp: f64) -> f64 {
    let q = lq.exp();
    let p = lp.exp();
    match kind {
        DivergenceKind::Fkl => q * (lq - lp),
        DivergenceKind::Rkl => p * (lp - lq),
        DivergenceKind::Jkl => (q - p) * (lq - lp),
        DivergenceKind::ChiSq => (2.0 * lq - lp).exp() - 2.0 * q + p,
        DivergenceKind::Js => {
            // p f = q ln(q/p) - (p+q) (ln(p+q) - ln p - ln 2)
            let lmax = lq.max(lp);
            let lsum = lmax + ((lq - lmax).exp() + (lp - lmax).exp()).ln();
            q * (lq - lp) - (p + q) * (lsum - lp - std::f64::consts::LN_2)
        }
    }
}
