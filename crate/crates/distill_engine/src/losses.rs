//! Training losses: score-matching regression, ratio discrimination, and the
//! curvature-weighted generator objective.
//!
//! The generator objective integrates, over diffusion time, two frozen-
//! coefficient score products plus an optional adversarial term:
//!
//! * a similarity term `C1(r) * 2 (s_q - s_phi) . (s_phi - s_cond)` whose
//!   gradient flows through the diffused sample into the generator,
//! * a direction term `[C2(r) * (s_q - s_phi) |s_q - s_phi|^2] . x_t` where
//!   only `x_t` is live,
//!
//! both scaled by `-g^2(t)/2`; `C1`, `C2` are curvature weights of the chosen
//! divergence evaluated at a frozen density-ratio estimate, `s_q` is the
//! diffused-teacher score, `s_phi` the frozen fake-score estimate, and
//! `s_cond = -eps/sigma` the conditional score of the forward perturbation.
//! A Monte-Carlo average over a batch with per-sample times, multiplied by
//! the time-interval length, estimates the time integral.

use autodiff_nn::{
    col, forward_mlp, forward_mlp_values, mlp_leaves, MlpNodes, MlpSpec, NodeId, ParamStore,
    Tape, Tensor,
};
use fdivergence::{curvature, DivergenceSpec};
use sde_teacher::{GaussianMixtureDensity, SdeSchedule};
use serde::{Deserialize, Serialize};

use crate::config::DsmWeight;
use crate::generator::{Generator, GeneratorNodes};
use crate::teacher_rows::{rowwise_score_node, RowwiseMarginals};
use crate::EngineError;

/// One generator batch: latents, component picks, forward noise, and
/// per-sample diffusion times.
#[derive(Debug, Clone)]
pub struct GenBatch {
    pub z: Tensor,
    pub picks: Vec<usize>,
    pub eps: Tensor,
    pub t: Vec<f64>,
}

impl GenBatch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn check(&self, latent_dim: usize, data_dim: usize) -> Result<(), EngineError> {
        let b = self.len();
        if b == 0 {
            return Err(EngineError::Internal("empty batch".into()));
        }
        if self.z.dim() != (b, latent_dim) {
            return Err(EngineError::Internal(format!(
                "latent shape {:?} does not match ({b}, {latent_dim})",
                self.z.dim()
            )));
        }
        if self.eps.dim() != (b, data_dim) {
            return Err(EngineError::Internal(format!(
                "noise shape {:?} does not match ({b}, {data_dim})",
                self.eps.dim()
            )));
        }
        Ok(())
    }
}

/// Batch statistics of the frozen density-ratio estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub min: f64,
    pub median: f64,
    pub max: f64,
    /// Samples clamped at the lower / upper ratio bound.
    pub clamped_low: usize,
    pub clamped_high: usize,
}

impl RatioStats {
    fn empty() -> Self {
        RatioStats { min: f64::NAN, median: f64::NAN, max: f64::NAN, clamped_low: 0, clamped_high: 0 }
    }
}

/// Per-term values of one training step's losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sim: f64,
    pub l_di: f64,
    pub l_gan: f64,
    pub l_dsm: f64,
    pub l_disc: f64,
    /// Generator objective: `l_sim + l_di + gan_weight * l_gan`.
    pub total: f64,
    pub ratio_stats: RatioStats,
}

impl LossBreakdown {
    fn zero() -> Self {
        LossBreakdown {
            l_sim: 0.0,
            l_di: 0.0,
            l_gan: 0.0,
            l_dsm: 0.0,
            l_disc: 0.0,
            total: 0.0,
            ratio_stats: RatioStats::empty(),
        }
    }
}

/// Median of a slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN values"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Clamp raw ratios into the spec's band, counting clamp events.
pub fn clamp_ratios(spec: &DivergenceSpec, raw: &[f64]) -> (Vec<f64>, RatioStats) {
    let (lo, hi) = spec.ratio_clamp;
    let mut clamped_low = 0;
    let mut clamped_high = 0;
    let clamped: Vec<f64> = raw
        .iter()
        .map(|&r| {
            if r < lo {
                clamped_low += 1;
                lo
            } else if r > hi {
                clamped_high += 1;
                hi
            } else {
                r
            }
        })
        .collect();
    let min = clamped.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = clamped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let stats = RatioStats { min, median: median(&clamped), max, clamped_low, clamped_high };
    (clamped, stats)
}

/// Density-ratio estimates from discriminator logits: `r = exp(logit)`,
/// clamped into the spec's band.
pub fn density_ratio(spec: &DivergenceSpec, logits: &[f64]) -> (Vec<f64>, RatioStats) {
    let raw: Vec<f64> = logits.iter().map(|&l| l.exp()).collect();
    clamp_ratios(spec, &raw)
}

// ───────────────────────── score-matching loss ─────────────────────────

/// Differentiable score-matching loss for the fake-score network.
///
/// The network predicts the forward noise `eps` from `(x_t, t)`; with the
/// `sigma2` weight the loss is the plain noise-prediction residual, with the
/// `one` weight each row is divided by `sigma_t^2` (raw score-space
/// residual). Mean over the batch of per-row squared norms.
pub fn dsm_loss_node(
    tape: &mut Tape,
    spec: &MlpSpec,
    nodes: &MlpNodes,
    xt: NodeId,
    eps: &Tensor,
    sigma: &Tensor,
    t: &[f64],
    weight: DsmWeight,
) -> Result<NodeId, EngineError> {
    let b = eps.nrows();
    let t_col = col(t);
    let out = forward_mlp(tape, spec, nodes, xt, Some(&t_col))?;
    let eps_c = tape.constant(eps.clone());
    let resid = tape.sub(out, eps_c);
    let sq = tape.mul(resid, resid);
    let weighted = match weight {
        DsmWeight::Sigma2 => sq,
        DsmWeight::One => {
            let inv_var = sigma.mapv(|s| 1.0 / (s * s));
            let w = tape.constant(inv_var);
            tape.mul(sq, w)
        }
    };
    let total = tape.sum(weighted);
    Ok(tape.scale(total, 1.0 / b as f64))
}

/// Score-matching loss of an explicit score field (plain values, no tape):
/// mean over rows of `lambda(t) * |score - target|^2` with the same
/// weighting conventions as [`dsm_loss_node`].
pub fn dsm_loss_value(
    score: &Tensor,
    target: &Tensor,
    sigma: &Tensor,
    weight: DsmWeight,
) -> f64 {
    let b = score.nrows();
    let mut acc = 0.0;
    for i in 0..b {
        let mut row = 0.0;
        for d in 0..score.ncols() {
            let diff = score[(i, d)] - target[(i, d)];
            row += diff * diff;
        }
        let lambda = match weight {
            DsmWeight::Sigma2 => sigma[(i, 0)] * sigma[(i, 0)],
            DsmWeight::One => 1.0,
        };
        acc += lambda * row;
    }
    acc / b as f64
}

// ───────────────────────── discriminator loss ─────────────────────────

/// Binary cross-entropy of the ratio discriminator on a teacher batch
/// (positive class) and a generator batch (negative class), both already
/// diffused to per-sample times. Returns `(loss, logits_real, logits_fake)`.
///
/// Written with softplus so the loss is exact at saturated logits:
/// `-ln D = softplus(-logit)`, `-ln(1 - D) = softplus(logit)`. A constant
/// `D = 1/2` discriminator scores `2 ln 2`.
pub fn discriminator_bce_node(
    tape: &mut Tape,
    spec: &MlpSpec,
    nodes: &MlpNodes,
    xt_real: NodeId,
    xt_fake: NodeId,
    t: &[f64],
) -> Result<(NodeId, NodeId, NodeId), EngineError> {
    let t_col = col(t);
    let logit_real = forward_mlp(tape, spec, nodes, xt_real, Some(&t_col))?;
    let logit_fake = forward_mlp(tape, spec, nodes, xt_fake, Some(&t_col))?;
    let neg_real = tape.neg(logit_real);
    let real_term = tape.softplus(neg_real);
    let fake_term = tape.softplus(logit_fake);
    let real_mean = tape.mean(real_term);
    let fake_mean = tape.mean(fake_term);
    let loss = tape.add(real_mean, fake_mean);
    Ok((loss, logit_real, logit_fake))
}

/// Discriminator logits as plain values: `(B,1)`.
pub fn disc_logits_values(
    spec: &MlpSpec,
    params: &ParamStore,
    xt: &Tensor,
    t: &[f64],
) -> Result<Tensor, EngineError> {
    Ok(forward_mlp_values(spec, params, xt, Some(&col(t)))?)
}

// ───────────────────────── generator loss ─────────────────────────

/// Frozen fake-score estimate used inside the generator objective.
pub enum FakeScoreInput<'a> {
    /// Noise-prediction network with frozen parameters; the score is
    /// `-net(x_t, t) / sigma_t` and gradient flows through `x_t` only.
    Network { spec: &'a MlpSpec, params: &'a ParamStore },
    /// Exact diffused score of the generator's own closed-form marginal,
    /// treated as frozen in the parameters (gradient through `x_t` only).
    AnalyticMarginal,
}

/// Source of the frozen density-ratio estimates.
pub enum RatioInput<'a> {
    Discriminator { spec: &'a MlpSpec, params: &'a ParamStore },
    Analytic,
}

/// Frozen discriminator for the non-saturating adversarial term.
pub struct GanInput<'a> {
    pub spec: &'a MlpSpec,
    pub params: &'a ParamStore,
    pub weight: f64,
}

/// Everything the generator objective needs besides the batch.
pub struct GenLossParts<'a> {
    pub teacher: &'a GaussianMixtureDensity,
    pub schedule: &'a SdeSchedule,
    pub divergence: DivergenceSpec,
    pub generator: &'a Generator,
    pub gen_params: &'a ParamStore,
    pub fake: FakeScoreInput<'a>,
    pub ratio: RatioInput<'a>,
    pub gan: Option<GanInput<'a>>,
    pub c_normalize: bool,
}

/// A recorded generator objective, ready for `backward`.
pub struct TracedGenLoss {
    pub tape: Tape,
    pub loss: NodeId,
    pub gen_nodes: GeneratorNodes,
    /// Present iff the fake score came from the network.
    pub fake_nodes: Option<MlpNodes>,
    /// Present iff the adversarial term was active.
    pub disc_nodes: Option<MlpNodes>,
    /// The diffused generator samples.
    pub xt: NodeId,
    pub breakdown: LossBreakdown,
}

/// Record the generator objective for one batch.
///
/// All coefficients (`C1`, `C2`, the direction field) are computed from
/// current values and enter the tape as constants, so gradient reaches the
/// generator only through the diffused sample `x_t` — the stop-gradient
/// structure of the objective.
pub fn uni_instruct_loss(
    parts: &GenLossParts<'_>,
    batch: &GenBatch,
) -> Result<TracedGenLoss, EngineError> {
    let gen = parts.generator;
    batch.check(gen.latent_dim(), gen.data_dim())?;
    let b = batch.len();
    let time_scale = parts.schedule.horizon_t() - parts.schedule.t_min();

    let mut g2 = vec![0.0; b];
    for (i, &ti) in batch.t.iter().enumerate() {
        g2[i] = parts.schedule.g2(ti)?;
    }

    let mut tape = Tape::new();
    let (gen_nodes, x0) = gen.forward_tape(&mut tape, parts.gen_params, &batch.z, &batch.picks, true)?;

    let teacher_rows = RowwiseMarginals::new(parts.teacher, parts.schedule, &batch.t)?;
    let alpha_col = teacher_rows.alpha_col();
    let sigma_col = teacher_rows.sigma_col();

    // x_t = alpha * x0 + sigma * eps (alpha, sigma per row).
    let alpha_c = tape.constant(alpha_col.clone());
    let sig_eps = {
        let mut v = batch.eps.clone();
        for i in 0..b {
            let s = sigma_col[(i, 0)];
            for d in 0..v.ncols() {
                v[(i, d)] *= s;
            }
        }
        tape.constant(v)
    };
    let scaled_x0 = tape.mul(x0, alpha_c);
    let xt = tape.add(scaled_x0, sig_eps);
    Tape::check_finite(tape.value(xt), "diffused generator samples")?;

    // Conditional score of the forward perturbation: -eps / sigma.
    let cond_v = {
        let mut v = batch.eps.clone();
        for i in 0..b {
            let s = sigma_col[(i, 0)];
            for d in 0..v.ncols() {
                v[(i, d)] = -v[(i, d)] / s;
            }
        }
        v
    };

    let s_q = rowwise_score_node(&mut tape, &teacher_rows, xt)?;

    // The generator's closed-form marginal, when any analytic mode needs it.
    let needs_marginal = matches!(parts.fake, FakeScoreInput::AnalyticMarginal)
        || matches!(parts.ratio, RatioInput::Analytic);
    let gen_rows = if needs_marginal {
        let clean = gen.clean_marginal(parts.gen_params)?;
        Some(RowwiseMarginals::new(&clean, parts.schedule, &batch.t)?)
    } else {
        None
    };

    let (s_fk, fake_nodes) = match &parts.fake {
        FakeScoreInput::Network { spec, params } => {
            let nodes = mlp_leaves(&mut tape, spec, params, false)?;
            let out = forward_mlp(&mut tape, spec, &nodes, xt, Some(&col(&batch.t)))?;
            let neg_inv_sigma = tape.constant(sigma_col.mapv(|s| -1.0 / s));
            (tape.mul(out, neg_inv_sigma), Some(nodes))
        }
        FakeScoreInput::AnalyticMarginal => {
            let rows = gen_rows.as_ref().expect("built above for analytic mode");
            (rowwise_score_node(&mut tape, rows, xt)?, None)
        }
    };

    let xt_v = tape.value(xt).clone();
    let s_q_v = tape.value(s_q).clone();
    let s_fk_v = tape.value(s_fk).clone();
    Tape::check_finite(&s_q_v, "teacher score")?;
    Tape::check_finite(&s_fk_v, "fake score")?;

    // Frozen density ratios and curvature coefficients.
    let (ratios, ratio_stats) = match &parts.ratio {
        RatioInput::Discriminator { spec, params } => {
            let logits = disc_logits_values(spec, params, &xt_v, &batch.t)?;
            let flat: Vec<f64> = logits.iter().copied().collect();
            density_ratio(&parts.divergence, &flat)
        }
        RatioInput::Analytic => {
            let rows = gen_rows.as_ref().expect("built above for analytic mode");
            let lq = teacher_rows.logdensity(&xt_v)?;
            let lp = rows.logdensity(&xt_v)?;
            let raw: Vec<f64> =
                (0..b).map(|i| (lq[(i, 0)] - lp[(i, 0)]).exp()).collect();
            clamp_ratios(&parts.divergence, &raw)
        }
    };

    let mut c1 = vec![0.0; b];
    let mut c2 = vec![0.0; b];
    for (i, &r) in ratios.iter().enumerate() {
        let w = curvature(parts.divergence.kind, r)?;
        if !(w.c1.is_finite() && w.c2.is_finite()) {
            return Err(EngineError::NumericCoefficient {
                sample_index: i,
                ratio: r,
                detail: format!("C1 = {}, C2 = {}", w.c1, w.c2),
            });
        }
        c1[i] = w.c1;
        c2[i] = w.c2;
    }
    if parts.c_normalize {
        normalize_to_unit_median(&mut c1);
        normalize_to_unit_median(&mut c2);
    }

    let mut breakdown = LossBreakdown::zero();
    breakdown.ratio_stats = ratio_stats;
    let mut terms: Vec<NodeId> = Vec::new();

    // Similarity term.
    if c1.iter().any(|&v| v != 0.0) {
        let mut coef = Tensor::zeros((b, 1));
        for i in 0..b {
            coef[(i, 0)] = -0.5 * g2[i] * time_scale * 2.0 * c1[i] / b as f64;
        }
        let diff_q = tape.sub(s_q, s_fk);
        let cond_c = tape.constant(cond_v.clone());
        let diff_c = tape.sub(s_fk, cond_c);
        let inner = tape.rowdot(diff_q, diff_c);
        let coef_c = tape.constant(coef);
        let weighted = tape.mul(inner, coef_c);
        let l_sim = tape.sum(weighted);
        breakdown.l_sim = tape.value(l_sim)[(0, 0)];
        terms.push(l_sim);
    }

    // Direction term: frozen field dotted with the live diffused sample.
    if c2.iter().any(|&v| v != 0.0) {
        let mut field = Tensor::zeros((b, gen.data_dim()));
        for i in 0..b {
            let mut norm_sq = 0.0;
            for d in 0..gen.data_dim() {
                let delta = s_q_v[(i, d)] - s_fk_v[(i, d)];
                norm_sq += delta * delta;
            }
            let coef = -0.5 * g2[i] * time_scale * c2[i] / b as f64;
            for d in 0..gen.data_dim() {
                let delta = s_q_v[(i, d)] - s_fk_v[(i, d)];
                field[(i, d)] = coef * delta * norm_sq;
            }
        }
        let field_c = tape.constant(field);
        let inner = tape.rowdot(field_c, xt);
        let l_di = tape.sum(inner);
        breakdown.l_di = tape.value(l_di)[(0, 0)];
        terms.push(l_di);
    }

    // Non-saturating adversarial term: mean of -ln D(x_t, t).
    let mut disc_nodes = None;
    if let Some(gan) = &parts.gan {
        if gan.weight > 0.0 {
            let nodes = mlp_leaves(&mut tape, gan.spec, gan.params, false)?;
            let logit = forward_mlp(&mut tape, gan.spec, &nodes, xt, Some(&col(&batch.t)))?;
            let neg_logit = tape.neg(logit);
            let per_sample = tape.softplus(neg_logit);
            let l_gan = tape.mean(per_sample);
            breakdown.l_gan = tape.value(l_gan)[(0, 0)];
            let weighted = tape.scale(l_gan, gan.weight);
            terms.push(weighted);
            disc_nodes = Some(nodes);
        }
    }

    let loss = match terms.len() {
        0 => {
            // All coefficients vanished (possible under extreme clamping);
            // a zero constant keeps the interface uniform.
            tape.constant(autodiff_nn::scalar(0.0))
        }
        1 => terms[0],
        _ => {
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = tape.add(acc, t);
            }
            acc
        }
    };
    breakdown.total = tape.value(loss)[(0, 0)];

    Ok(TracedGenLoss { tape, loss, gen_nodes, fake_nodes, disc_nodes, xt, breakdown })
}

/// Scale a coefficient vector so its median absolute value is one.
fn normalize_to_unit_median(values: &mut [f64]) {
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let m = median(&abs);
    if m.is_finite() && m > 0.0 {
        for v in values.iter_mut() {
            *v /= m;
        }
    }
}
