//! The gradient-equality identity: the parameter gradient of the expanded
//! divergence equals the gradient of a tractable surrogate in which the
//! intractable fields are frozen (stop-gradient) and the sample path
//! `x_t = α_t g_θ(z) + σ_t ε` carries the only live θ-dependence.
//!
//! The generator family here is the 1-D affine pushforward
//! `x = θ_s z + θ_b`, `z ~ N(0,1)`, whose diffused marginal is an explicit
//! Gaussian — so both sides are computable with no estimation error.
//!
//! Two surrogate forms are implemented:
//!
//! * [`GradientForm::Exact`] — the gradient-exact assembly: the SIM-type
//!   term carries the ratio weight `r² f″(r)` as a frozen *function*
//!   evaluated at the live sample (its argument is differentiated through),
//!   and the linear-in-`x_t` term's frozen coefficient is
//!   `C2 Δ₀³ − 2 ψ Δ₀ (J_p − J_q)` with `ψ = r²f″ + r³f‴` and `J` the score
//!   Jacobians. Total-derivative bookkeeping shows this reproduces the
//!   expanded divergence's θ-gradient; finite differences confirm it to
//!   ~1e-10 relative.
//! * [`GradientForm::Composed`] — the literal per-sample composition used
//!   by the training engine: frozen scalars `−C1` on the SIM structure and
//!   `C2 Δ₀³` on the sample. Its per-sample stop-gradient placement is how
//!   the training loss is assembled; as a *quadrature-level* gradient it
//!   deviates from the exact form for every kind whose weight varies with
//!   the ratio, which is precisely what this verifier measures.

use crate::expansion::{echo, score_difference_rate};
use crate::report::{ConfigEcho, GradientReport};
use crate::VerifyError;
use autodiff_nn::{NodeId, Tape, Tensor};
use fdivergence::{curvature, curvature_c1, gauss_legendre, weight_r2f2, DivergenceKind, DivergenceSpec, QuadratureGrid};
use sde_teacher::{gmm_logdensity_node, gmm_score_node, GaussianMixtureDensity, SdeSchedule};

/// 1-D affine generator `x = theta_s z + theta_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineGenerator {
    pub theta_s: f64,
    pub theta_b: f64,
}

impl AffineGenerator {
    pub fn new(theta_s: f64, theta_b: f64) -> Result<Self, VerifyError> {
        if !(theta_s > 0.0) {
            return Err(VerifyError::Contract(format!("theta_s must be > 0, got {theta_s}")));
        }
        Ok(AffineGenerator { theta_s, theta_b })
    }

    /// Clean pushforward marginal `N(theta_b, theta_s²)`.
    pub fn clean_marginal(&self) -> GaussianMixtureDensity {
        GaussianMixtureDensity::gaussian(vec![self.theta_b], self.theta_s * self.theta_s)
            .expect("positive variance")
    }
}

/// Which surrogate assembly to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientForm {
    Exact,
    Composed,
}

impl GradientForm {
    pub fn name(&self) -> &'static str {
        match self {
            GradientForm::Exact => "exact",
            GradientForm::Composed => "composed",
        }
    }
}

/// Gauss–Legendre nodes on `[-10, 10]` reweighted by the standard normal
/// density and normalized — an expectation rule for `E_{z~N(0,1)}[h(z)]`.
pub fn gaussian_expectation_nodes(n: usize) -> Vec<(f64, f64)> {
    let raw: Vec<(f64, f64)> = gauss_legendre(n, -10.0, 10.0)
        .into_iter()
        .map(|(x, w)| (x, w * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()))
        .collect();
    let total: f64 = raw.iter().map(|&(_, w)| w).sum();
    raw.into_iter().map(|(x, w)| (x, w / total)).collect()
}

/// Time-space quadrature of the expansion integrand over `[t_min, T]` as a
/// function of the generator parameters (the finite-difference target).
fn expanded_objective(
    schedule: &SdeSchedule,
    q0: &GaussianMixtureDensity,
    theta_s: f64,
    theta_b: f64,
    kind: DivergenceKind,
    grid: &QuadratureGrid,
) -> Result<f64, VerifyError> {
    let p0 = AffineGenerator::new(theta_s, theta_b)?.clean_marginal();
    let mut total = 0.0;
    for &(t, w) in &grid.time_nodes {
        let rate =
            score_difference_rate(kind, q0, &p0, schedule, t, grid.space_points, grid.space_extent)?;
        total += w * 0.5 * schedule.g2(t)? * rate;
    }
    Ok(total)
}

/// Ratio-weight `r² f″(r)` of a live ratio node, built from tape primitives.
/// `None` means the weight is identically 1 (reverse-KL).
fn live_weight_node(tape: &mut Tape, kind: DivergenceKind, r: NodeId) -> Option<NodeId> {
    match kind {
        DivergenceKind::Fkl => Some(r),
        DivergenceKind::Rkl => None,
        DivergenceKind::Jkl => Some(tape.add_const(r, 1.0)),
        DivergenceKind::ChiSq => {
            let r2 = tape.mul(r, r);
            Some(tape.scale(r2, 2.0))
        }
        DivergenceKind::Js => {
            let denom = tape.add_const(r, 1.0);
            Some(tape.div(r, denom))
        }
    }
}

/// Surrogate gradient w.r.t. `(theta_s, theta_b)` by reverse-mode autodiff
/// through the reparameterized sample, with frozen fields per `form`.
/// Latent-axis node count. The central spacing of Gauss–Legendre on
/// `[-10, 10]` is ≈ π·10/n, and it must resolve the narrowest feature of
/// the ratio-weighted integrand. That feature is the teacher density bump
/// mapped into latent units, and it narrows as the ratio weight steepens:
/// bounded weights (reverse-KL, the symmetrized kind) see the φ(z) scale,
/// a weight growing like `r` halves the effective width, and the
/// chi-squared weight `2r²` halves it again — on top of the teacher being
/// necessarily narrower than the student wherever chi-squared is finite.
/// Multi-component teachers add structure at the component scale.
fn latent_nodes(kind: DivergenceKind, q0: &GaussianMixtureDensity) -> usize {
    let base = match kind {
        DivergenceKind::Rkl | DivergenceKind::Js => 64,
        DivergenceKind::Fkl | DivergenceKind::Jkl => 128,
        DivergenceKind::ChiSq => 384,
    };
    if q0.components().len() > 1 {
        (base * 3).min(576)
    } else {
        base
    }
}

pub fn surrogate_gradient(
    schedule: &SdeSchedule,
    q0: &GaussianMixtureDensity,
    gen: &AffineGenerator,
    kind: DivergenceKind,
    grid: &QuadratureGrid,
    form: GradientForm,
) -> Result<[f64; 2], VerifyError> {
    let nz = latent_nodes(kind, q0);
    let ne = 64;
    let z_nodes = gaussian_expectation_nodes(nz);
    let e_nodes = gaussian_expectation_nodes(ne);

    let b = nz * ne;
    let mut z = Tensor::zeros((b, 1));
    let mut e = Tensor::zeros((b, 1));
    let mut w = Tensor::zeros((b, 1));
    for (i, &(zi, wi)) in z_nodes.iter().enumerate() {
        for (j, &(ej, wj)) in e_nodes.iter().enumerate() {
            let k = i * ne + j;
            z[(k, 0)] = zi;
            e[(k, 0)] = ej;
            w[(k, 0)] = wi * wj;
        }
    }

    let mut grad = [0.0f64; 2];
    for &(t, tw) in &grid.time_nodes {
        let tr = schedule.transition(t)?;
        let (a, s) = (tr.alpha_t, tr.sigma_t);
        let qt = q0.diffuse(schedule, t)?;
        let p0t = GaussianMixtureDensity::gaussian(
            vec![a * gen.theta_b],
            a * a * gen.theta_s * gen.theta_s + s * s,
        )?;

        // Frozen per-sample coefficients at the base point x_t(θ₀).
        let xt0 = z.mapv(|zi| a * (gen.theta_s * zi + gen.theta_b)) + &e.mapv(|ei| s * ei);
        let (lq0, sq0) = qt.logdensity_score_batch(&xt0)?;
        let (lp0, sp0) = p0t.logdensity_score_batch(&xt0)?;
        let mut x_coef = Tensor::zeros((b, 1));
        let mut neg_c1 = Tensor::zeros((b, 1));
        for i in 0..b {
            let logit = (lq0[(i, 0)] - lp0[(i, 0)]).clamp(-300.0, 300.0);
            let r0 = logit.exp();
            let w1 = weight_r2f2(kind, r0)?;
            let c = curvature(kind, r0)?;
            let psi = w1 + c.c1;
            let d0 = sp0[(i, 0)] - sq0[(i, 0)];
            let jp = p0t.score_jacobian(&[xt0[(i, 0)]])?[(0, 0)];
            let jq = qt.score_jacobian(&[xt0[(i, 0)]])?[(0, 0)];
            neg_c1[(i, 0)] = -curvature_c1(kind, r0)?;
            x_coef[(i, 0)] = match form {
                GradientForm::Exact => c.c2 * d0 * d0 * d0 - 2.0 * psi * d0 * (jp - jq),
                GradientForm::Composed => c.c2 * d0 * d0 * d0,
            };
        }

        // Live surrogate on the tape.
        let mut tape = Tape::new();
        let th_s = tape.leaf(autodiff_nn::scalar(gen.theta_s), true);
        let th_b = tape.leaf(autodiff_nn::scalar(gen.theta_b), true);
        let z_c = tape.constant(z.clone());
        let se_c = tape.constant(e.mapv(|ei| s * ei));
        let zs = tape.mul(z_c, th_s);
        let x0 = tape.add(zs, th_b);
        let x0a = tape.scale(x0, a);
        let xt = tape.add(x0a, se_c);

        let s_q = gmm_score_node(&mut tape, &qt, xt)?;
        let s_sg = gmm_score_node(&mut tape, &p0t, xt)?;
        let cond = tape.constant(e.mapv(|ei| -ei / s));
        let d_qsg = tape.sub(s_q, s_sg);
        let d_sgc = tape.sub(s_sg, cond);
        let prod = tape.mul(d_qsg, d_sgc);
        let simstruct = tape.scale(prod, 2.0);

        let sim_term = match form {
            GradientForm::Exact => {
                let lq = gmm_logdensity_node(&mut tape, &qt, xt)?;
                let lp = gmm_logdensity_node(&mut tape, &p0t, xt)?;
                let logit = tape.sub(lq, lp);
                let r_live = tape.exp(logit);
                match live_weight_node(&mut tape, kind, r_live) {
                    Some(w1) => tape.mul(w1, simstruct),
                    None => simstruct,
                }
            }
            GradientForm::Composed => {
                let c = tape.constant(neg_c1.clone());
                tape.mul(c, simstruct)
            }
        };

        let xc = tape.constant(x_coef.clone());
        let x_term = tape.mul(xc, xt);
        let total = tape.add(sim_term, x_term);
        let w_c = tape.constant(w.clone());
        let weighted = tape.mul(total, w_c);
        let summed = tape.sum(weighted);
        let loss = tape.scale(summed, 0.5 * schedule.g2(t)? * tw);

        let grads = tape.backward(loss)?;
        grad[0] += grads.dense(&tape, th_s)[(0, 0)];
        grad[1] += grads.dense(&tape, th_b)[(0, 0)];
    }
    Ok(grad)
}

/// Compare the finite-difference gradient of the expanded divergence with
/// the surrogate's reverse-mode gradient.
pub fn verify_gradient_equality(
    schedule: &SdeSchedule,
    q0: &GaussianMixtureDensity,
    gen: &AffineGenerator,
    spec: &DivergenceSpec,
    grid: &QuadratureGrid,
    form: GradientForm,
) -> Result<GradientReport, VerifyError> {
    let h = 1e-4;
    let mut lhs = [0.0f64; 2];
    let f = |ts: f64, tb: f64| expanded_objective(schedule, q0, ts, tb, spec.kind, grid);
    lhs[0] = (f(gen.theta_s + h, gen.theta_b)? - f(gen.theta_s - h, gen.theta_b)?) / (2.0 * h);
    lhs[1] = (f(gen.theta_s, gen.theta_b + h)? - f(gen.theta_s, gen.theta_b - h)?) / (2.0 * h);

    let rhs = surrogate_gradient(schedule, q0, gen, spec.kind, grid, form)?;

    let diff = ((lhs[0] - rhs[0]).powi(2) + (lhs[1] - rhs[1]).powi(2)).sqrt();
    let lhs_norm = (lhs[0] * lhs[0] + lhs[1] * lhs[1]).sqrt();
    let rel_err = diff / lhs_norm.max(1e-12);
    Ok(GradientReport {
        lhs_grad: lhs.to_vec(),
        rhs_grad: rhs.to_vec(),
        rel_err,
        gradient_form: form.name().to_string(),
        config_echo: config_echo_for(spec, schedule, grid),
    })
}

fn config_echo_for(
    spec: &DivergenceSpec,
    schedule: &SdeSchedule,
    grid: &QuadratureGrid,
) -> ConfigEcho {
    echo(spec, schedule, grid)
}
