//! Differentiable tape bindings for the analytic mixture quantities.
//!
//! These let engine code backpropagate *through* closed-form teacher math:
//! the score's input-gradient is the score Jacobian (log-density Hessian),
//! and the log-density's input-gradient is the score itself.

use crate::gmm::GaussianMixtureDensity;
use autodiff_nn::{CustomOp, NodeId, Tape, Tensor};

struct ScoreOp {
    gmm: GaussianMixtureDensity,
}

impl CustomOp for ScoreOp {
    fn name(&self) -> &'static str {
        "gmm_score"
    }

    fn backward(&self, grad_out: &Tensor, inputs: &[Tensor]) -> Vec<Tensor> {
        let x = &inputs[0];
        let mut grad_in = Tensor::zeros(x.raw_dim());
        let d = x.ncols();
        let mut point = vec![0.0; d];
        for i in 0..x.nrows() {
            for (k, p) in point.iter_mut().enumerate() {
                *p = x[(i, k)];
            }
            let jac = self.gmm.score_jacobian(&point).expect("dims checked at op creation");
            // grad_in[i] = J(x_i)^T grad_out[i]; J is symmetric.
            for a in 0..d {
                let mut acc = 0.0;
                for b in 0..d {
                    acc += jac[(b, a)] * grad_out[(i, b)];
                }
                grad_in[(i, a)] = acc;
            }
        }
        vec![grad_in]
    }
}

struct LogDensityOp {
    gmm: GaussianMixtureDensity,
}

impl CustomOp for LogDensityOp {
    fn name(&self) -> &'static str {
        "gmm_logdensity"
    }

    fn backward(&self, grad_out: &Tensor, inputs: &[Tensor]) -> Vec<Tensor> {
        let x = &inputs[0];
        let score = self.gmm.score_batch(x).expect("dims checked at op creation");
        // d logp(x_i) / d x_i = score(x_i), scaled by the (B,1) upstream grad.
        let mut grad_in = score;
        for i in 0..x.nrows() {
            for a in 0..x.ncols() {
                grad_in[(i, a)] *= grad_out[(i, 0)];
            }
        }
        vec![grad_in]
    }
}

/// Score of the mixture as a differentiable node: `(B,d) -> (B,d)`.
pub fn gmm_score_node(
    tape: &mut Tape,
    gmm: &GaussianMixtureDensity,
    x: NodeId,
) -> Result<NodeId, crate::gmm::MixtureError> {
    let value = gmm.score_batch(tape.value(x))?;
    Ok(tape.custom(vec![x], value, Box::new(ScoreOp { gmm: gmm.clone() })))
}

/// Log-density of the mixture as a differentiable node: `(B,d) -> (B,1)`.
pub fn gmm_logdensity_node(
    tape: &mut Tape,
    gmm: &GaussianMixtureDensity,
    x: NodeId,
) -> Result<NodeId, crate::gmm::MixtureError> {
    let value = gmm.logdensity_score_batch(tape.value(x))?.0;
    Ok(tape.custom(vec![x], value, Box::new(LogDensityOp { gmm: gmm.clone() })))
}
