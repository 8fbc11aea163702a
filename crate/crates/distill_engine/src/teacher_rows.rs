//! Per-sample-time views of the diffused teacher.
//!
//! Training draws an independent diffusion time for every sample in a batch,
//! so teacher quantities must be evaluated against a *different* diffused
//! marginal per row. [`RowwiseMarginals`] precomputes those marginals (and
//! the transition coefficients) once per batch; the score is also available
//! as a tape node whose input-gradient applies the per-row score Jacobian.

use autodiff_nn::{CustomOp, NodeId, Tape, Tensor};
use sde_teacher::{GaussianMixtureDensity, SdeSchedule, TransitionParams};

use crate::EngineError;

/// Diffused marginals of one clean density at a vector of times.
pub struct RowwiseMarginals {
    rows: Vec<GaussianMixtureDensity>,
    transitions: Vec<TransitionParams>,
}

impl RowwiseMarginals {
    /// Diffuse `clean` to every time in `t`.
    pub fn new(
        clean: &GaussianMixtureDensity,
        schedule: &SdeSchedule,
        t: &[f64],
    ) -> Result<Self, EngineError> {
        let mut rows = Vec::with_capacity(t.len());
        let mut transitions = Vec::with_capacity(t.len());
        for &ti in t {
            rows.push(clean.diffuse(schedule, ti)?);
            transitions.push(schedule.transition(ti)?);
        }
        Ok(Self { rows, transitions })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn marginal(&self, i: usize) -> &GaussianMixtureDensity {
        &self.rows[i]
    }

    /// `(alpha_t, sigma_t)` of row `i`.
    pub fn transition(&self, i: usize) -> TransitionParams {
        self.transitions[i]
    }

    /// Column of per-row `alpha_t`.
    pub fn alpha_col(&self) -> Tensor {
        let mut out = Tensor::zeros((self.len(), 1));
        for (i, p) in self.transitions.iter().enumerate() {
            out[(i, 0)] = p.alpha_t;
        }
        out
    }

    /// Column of per-row `sigma_t`.
    pub fn sigma_col(&self) -> Tensor {
        let mut out = Tensor::zeros((self.len(), 1));
        for (i, p) in self.transitions.iter().enumerate() {
            out[(i, 0)] = p.sigma_t;
        }
        out
    }

    /// Score of each row's marginal at the matching row of `x`: `(B,d)`.
    pub fn score(&self, x: &Tensor) -> Result<Tensor, EngineError> {
        self.check_rows(x)?;
        let mut out = Tensor::zeros(x.raw_dim());
        let mut point = vec![0.0; x.ncols()];
        for i in 0..x.nrows() {
            fill_row(&mut point, x, i);
            let (_, s) = self.rows[i].logdensity_score(&point)?;
            for (a, v) in s.into_iter().enumerate() {
                out[(i, a)] = v;
            }
        }
        Ok(out)
    }

    /// Log-density of each row's marginal at the matching row of `x`: `(B,1)`.
    pub fn logdensity(&self, x: &Tensor) -> Result<Tensor, EngineError> {
        self.check_rows(x)?;
        let mut out = Tensor::zeros((x.nrows(), 1));
        let mut point = vec![0.0; x.ncols()];
        for i in 0..x.nrows() {
            fill_row(&mut point, x, i);
            out[(i, 0)] = self.rows[i].logdensity_score(&point)?.0;
        }
        Ok(out)
    }

    fn check_rows(&self, x: &Tensor) -> Result<(), EngineError> {
        if x.nrows() != self.len() {
            return Err(EngineError::Internal(format!(
                "row count mismatch: {} marginals vs {} samples",
                self.len(),
                x.nrows()
            )));
        }
        Ok(())
    }
}

fn fill_row(point: &mut [f64], x: &Tensor, i: usize) {
    for (k, p) in point.iter_mut().enumerate() {
        *p = x[(i, k)];
    }
}

/// Forward-perturb clean samples to per-row times:
/// `x_t[i] = alpha(t_i) x0[i] + sigma(t_i) eps[i]`.
pub fn diffuse_values(
    schedule: &SdeSchedule,
    x0: &Tensor,
    eps: &Tensor,
    t: &[f64],
) -> Result<Tensor, EngineError> {
    if x0.dim() != eps.dim() || x0.nrows() != t.len() {
        return Err(EngineError::Internal(format!(
            "diffusion shape mismatch: x0 {:?}, eps {:?}, {} times",
            x0.dim(),
            eps.dim(),
            t.len()
        )));
    }
    let mut out = Tensor::zeros(x0.raw_dim());
    for (i, &ti) in t.iter().enumerate() {
        let p = schedule.transition(ti)?;
        for d in 0..x0.ncols() {
            out[(i, d)] = p.alpha_t * x0[(i, d)] + p.sigma_t * eps[(i, d)];
        }
    }
    Ok(out)
}

struct RowwiseScoreOp {
    rows: Vec<GaussianMixtureDensity>,
}

impl CustomOp for RowwiseScoreOp {
    fn name(&self) -> &'static str {
        "rowwise_gmm_score"
    }

    fn backward(&self, grad_out: &Tensor, inputs: &[Tensor]) -> Vec<Tensor> {
        let x = &inputs[0];
        let d = x.ncols();
        let mut grad_in = Tensor::zeros(x.raw_dim());
        let mut point = vec![0.0; d];
        for i in 0..x.nrows() {
            fill_row(&mut point, x, i);
            let jac = self.rows[i].score_jacobian(&point).expect("dims checked at op creation");
            // grad_in[i] = J_i(x_i)^T grad_out[i]; J_i is symmetric.
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

/// Per-row diffused-teacher score as a differentiable node: `(B,d) -> (B,d)`.
///
/// Gradient flows to `x` through each row's score Jacobian. The marginals
/// themselves are parameter-free, so nothing else receives gradient.
pub fn rowwise_score_node(
    tape: &mut Tape,
    marginals: &RowwiseMarginals,
    x: NodeId,
) -> Result<NodeId, EngineError> {
    let value = marginals.score(tape.value(x))?;
    Ok(tape.custom(
        vec![x],
        value,
        Box::new(RowwiseScoreOp { rows: marginals.rows.clone() }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff_nn::matrix;
    use sde_teacher::gmm::Component;

    fn teacher() -> GaussianMixtureDensity {
        GaussianMixtureDensity::new(vec![
            Component { weight: 0.3, mean: vec![1.0, -0.5], diag_cov: vec![0.6, 1.2] },
            Component { weight: 0.7, mean: vec![-0.8, 0.9], diag_cov: vec![0.4, 0.7] },
        ])
        .unwrap()
    }

    #[test]
    fn rowwise_score_agrees_with_single_time_marginals() {
        let clean = teacher();
        let schedule = SdeSchedule::vp_default();
        let t = [0.05, 0.4, 0.9];
        let rows = RowwiseMarginals::new(&clean, &schedule, &t).unwrap();
        let x = matrix(3, 2, vec![0.2, -0.3, 1.0, 0.5, -1.2, 0.8]);
        let got = rows.score(&x).unwrap();
        for (i, &ti) in t.iter().enumerate() {
            let marg = clean.diffuse(&schedule, ti).unwrap();
            let (_, s) = marg.logdensity_score(&[x[(i, 0)], x[(i, 1)]]).unwrap();
            assert!((got[(i, 0)] - s[0]).abs() < 1e-14);
            assert!((got[(i, 1)] - s[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn score_node_input_gradient_matches_finite_differences() {
        let clean = teacher();
        let schedule = SdeSchedule::vp_default();
        let t = [0.1, 0.6];
        let rows = RowwiseMarginals::new(&clean, &schedule, &t).unwrap();
        let x0 = matrix(2, 2, vec![0.3, 0.4, -1.0, 1.0]);
        let weights = matrix(2, 2, vec![0.7, -0.4, 0.2, 1.1]);

        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone(), true);
        let s = rowwise_score_node(&mut tape, &rows, x).unwrap();
        let w = tape.constant(weights.clone());
        let prod = tape.mul(s, w);
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        let gx = grads.dense(&tape, x);

        let h = 1e-6;
        for i in 0..2 {
            for d in 0..2 {
                let mut xp = x0.clone();
                xp[(i, d)] += h;
                let up: f64 = (rows.score(&xp).unwrap() * &weights).iter().sum();
                xp[(i, d)] -= 2.0 * h;
                let dn: f64 = (rows.score(&xp).unwrap() * &weights).iter().sum();
                let fd = (up - dn) / (2.0 * h);
                assert!(
                    (fd - gx[(i, d)]).abs() / gx[(i, d)].abs().max(1e-4) < 1e-5,
                    "({i},{d}): fd={fd} tape={}",
                    gx[(i, d)]
                );
            }
        }
    }

    #[test]
    fn transition_columns_match_schedule() {
        let clean = teacher();
        let schedule = SdeSchedule::vp_default();
        let t = [0.2, 0.7];
        let rows = RowwiseMarginals::new(&clean, &schedule, &t).unwrap();
        for (i, &ti) in t.iter().enumerate() {
            let p = schedule.transition(ti).unwrap();
            assert_eq!(rows.alpha_col()[(i, 0)], p.alpha_t);
            assert_eq!(rows.sigma_col()[(i, 0)], p.sigma_t);
        }
    }

    #[test]
    fn row_count_mismatch_is_rejected() {
        let clean = teacher();
        let schedule = SdeSchedule::vp_default();
        let rows = RowwiseMarginals::new(&clean, &schedule, &[0.5]).unwrap();
        let x = matrix(2, 2, vec![0.0; 4]);
        assert!(rows.score(&x).is_err());
    }
}
