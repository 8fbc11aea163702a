//! Adam optimizer over flat parameter vectors.

use crate::nn::ParamStore;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdamError {
    #[error("gradient length {got} does not match parameter count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite gradient for parameter segment `{segment}` (flat index {index})")]
    NonFiniteGradient { segment: String, index: usize },
}

/// First/second-moment state for one parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(param_len: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of `params` in place.
    ///
    /// Rejects the whole step (leaving parameters and moments untouched) if
    /// any gradient entry is non-finite, naming the offending segment.
    pub fn step(&mut self, params: &mut ParamStore, grad: &[f64]) -> Result<(), AdamError> {
        if grad.len() != self.m.len() || params.total_len() != self.m.len() {
            return Err(AdamError::LengthMismatch {
                expected: self.m.len(),
                got: if grad.len() != self.m.len() { grad.len() } else { params.total_len() },
            });
        }
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            return Err(AdamError::NonFiniteGradient {
                segment: params.segment_name_at(bad).to_string(),
                index: bad,
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .values_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: Vec<f64>) -> ParamStore {
        ParamStore::from_segments(vec![("layer0.weight".into(), values)]).unwrap()
    }

    #[test]
    fn minimizes_quadratic() {
        // f(p) = sum p_i^2, gradient 2p. 600 steps at lr 0.05 from (3, -2).
        let mut params = store(vec![3.0, -2.0]);
        let mut adam = AdamState::new(2, 0.05);
        for _ in 0..600 {
            let grad: Vec<f64> = params.flat().iter().map(|p| 2.0 * p).collect();
            adam.step(&mut params, &grad).unwrap();
        }
        for p in params.flat() {
            assert!(p.abs() < 1e-2, "did not converge: {p}");
        }
    }

    #[test]
    fn rejects_nan_gradient_and_names_segment() {
        let mut params = ParamStore::from_segments(vec![
            ("layer0.weight".into(), vec![1.0, 2.0]),
            ("layer0.bias".into(), vec![0.5]),
        ])
        .unwrap();
        let before = params.flat();
        let mut adam = AdamState::new(3, 0.1);
        let err = adam.step(&mut params, &[0.1, 0.2, f64::NAN]).unwrap_err();
        match err {
            AdamError::NonFiniteGradient { segment, index } => {
                assert_eq!(segment, "layer0.bias");
                assert_eq!(index, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert_eq!(params.flat(), before, "failed step must not mutate parameters");
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn rejects_length_mismatch() {
        let mut params = store(vec![1.0]);
        let mut adam = AdamState::new(1, 0.1);
        assert!(matches!(
            adam.step(&mut params, &[0.1, 0.2]),
            Err(AdamError::LengthMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the very first Adam step is ±lr (up to eps).
        let mut params = store(vec![1.0]);
        let mut adam = AdamState::new(1, 0.01);
        adam.step(&mut params, &[42.0]).unwrap();
        assert!((params.flat()[0] - (1.0 - 0.01)).abs() < 1e-6);
    }
}
