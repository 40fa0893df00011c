//! Adam with the standard defaults (beta1 0.9, beta2 0.999, eps 1e-8).

use ndarray::{Array1, ArrayView1};

use crate::error::{RdaError, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First/second-moment state; one slot per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Array1<f64>,
    v: Array1<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self { m: Array1::zeros(param_count), v: Array1::zeros(param_count), t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update of `params` in place.
    pub fn step(
        &mut self,
        params: &mut Array1<f64>,
        grad: &ArrayView1<'_, f64>,
        learning_rate: f64,
    ) -> Result<()> {
        if grad.len() != params.len() || grad.len() != self.m.len() {
            return Err(RdaError::data(format!(
                "gradient length {} does not match parameter count {}",
                grad.len(),
                params.len()
            )));
        }
        if let Some(idx) = grad.iter().position(|g| !g.is_finite()) {
            return Err(RdaError::numeric(format!(
                "non-finite gradient at parameter index {idx}"
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= learning_rate * m_hat / (v_hat.sqrt() + EPS);
        }
        Ok(())
    }
}

/// Apply one optimizer step to a trainable encoder's flat parameter vector.
pub fn gradient_step(
    encoder: &mut super::ConvEncoder,
    grad: &ArrayView1<'_, f64>,
    learning_rate: f64,
    state: &mut AdamState,
) -> Result<()> {
    state.step(encoder.params_mut(), grad, learning_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = arr1(&[1.0, -2.0, 3.0]);
        let g = arr1(&[0.0, 0.0, 0.0]);
        let mut s = AdamState::new(3);
        s.step(&mut p, &g.view(), 0.01).unwrap();
        assert_eq!(p, arr1(&[1.0, -2.0, 3.0]));
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // Bias-corrected first step: lr * g / (|g| + eps) = lr / (1 + 1e-8).
        let mut p = arr1(&[0.0]);
        let g = arr1(&[1.0]);
        let mut s = AdamState::new(1);
        s.step(&mut p, &g.view(), 0.001).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15, "step was {}", p[0]);
        assert!((p[0] + 0.001).abs() < 1e-10);
    }

    #[test]
    fn identical_states_step_identically() {
        let g = arr1(&[0.3, -0.7]);
        let mut p1 = arr1(&[1.0, 1.0]);
        let mut p2 = arr1(&[1.0, 1.0]);
        let mut s1 = AdamState::new(2);
        let mut s2 = AdamState::new(2);
        for _ in 0..5 {
            s1.step(&mut p1, &g.view(), 0.01).unwrap();
            s2.step(&mut p2, &g.view(), 0.01).unwrap();
        }
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = arr1(&[0.0]);
        let g = arr1(&[f64::NAN]);
        let mut s = AdamState::new(1);
        assert!(s.step(&mut p, &g.view(), 0.01).is_err());
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut p = arr1(&[0.0, 1.0]);
        let g = arr1(&[1.0]);
        let mut s = AdamState::new(2);
        assert!(s.step(&mut p, &g.view(), 0.01).is_err());
    }
}
