//! Bias-corrected Adam over keyed parameter maps.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter first/second moment estimates plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<K: Ord + Clone> {
    hyper: AdamParams,
    first: BTreeMap<K, Vec<f64>>,
    second: BTreeMap<K, Vec<f64>>,
    step: u64,
}

impl<K: Ord + Clone> AdamState<K> {
    pub fn new(hyper: AdamParams) -> Self {
        AdamState { hyper, first: BTreeMap::new(), second: BTreeMap::new(), step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn hyper(&self) -> &AdamParams {
        &self.hyper
    }

    /// One update: `theta -= lr * m_hat / sqrt(v_hat + eps)` with the usual
    /// bias corrections. Moments are allocated lazily per key and the step
    /// counter advances by exactly one.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<K, Tensor>,
        grads: &BTreeMap<K, Tensor>,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let h = self.hyper;
        let bias1 = 1.0 - pow(h.beta1, t);
        let bias2 = 1.0 - pow(h.beta2, t);
        for (key, grad) in grads {
            let Some(theta) = params.get_mut(key) else {
                return Err(CoreError::invalid("adam_step", "gradient for unknown parameter"));
            };
            if theta.shape() != grad.shape() {
                return Err(CoreError::shape(
                    "adam_step",
                    format!("parameter {:?} vs gradient {:?}", theta.shape(), grad.shape()),
                ));
            }
            let n = theta.numel();
            let m = self.first.entry(key.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(key.clone()).or_insert_with(|| vec![0.0; n]);
            let theta = theta.data_mut();
            for i in 0..n {
                let g = grad.data()[i];
                m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
                v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                theta[i] -= h.learning_rate * m_hat / libm::sqrt(v_hat + h.epsilon);
            }
        }
        for t in params.values() {
            t.check_finite("adam_step")?;
        }
        Ok(())
    }
}

fn pow(base: f64, exp: i32) -> f64 {
    libm::pow(base, exp as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(theta: f64) -> BTreeMap<&'static str, Tensor> {
        let mut m = BTreeMap::new();
        m.insert("w", Tensor::scalar(theta));
        m
    }

    fn grad_of(g: f64) -> BTreeMap<&'static str, Tensor> {
        let mut m = BTreeMap::new();
        m.insert("w", Tensor::scalar(g));
        m
    }

    #[test]
    fn first_step_matches_reference_update() {
        // theta = 0, g = 1: m_hat = 1, v_hat = 1, so the update is
        // -lr / sqrt(1 + eps).
        let mut params = single_param(0.0);
        let mut state = AdamState::new(AdamParams::default());
        state.step(&mut params, &grad_of(1.0)).unwrap();
        assert_eq!(state.step_count(), 1);
        let expected = -1e-3 / (1.0f64 + 1e-8).sqrt();
        let got = params["w"].item().unwrap();
        assert!((got - expected).abs() < 1e-18, "{got} vs {expected}");
        assert!((got - (-9.99999995e-4)).abs() < 1e-13);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = single_param(0.75);
        let mut state = AdamState::new(AdamParams::default());
        state.step(&mut params, &grad_of(0.0)).unwrap();
        assert_eq!(params["w"].item().unwrap(), 0.75);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn two_steps_match_hand_unrolled_recurrence() {
        let h = AdamParams::default();
        let mut params = single_param(0.0);
        let mut state = AdamState::new(h);
        state.step(&mut params, &grad_of(1.0)).unwrap();
        state.step(&mut params, &grad_of(1.0)).unwrap();

        // hand-unrolled: constant g = 1
        let mut m = 0.0;
        let mut v = 0.0;
        let mut theta: f64 = 0.0;
        for t in 1..=2 {
            m = h.beta1 * m + (1.0 - h.beta1);
            v = h.beta2 * v + (1.0 - h.beta2);
            let m_hat = m / (1.0 - h.beta1.powi(t));
            let v_hat = v / (1.0 - h.beta2.powi(t));
            theta -= h.learning_rate * m_hat / (v_hat + h.epsilon).sqrt();
        }
        let got = params["w"].item().unwrap();
        assert!((got - theta).abs() < 1e-15, "{got} vs {theta}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = single_param(0.0);
        let mut grads = BTreeMap::new();
        grads.insert("w", Tensor::zeros(alloc::vec![2]));
        let mut state = AdamState::new(AdamParams::default());
        assert!(state.step(&mut params, &grads).is_err());
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut params = single_param(0.3);
        let mut state = AdamState::new(AdamParams::default());
        for g in [-2.0, 1.5, -0.2, 0.0, 3.0] {
            state.step(&mut params, &grad_of(g)).unwrap();
        }
        assert!(state.second["w"].iter().all(|v| *v >= 0.0));
    }
}
