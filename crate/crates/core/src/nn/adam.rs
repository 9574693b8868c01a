use serde::{Deserialize, Serialize};

use super::{Grads, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a fixed subset of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub params: Vec<ParamId>,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore, params: Vec<ParamId>) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|&id| Tensor::zeros(store.get(id).shape()))
            .collect();
        Self {
            config,
            step_count: 0,
            params,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One update. Gradients are checked for finiteness before anything moves.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<()> {
        for &id in &self.params {
            let g = grads.get(id);
            g.expect_same_shape("adam_step", store.get(id))?;
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of '{}'", store.name(id))));
            }
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (i, &id) in self.params.iter().enumerate() {
            let g = grads.get(id).data();
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.weight("w", Tensor::full(&[1], v));
        (store, id)
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (mut store, id) = scalar_store(0.7);
        let mut adam = AdamState::new(AdamConfig::default(), &store, vec![id]);
        let grads = Grads::zeros_like(&store);
        for _ in 0..5 {
            adam.step(&mut store, &grads).unwrap();
        }
        assert_eq!(store.get(id).data()[0], 0.7);
        assert_eq!(adam.step_count, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2  =>  delta = lr * g / (|g| + eps)
        for g in [3.0, -0.25, 1e-2] {
            let (mut store, id) = scalar_store(1.0);
            let mut adam = AdamState::new(AdamConfig::default(), &store, vec![id]);
            let mut grads = Grads::zeros_like(&store);
            grads.get_mut(id).data_mut()[0] = g;
            adam.step(&mut store, &grads).unwrap();
            let expected = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
            assert!((store.get(id).data()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_descends_monotonically() {
        let (mut store, id) = scalar_store(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store, vec![id]);
        let mut grads = Grads::zeros_like(&store);
        grads.get_mut(id).data_mut()[0] = 2.0;
        let mut prev = 0.0;
        for _ in 0..2 {
            adam.step(&mut store, &grads).unwrap();
            let now = store.get(id).data()[0];
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let (mut store, id) = scalar_store(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store, vec![id]);
        let mut grads = Grads::zeros_like(&store);
        grads.get_mut(id).data_mut()[0] = f64::NAN;
        let err = adam.step(&mut store, &grads).unwrap_err();
        assert!(err.to_string().contains("'w'"), "{err}");
        assert_eq!(adam.step_count, 0);
        assert_eq!(store.get(id).data()[0], 0.0);
    }
}
