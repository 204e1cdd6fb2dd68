use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::{Matrix, NnError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 5e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, max_grad_norm: Some(5.0) }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.tensors().iter().map(|t| Matrix::zeros(t.value.rows(), t.value.cols())).collect();
        Self { config, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies the accumulated `grad` buffers and returns the pre-clip norm.
    /// Nothing changes if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<f64, NnError> {
        if self.m.len() != store.len() {
            return Err(NnError::Shape("optimizer state does not match parameters".into()));
        }
        let norm = store.grad_norm();
        if !norm.is_finite() {
            return Err(NnError::NonFinite("gradient norm".into()));
        }
        let clip = match self.config.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for ((t, m), v) in store.tensors_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = t.grad.data();
            let vals = t.value.data_mut();
            for i in 0..vals.len() {
                let gi = g[i] * clip;
                let mi = &mut m.data_mut()[i];
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                let vi = &mut v.data_mut()[i];
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let mhat = m.data()[i] / bc1;
                let vhat = v.data()[i] / bc2;
                vals[i] -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", Matrix::from_vec(1, 2, vec![1.0, -1.0]));
        store.get_mut(id).grad = Matrix::from_vec(1, 2, vec![0.3, -2.0]);
        let mut adam = Adam::new(AdamConfig { max_grad_norm: None, ..AdamConfig::default() }, &store);
        adam.step(&mut store).unwrap();
        let v = store.get(id).value.data();
        assert!((v[0] - (1.0 - 5e-4)).abs() < 1e-9);
        assert!((v[1] - (-1.0 + 5e-4)).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_leaves_parameters_alone() {
        let mut store = ParamStore::new();
        let id = store.add("w", Matrix::scalar(1.0));
        store.get_mut(id).grad = Matrix::scalar(f64::NAN);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        assert!(adam.step(&mut store).is_err());
        assert_eq!(store.get(id).value.data(), &[1.0]);
        assert_eq!(adam.steps(), 0);
    }
}
