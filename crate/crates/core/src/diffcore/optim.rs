use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use super::DiffError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 100.0,
        }
    }
}

/// Adaptive-moment gradient descent with global-norm clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update and returns the pre-clip gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<f64, DiffError> {
        if grads.len() != store.len() {
            return Err(DiffError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        let norm = grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(DiffError::NonFinite("gradient norm".into()));
        }
        let clip = if self.config.clip_norm > 0.0 && norm > self.config.clip_norm {
            self.config.clip_norm / norm
        } else {
            1.0
        };
        self.steps += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = store.get_mut(i).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j] * clip;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::row_vector(vec![3.0, -2.0]));
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..2000 {
            let g = store.get(0).map(|v| 2.0 * v);
            opt.step(&mut store, &[g]).unwrap();
        }
        assert!(store.get(0).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn clipping_bounds_the_first_step() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::scalar(0.0));
        let mut opt = Adam::new(AdamConfig::default(), &store);
        let norm = opt.step(&mut store, &[Tensor::scalar(1e6)]).unwrap();
        assert_eq!(norm, 1e6);
        // First Adam step has magnitude lr regardless of scale.
        assert!((store.get(0).item() + 4e-4).abs() < 1e-9);
    }
}
