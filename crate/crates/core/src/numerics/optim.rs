use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Hyperparameters of the decoupled-weight-decay Adam update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

/// AdamW moment state, one buffer per parameter in store order.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.tensor.len()]).collect();
        AdamW {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// `p ← p·(1 − lr·wd) − lr·m̂/(√v̂ + ε)` with bias-corrected moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.first.len() || grads.len() != store.len() {
            return Err(Error::contract(format!(
                "optimizer state tracks {} parameters, got {} gradients for {} parameters",
                self.first.len(),
                grads.len(),
                store.len()
            )));
        }
        self.step += 1;
        let (b1, b2) = self.config.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let decay = 1.0 - lr * self.config.weight_decay;
        for (((param, g), m), v) in store
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            if g.len() != m.len() || param.tensor.len() != m.len() {
                return Err(Error::Dimension {
                    op: "adamw_step",
                    lhs: param.tensor.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let data = param.tensor.data_mut();
            for i in 0..data.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                data[i] = data[i] * decay - lr * mh / (vh.sqrt() + self.config.eps);
            }
        }
        Ok(())
    }
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::scalar(p)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_without_decay_keeps_parameters() {
        let mut store = scalar_store(0.7);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(&store, cfg);
        for _ in 0..5 {
            opt.step(&mut store, &[Tensor::scalar(0.0)], 0.1).unwrap();
        }
        assert_eq!(store.iter().next().unwrap().1.tensor.item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Bias-corrected moments after one step are m̂ = g, v̂ = g², so the
        // update is lr·g/(|g| + ε).
        let mut store = scalar_store(1.0);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(&store, cfg);
        opt.step(&mut store, &[Tensor::scalar(1.0)], 0.1).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((store.iter().next().unwrap().1.tensor.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut store = scalar_store(1.0);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(&store, cfg);
        for _ in 0..500 {
            let p = store.iter().next().unwrap().1.tensor.item();
            opt.step(&mut store, &[Tensor::scalar(2.0 * p)], 0.01).unwrap();
        }
        assert!(store.iter().next().unwrap().1.tensor.item().abs() < 1e-3);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut store = scalar_store(1.0);
        let mut opt = AdamW::new(&store, AdamWConfig::default());
        assert!(opt.step(&mut store, &[], 0.1).is_err());
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut g = vec![Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()];
        let before = clip_grad_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
    }
}
