use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Coupled L2 term: `weight_decay · w` is added to the gradient.
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .values()
                .iter()
                .map(|p| Tensor::zeros(p.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub(crate) fn from_parts(config: AdamConfig, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Self {
        Self { config, step, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// Applies one update. Gradients are checked before anything is
    /// modified, so a rejected step leaves parameters and moments intact.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "adam: {} gradients / {} moment buffers for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.len() != params.get(id).len() {
                return Err(Error::Shape {
                    op: "adam",
                    left: params.get(id).shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter `{}`",
                    params.name(id)
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (((p, g), m), v) in params
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gi = gi + weight_decay * *w;
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f32) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![value]));
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.3f32, -5.0, 1e3] {
            let mut p = single(1.0);
            let cfg = AdamConfig {
                lr: 1e-3,
                weight_decay: 0.0,
                ..Default::default()
            };
            let mut adam = AdamState::new(cfg, &p);
            adam.step(&mut p, &[Tensor::vector(vec![g])]).unwrap();
            let delta = (p.values()[0].data()[0] - 1.0).abs();
            assert!((delta - 1e-3).abs() < 1e-6, "delta {delta} for grad {g}");
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = single(2.5);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut adam = AdamState::new(cfg, &p);
        for _ in 0..5 {
            adam.step(&mut p, &[Tensor::vector(vec![0.0])]).unwrap();
        }
        assert_eq!(p.values()[0].data(), &[2.5]);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = single(0.0);
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut adam = AdamState::new(cfg, &p);
        for _ in 0..200 {
            let w = p.values()[0].data()[0];
            adam.step(&mut p, &[Tensor::vector(vec![2.0 * (w - 5.0)])]).unwrap();
        }
        let w = p.values()[0].data()[0];
        assert!((w - 5.0).abs() < 0.1, "w = {w}");
    }

    #[test]
    fn nan_gradient_names_the_parameter_and_leaves_state() {
        let mut p = single(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        let err = adam.step(&mut p, &[Tensor::vector(vec![f32::NAN])]).unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
        assert_eq!(adam.step_count(), 0);
        assert_eq!(p.values()[0].data(), &[1.0]);
    }
}
