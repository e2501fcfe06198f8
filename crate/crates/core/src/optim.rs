//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

// Float math for no_std builds; redundant when std's inherent methods are in scope.
#[allow(unused_imports)]
use num_traits::Float;


use crate::error::{Error, Result};
use crate::tensor::{NamedTensor, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

pub fn adam_step(params: &mut [f32], grads: &[f32], state: &mut AdamState, cfg: &AdamConfig) {
    debug_assert_eq!(params.len(), grads.len());
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..params.len() {
        let g = grads[i] as f64;
        let m = b1 * state.m[i] as f64 + (1.0 - b1) * g;
        let v = b2 * state.v[i] as f64 + (1.0 - b2) * g * g;
        state.m[i] = m as f32;
        state.v[i] = v as f32;
        let update = cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
        params[i] = (params[i] as f64 - update) as f32;
    }
}

/// Adam over every tensor of a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub states: Vec<AdamState>,
}

impl Adam {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        Self {
            config,
            states: params.iter().map(|p| AdamState::new(p.tensor.len())).collect(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f32>]) {
        for (i, g) in grads.iter().enumerate() {
            adam_step(&mut params.get_mut(i).data, g, &mut self.states[i], &self.config);
        }
    }

    pub fn export(&self, params: &ParamSet, prefix: &str) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (p, s) in params.iter().zip(&self.states) {
            let shape = p.tensor.shape.clone();
            out.push(NamedTensor {
                name: alloc::format!("{prefix}m.{}", p.name),
                tensor: Tensor { shape: shape.clone(), data: s.m.clone() },
            });
            out.push(NamedTensor {
                name: alloc::format!("{prefix}v.{}", p.name),
                tensor: Tensor { shape, data: s.v.clone() },
            });
        }
        out
    }

    pub fn load(&mut self, params: &ParamSet, tensors: &[NamedTensor], prefix: &str, step: u64) -> Result<()> {
        for (p, s) in params.iter().zip(self.states.iter_mut()) {
            for (which, dst) in [("m", &mut s.m), ("v", &mut s.v)] {
                let key = alloc::format!("{prefix}{which}.{}", p.name);
                let t = tensors
                    .iter()
                    .find(|t| t.name == key)
                    .ok_or_else(|| Error::MissingTensor(key.clone()))?;
                if t.tensor.data.len() != dst.len() {
                    return Err(Error::TensorShape {
                        name: key,
                        got: t.tensor.shape.clone(),
                        expected: p.tensor.shape.clone(),
                    });
                }
                dst.clone_from(&t.tensor.data);
            }
            s.step = step;
        }
        Ok(())
    }
}
