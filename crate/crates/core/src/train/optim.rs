use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
            weight_decay: 0.0,
        }
    }
}

/// Adam with global-norm clipping. Moments are kept per parameter of the
/// store it was created for.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Option<Tensor>>,
    pub v: Vec<Option<Tensor>>,
}

pub const MOMENT_PREFIX: &str = "optim.";

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        Self {
            config,
            step: 0,
            m: vec![None; store.len()],
            v: vec![None; store.len()],
        }
    }

    /// Applies one update. Frozen parameters and parameters without a
    /// gradient are left untouched.
    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        let c = self.config;
        let norm = grads.global_norm();
        let factor = if c.clip_norm > 0.0 && norm > c.clip_norm {
            c.clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for id in store.trainable_ids() {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let p = store.get_mut(id);
            let shape = p.value.shape().to_vec();
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(&shape)).data_mut();
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(&shape)).data_mut();
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g * factor + c.weight_decay * *w;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *w -= c.learning_rate * (*m / bias1) / ((*v / bias2).sqrt() + c.epsilon);
            }
            if !p.value.data().iter().all(|w| w.is_finite()) {
                return Err(Error::Numeric(format!("parameter {} became non-finite", p.name)));
            }
        }
        Ok(())
    }

    /// Moment buffers as named arrays, for checkpointing.
    pub fn arrays(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (id, p) in store.iter() {
            if let Some(m) = &self.m[id.index()] {
                out.push((format!("{MOMENT_PREFIX}m.{}", p.name), m.clone()));
            }
            if let Some(v) = &self.v[id.index()] {
                out.push((format!("{MOMENT_PREFIX}v.{}", p.name), v.clone()));
            }
        }
        out
    }

    pub fn from_arrays(config: AdamConfig, step: u64, store: &ParamStore, arrays: &[(String, Tensor)]) -> Result<Self> {
        let mut adam = Self::new(config, store);
        adam.step = step;
        for (name, t) in arrays {
            let Some(rest) = name.strip_prefix(MOMENT_PREFIX) else { continue };
            let (slot, param) = rest
                .split_once('.')
                .ok_or_else(|| Error::Checkpoint(format!("bad optimizer array {name}")))?;
            let id = store
                .id(param)
                .ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown parameter {param}")))?;
            if t.shape() != store.value(id).shape() {
                return Err(Error::Checkpoint(format!("optimizer state {name} has the wrong shape")));
            }
            match slot {
                "m" => adam.m[id.index()] = Some(t.clone()),
                "v" => adam.v[id.index()] = Some(t.clone()),
                _ => return Err(Error::Checkpoint(format!("bad optimizer array {name}"))),
            }
        }
        Ok(adam)
    }
}
