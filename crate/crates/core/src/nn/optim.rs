use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Adam with PyTorch's bias-correction arithmetic.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: HashMap<String, Tensor>,
    v: HashMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every trainable, unfrozen weight that received a gradient.
    /// Returns how many tensors were updated.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore) -> Result<usize> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut updated = 0;
        for (name, var) in store.trainable() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            let m = match self.m.get(&name) {
                Some(m) => ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?,
                None => (&g * (1.0 - self.beta1))?,
            };
            let v = match self.v.get(&name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let denom = ((v.sqrt()? / bc2.sqrt())? + self.eps)?;
            let upd = ((&m / &denom)? * (self.lr / bc1))?;
            var.set(&(var.as_tensor().detach() - upd)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name, v);
            updated += 1;
        }
        Ok(updated)
    }

    /// Moment tensors as `m.<param>` / `v.<param>` pairs, sorted by name.
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .m
            .iter()
            .map(|(k, t)| (format!("m.{k}"), t.clone()))
            .chain(self.v.iter().map(|(k, t)| (format!("v.{k}"), t.clone())))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn load_state(&mut self, step: u64, tensors: Vec<(String, Tensor)>) -> Result<()> {
        self.step = step;
        self.m.clear();
        self.v.clear();
        for (name, t) in tensors {
            if let Some(p) = name.strip_prefix("m.") {
                self.m.insert(p.to_string(), t);
            } else if let Some(p) = name.strip_prefix("v.") {
                self.v.insert(p.to_string(), t);
            } else {
                return Err(Error::config(format!("unexpected optimizer tensor `{name}`")));
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` once the monitored loss has not
/// strictly improved for more than `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceOnPlateau {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    #[serde(default)]
    pub best: Option<f64>,
    #[serde(default)]
    pub num_bad_epochs: usize,
}

impl Default for ReduceOnPlateau {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 3,
            min_lr: 1e-6,
            best: None,
            num_bad_epochs: 0,
        }
    }
}

impl ReduceOnPlateau {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::config(format!("scheduler factor must be in (0, 1), got {}", self.factor)));
        }
        if !(self.min_lr >= 0.0) {
            return Err(Error::config("scheduler min_lr must be non-negative"));
        }
        Ok(())
    }

    /// Feeds one epoch's monitored value and returns the learning rate to use next.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        match self.best {
            Some(b) if !(metric < b) => self.num_bad_epochs += 1,
            _ => {
                self.best = Some(metric);
                self.num_bad_epochs = 0;
            }
        }
        if self.num_bad_epochs > self.patience {
            self.num_bad_epochs = 0;
            (lr * self.factor).max(self.min_lr).min(lr)
        } else {
            lr
        }
    }
}
