use std::collections::{BTreeMap, HashMap};

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Slot {
    var: Var,
    m: Tensor,
    v: Tensor,
}

/// Adam over an explicit set of named variables. Moments are exposed for
/// checkpointing.
pub struct Adam {
    config: AdamConfig,
    slots: BTreeMap<String, Slot>,
    steps: u64,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, vars: impl IntoIterator<Item = (String, &'a Var)>) -> Result<Self> {
        let mut slots = BTreeMap::new();
        for (name, var) in vars {
            let zeros = var.as_detached_tensor().zeros_like()?;
            slots.insert(
                name,
                Slot {
                    var: var.clone(),
                    m: zeros.clone(),
                    v: zeros,
                },
            );
        }
        Ok(Self { config, slots, steps: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.steps += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.steps as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for slot in self.slots.values_mut() {
            let Some(g) = grads.get(slot.var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            slot.m = ((&slot.m * beta1)? + (&g * (1.0 - beta1))?)?;
            slot.v = ((&slot.v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let m_hat = (&slot.m / correction1)?;
            let v_hat = (&slot.v / correction2)?;
            let update = (m_hat / (v_hat.sqrt()? + eps)?)?;
            let next = (slot.var.as_detached_tensor() - (update * learning_rate)?)?;
            slot.var.set(&next)?;
        }
        Ok(())
    }

    /// Moments keyed `m.<name>` / `v.<name>`.
    pub fn state_tensors(&self) -> HashMap<String, Tensor> {
        let mut out = HashMap::new();
        for (name, slot) in &self.slots {
            out.insert(format!("m.{name}"), slot.m.clone());
            out.insert(format!("v.{name}"), slot.v.clone());
        }
        out
    }

    pub fn load_state(&mut self, steps: u64, tensors: &HashMap<String, Tensor>) -> Result<()> {
        for (name, slot) in self.slots.iter_mut() {
            let m = tensors
                .get(&format!("m.{name}"))
                .ok_or_else(|| Error::Shape(format!("optimizer state lacks m.{name}")))?;
            let v = tensors
                .get(&format!("v.{name}"))
                .ok_or_else(|| Error::Shape(format!("optimizer state lacks v.{name}")))?;
            if m.dims() != slot.m.dims() || v.dims() != slot.v.dims() {
                return Err(Error::Shape(format!("optimizer moment shape mismatch for {name}")));
            }
            slot.m = m.to_dtype(slot.m.dtype())?;
            slot.v = v.to_dtype(slot.v.dtype())?;
        }
        self.steps = steps;
        Ok(())
    }
}
