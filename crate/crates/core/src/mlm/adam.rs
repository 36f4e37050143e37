use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::checkpoint::TensorMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.learning_rate.is_finite();
        if !ok {
            return Err(Error::Argument(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates per tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update of every tensor that has a gradient.
/// Gradients must name existing tensors with identical shapes.
pub fn adam_step(tensors: &mut TensorMap, grads: &TensorMap, state: &mut AdamState, hyper: &AdamHyper) -> Result<()> {
    hyper.validate()?;
    for (name, g) in grads {
        let t = tensors
            .get(name)
            .ok_or_else(|| Error::Shape(format!("gradient for unknown tensor `{name}`")))?;
        if t.shape != g.shape || t.data.len() != g.data.len() {
            return Err(Error::Shape(format!(
                "`{name}`: tensor shape {:?}, gradient shape {:?}",
                t.shape, g.shape
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (name, g) in grads {
        let p = tensors.get_mut(name).expect("checked above");
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.data.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.data.len()]);
        for i in 0..g.data.len() {
            let gi = g.data[i];
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p.data[i] -= hyper.learning_rate * mhat / (vhat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}
