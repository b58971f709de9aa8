use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One named parameter with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub trainable: bool,
    pub(crate) moment1: Vec<f64>,
    pub(crate) moment2: Vec<f64>,
    pub(crate) steps: u64,
}

/// Named tensors shared by every model component.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Persisted optimizer moments for one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    pub steps: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Equality by name; insertion order does not matter.
impl PartialEq for ParameterStore {
    fn eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len() && self.entries.iter().all(|e| other.entry(&e.name) == Some(e))
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts (or replaces) a parameter. Replacing resets its optimizer state.
    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) {
        let n = value.len();
        let entry = ParamEntry {
            name: name.to_string(),
            grad: vec![0.0; n],
            moment1: vec![0.0; n],
            moment2: vec![0.0; n],
            steps: 0,
            value,
            trainable,
        };
        match self.index.get(name) {
            Some(&i) => self.entries[i] = entry,
            None => {
                self.index.insert(name.to_string(), self.entries.len());
                self.entries.push(entry);
            }
        }
    }

    /// Inserts a parameter drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn insert_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor { shape: shape.to_vec(), values }, true);
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index_of(name)
            .map(|i| &self.entries[i].value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].value),
            None => Err(Error::MissingParam(name.to_string())),
        }
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.index_of(name).map(|i| &self.entries[i])
    }

    pub(crate) fn entry_at(&self, i: usize) -> &ParamEntry {
        &self.entries[i]
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let i = self.index_of(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        self.entries[i].trainable = trainable;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = &ParamEntry> {
        self.index.values().map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds `grad` into the accumulator of entry `i`.
    pub(crate) fn accumulate(&mut self, i: usize, grad: &[f64]) {
        for (g, d) in self.entries[i].grad.iter_mut().zip(grad) {
            *g += d;
        }
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Multiplies every accumulated gradient by `factor` (batch averaging).
    pub fn scale_grad(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// One Adam update of every trainable entry; gradients are zeroed afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.adam_step_filtered(cfg, |_| true);
    }

    /// Adam update restricted to trainable entries whose name passes `filter`.
    ///
    /// Weight decay is the L2 form (`g + wd * w`). Entries that are skipped keep
    /// their moments; all gradients are zeroed.
    pub fn adam_step_filtered(&mut self, cfg: &AdamConfig, filter: impl Fn(&str) -> bool) {
        for e in &mut self.entries {
            if e.trainable && filter(&e.name) {
                e.steps += 1;
                let t = e.steps as i32;
                let bc1 = 1.0 - cfg.beta1.powi(t);
                let bc2 = 1.0 - cfg.beta2.powi(t);
                for j in 0..e.value.values.len() {
                    let g = e.grad[j] + cfg.weight_decay * e.value.values[j];
                    e.moment1[j] = cfg.beta1 * e.moment1[j] + (1.0 - cfg.beta1) * g;
                    e.moment2[j] = cfg.beta2 * e.moment2[j] + (1.0 - cfg.beta2) * g * g;
                    let m_hat = e.moment1[j] / bc1;
                    let v_hat = e.moment2[j] / bc2;
                    e.value.values[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            }
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn moment_state(&self) -> BTreeMap<String, MomentState> {
        self.entries()
            .map(|e| {
                (
                    e.name.clone(),
                    MomentState {
                        steps: e.steps,
                        m: e.moment1.clone(),
                        v: e.moment2.clone(),
                    },
                )
            })
            .collect()
    }

    pub fn restore_moments(&mut self, state: &BTreeMap<String, MomentState>) -> Result<()> {
        for (name, st) in state {
            let i = self.index_of(name).ok_or_else(|| Error::MissingParam(name.clone()))?;
            let e = &mut self.entries[i];
            if st.m.len() != e.value.len() || st.v.len() != e.value.len() {
                return Err(Error::Shape {
                    op: "restore_moments",
                    left: e.value.shape.clone(),
                    right: vec![st.m.len(), st.v.len()],
                });
            }
            e.steps = st.steps;
            e.moment1 = st.m.clone();
            e.moment2 = st.v.clone();
        }
        Ok(())
    }

    /// Copies only parameter values (not optimizer state) from `other`.
    pub fn copy_values_from(&mut self, other: &ParameterStore) {
        for e in &mut self.entries {
            if let Some(src) = other.entry(&e.name) {
                e.value = src.value.clone();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(trainable: bool) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::vector(vec![1.0]), trainable);
        s
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut s = scalar_store(true);
        let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
        s.adam_step(&cfg);
        assert_eq!(s.get("w").unwrap().values, vec![1.0]);
    }

    #[test]
    fn frozen_entry_is_not_updated() {
        let mut s = scalar_store(false);
        s.accumulate(0, &[5.0]);
        s.adam_step(&AdamConfig::default());
        assert_eq!(s.get("w").unwrap().values, vec![1.0]);
        assert_eq!(s.entry("w").unwrap().grad, vec![0.0]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // m = 0.1, v = 0.001; bias correction gives m_hat = v_hat = 1,
        // so the step is lr / (1 + eps).
        let mut s = scalar_store(true);
        s.accumulate(0, &[1.0]);
        let cfg = AdamConfig { lr: 0.001, weight_decay: 0.0, ..Default::default() };
        s.adam_step(&cfg);
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        let got = s.get("w").unwrap().values[0];
        assert!((got - 0.999).abs() < 1e-6);
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn filtered_step_skips_other_entries() {
        let mut s = ParameterStore::new();
        s.insert("a.w", Tensor::vector(vec![1.0]), true);
        s.insert("b.w", Tensor::vector(vec![1.0]), true);
        s.accumulate(0, &[1.0]);
        s.accumulate(1, &[1.0]);
        s.adam_step_filtered(&AdamConfig::default(), |n| n.starts_with("a."));
        assert!(s.get("a.w").unwrap().values[0] < 1.0);
        assert_eq!(s.get("b.w").unwrap().values[0], 1.0);
        assert_eq!(s.entry("b.w").unwrap().steps, 0);
    }
}
