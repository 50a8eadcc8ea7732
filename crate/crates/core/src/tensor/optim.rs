//! Learnable parameter storage, Adam with decoupled weight decay, and the
//! exponential moving average of parameters kept for evaluation checkpoints.

use super::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered collection of learnable tensors with gradient buffers.
#[derive(Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub(crate) fn add_grad(&mut self, id: ParamId, contrib: &[f64]) {
        let g = self.tensors[id.0].grad.as_mut().expect("param has grad buffer");
        for (gv, &c) in g.iter_mut().zip(contrib) {
            *gv += c;
        }
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            if let Some(g) = t.grad.as_mut() {
                g.fill(0.0);
            }
        }
    }

    /// Replaces stored values with `values` (same order as registration).
    pub fn load_values(&mut self, values: &[Vec<f64>]) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(Error::invalid(
                "ParamStore::load_values",
                format!("expected {} arrays, got {}", self.tensors.len(), values.len()),
            ));
        }
        for (t, v) in self.tensors.iter_mut().zip(values) {
            if t.numel() != v.len() {
                return Err(Error::invalid(
                    "ParamStore::load_values",
                    format!("array length {} does not match parameter {}", v.len(), t.numel()),
                ));
            }
            t.data_mut().copy_from_slice(v);
        }
        Ok(())
    }
}

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Adam with decoupled weight decay. Moment buffers are laid out to match
/// the store; the step counter increases once per successful step.
pub struct AdamState {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let m = store.ids().map(|id| vec![0.0; store.tensor(id).numel()]).collect();
        let v = store.ids().map(|id| vec![0.0; store.tensor(id).numel()]).collect();
        AdamState { cfg, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update from the store's accumulated gradients. Rejects the whole
    /// step if any gradient is non-finite; zeroes gradients on success.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for id in store.ids() {
            let g = store.tensor(id).grad.as_deref().expect("grad buffer");
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(
                    "adam_step",
                    format!("non-finite gradient in parameter {}", store.name(id)),
                ));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        for (i, id) in store.ids().enumerate().collect::<Vec<_>>() {
            let tensor = store.tensor_mut(id);
            let n = tensor.numel();
            // Split borrows: grads read, data written.
            let grad = tensor.grad.take().expect("grad buffer");
            {
                let data = tensor.data_mut();
                let m = &mut self.m[i];
                let v = &mut self.v[i];
                for j in 0..n {
                    let g = grad[j];
                    m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                    v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    data[j] -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * data[j]);
                }
            }
            let mut grad = grad;
            grad.fill(0.0);
            tensor.grad = Some(grad);
        }
        Ok(())
    }
}

/// Exponential moving average of parameters:
/// `shadow <- decay * shadow + (1 - decay) * current`.
pub struct EmaState {
    decay: f64,
    shadow: Vec<Vec<f64>>,
}

impl EmaState {
    pub fn new(decay: f64, store: &ParamStore) -> Result<Self> {
        if !(0.0 < decay && decay < 1.0) {
            return Err(Error::invalid(
                "EmaState::new",
                format!("decay must lie in (0, 1), got {decay}"),
            ));
        }
        Ok(EmaState {
            decay,
            shadow: store.ids().map(|id| store.tensor(id).data().to_vec()).collect(),
        })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn update(&mut self, store: &ParamStore) {
        for (i, id) in store.ids().enumerate() {
            let cur = store.tensor(id).data();
            for (s, &p) in self.shadow[i].iter_mut().zip(cur) {
                *s = self.decay * *s + (1.0 - self.decay) * p;
            }
        }
    }

    pub fn shadow(&self) -> &[Vec<f64>] {
        &self.shadow
    }

    pub fn shadow_mut(&mut self) -> &mut Vec<Vec<f64>> {
        &mut self.shadow
    }

    /// Copies the shadow values into the store (for evaluation snapshots).
    pub fn apply_to(&self, store: &mut ParamStore) {
        for (i, id) in store.ids().enumerate() {
            store.tensor_mut(id).data_mut().copy_from_slice(&self.shadow[i]);
        }
    }
}
