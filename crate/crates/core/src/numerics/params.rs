use std::collections::HashMap;

use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, NamedTensor};
use super::{Mat, NumError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Linear warm-up to `base`, then linear decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearDecay {
    pub base: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LinearDecay {
    /// Learning rate for the 0-based step `t`.
    pub fn at(&self, t: u64) -> f64 {
        if t < self.warmup_steps {
            return self.base * (t + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let done = (t - self.warmup_steps) as f64;
        self.base * (1.0 - done / span).max(0.0)
    }
}

/// Named parameters with gradient accumulators and Adam moments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    values: Vec<Mat>,
    grads: Vec<Mat>,
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Mat) -> Result<ParamId, NumError> {
        if self.index.contains_key(name) {
            return Err(NumError::DuplicateParameter(name.to_string()));
        }
        let id = ParamId(self.values.len());
        let z = Array2::zeros(value.dim());
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.grads.push(z.clone());
        self.m.push(z.clone());
        self.v.push(z);
        self.values.push(value);
        Ok(id)
    }

    /// Adds a `rows × cols` parameter drawn uniformly from `[-bound, bound]`.
    pub fn add_uniform<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, bound: f64, rng: &mut R) -> Result<ParamId, NumError> {
        let value = Array2::from_shape_simple_fn((rows, cols), || if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 });
        self.add(name, value)
    }

    pub fn add_const(&mut self, name: &str, rows: usize, cols: usize, c: f64) -> Result<ParamId, NumError> {
        self.add(name, Array2::from_elem((rows, cols), c))
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NumError> {
        self.index.get(name).copied().ok_or_else(|| NumError::UnknownParameter(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar count over all parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Mat {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.grads[id.0]
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Adam steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Zeroes the moments and the step counter. A parameter whose gradient
    /// then stays zero is left exactly unchanged by later steps.
    pub fn reset_optimizer(&mut self) {
        for (m, v) in self.m.iter_mut().zip(&mut self.v) {
            m.fill(0.0);
            v.fill(0.0);
        }
        self.step = 0;
    }

    /// One bias-corrected Adam update from the accumulated gradients.
    /// Nothing is modified if any gradient is non-finite.
    pub fn adam_step(&mut self, cfg: &AdamConfig, lr: f64) -> Result<(), NumError> {
        for (i, g) in self.grads.iter().enumerate() {
            if let Some((index, &value)) = g.iter().enumerate().find(|(_, x)| !x.is_finite()) {
                return Err(NumError::NonFiniteGradient { param: self.names[i].clone(), index, value });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..self.values.len() {
            Zip::from(&mut self.values[i]).and(&mut self.m[i]).and(&mut self.v[i]).and(&self.grads[i]).for_each(|w, m, v, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            });
        }
        Ok(())
    }

    /// Parameters, and optionally optimizer state, as a checkpoint.
    pub fn to_checkpoint(&self, with_optimizer: bool) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for (i, name) in self.names.iter().enumerate() {
            ck.tensors.push(NamedTensor::from_mat(name, &self.values[i]));
        }
        if with_optimizer {
            ck.meta.insert("adam.step".into(), self.step.to_string());
            for (i, name) in self.names.iter().enumerate() {
                ck.tensors.push(NamedTensor::from_mat(&format!("adam.m/{name}"), &self.m[i]));
                ck.tensors.push(NamedTensor::from_mat(&format!("adam.v/{name}"), &self.v[i]));
            }
        }
        ck
    }

    /// Inverse of [`to_checkpoint`](Self::to_checkpoint). Optimizer state
    /// is restored when present and zeroed otherwise.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NumError> {
        let mut store = Self::new();
        let mut moments = HashMap::new();
        for t in &ck.tensors {
            let mat = t.to_mat().map_err(|msg| NumError::Argument { op: "from_checkpoint", msg })?;
            if t.name.starts_with("adam.m/") || t.name.starts_with("adam.v/") {
                moments.insert(t.name.clone(), mat);
            } else {
                store.add(&t.name, mat)?;
            }
        }
        if let Some(step) = ck.meta.get("adam.step") {
            store.step = step.parse().map_err(|_| NumError::Argument { op: "from_checkpoint", msg: format!("adam.step {step:?}") })?;
            for i in 0..store.names.len() {
                let name = &store.names[i];
                let (Some(m), Some(v)) = (moments.remove(&format!("adam.m/{name}")), moments.remove(&format!("adam.v/{name}"))) else {
                    return Err(NumError::Argument { op: "from_checkpoint", msg: format!("missing moments for {name}") });
                };
                if m.dim() != store.values[i].dim() || v.dim() != store.values[i].dim() {
                    return Err(NumError::Shape { op: "from_checkpoint", shapes: vec![store.values[i].dim(), m.dim(), v.dim()] });
                }
                store.m[i] = m;
                store.v[i] = v;
            }
        }
        Ok(store)
    }
}
