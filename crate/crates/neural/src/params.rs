//! Named learnable parameters with gradient slots, Adam moments and
//! versioned checkpoints.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::tensor::Tensor;

/// Magic first line of every checkpoint file.
pub const CHECKPOINT_MAGIC: &str = "AFORGE1";

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to one parameter. Carries the id of the owning store so that a
/// graph mixing several stores routes gradients to the right one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId {
    store: u64,
    index: usize,
}

impl ParamId {
    pub fn index(&self) -> usize {
        self.index
    }

    pub(crate) fn store(&self) -> u64 {
        self.store
    }
}

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

#[derive(Debug)]
pub struct ParamStore {
    id: u64,
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
    step: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    /// A clone keeps the store id so that layer handles built against the
    /// original stay valid on the copy. Do not mix a store and its clone in
    /// one graph: their gradients would be indistinguishable.
    fn clone(&self) -> Self {
        Self { id: self.id, params: self.params.clone(), by_name: self.by_name.clone(), step: self.step }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
            by_name: HashMap::new(),
            step: 0,
        }
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(NeuralError::DuplicateName(name.to_string()));
        }
        let (r, c) = value.shape();
        self.by_name.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
        });
        Ok(ParamId { store: self.id, index: self.params.len() - 1 })
    }

    /// Adds a parameter initialised uniformly in `±1/sqrt(fan_in)`.
    pub fn add_uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn id_of(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .map(|&index| ParamId { store: self.id, index })
            .ok_or_else(|| NeuralError::UnknownParam(name.to_string()))
    }

    fn check(&self, id: ParamId) -> usize {
        assert_eq!(id.store, self.id, "parameter handle belongs to a different store");
        id.index
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[self.check(id)].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        let i = self.check(id);
        &mut self.params[i].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[self.check(id)].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[self.check(id)].name
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(|index| ParamId { store: self.id, index })
    }

    /// Total number of scalar weights.
    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn accumulate(&mut self, index: usize, grad: &Tensor) {
        self.params[index].grad.add_assign(grad);
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().flat_map(|p| p.grad.data()).map(|g| g * g).sum::<f64>().sqrt()
    }

    /// One bias-corrected Adam update over every parameter, then clears the
    /// gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            let grads = p.grad.data();
            let m = p.m.data_mut();
            for (mi, &g) in m.iter_mut().zip(grads) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            }
            let v = p.v.data_mut();
            for (vi, &g) in v.iter_mut().zip(grads) {
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            }
            let (m, v) = (p.m.data(), p.v.data());
            for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        self.zero_grad();
    }

    /// Raw parameter bytes in registration order; used to assert freezing.
    pub fn fingerprint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for p in &self.params {
            out.extend_from_slice(p.name.as_bytes());
            for x in p.value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let entries: Vec<CheckpointEntry> = self
            .params
            .iter()
            .map(|p| CheckpointEntry {
                name: p.name.clone(),
                shape: [p.value.rows(), p.value.cols()],
                values: p.value.data().to_vec(),
            })
            .collect();
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        serde_json::to_writer(&mut w, &entries).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Overwrites parameter values from a checkpoint. Every registered name
    /// must be present with a matching shape; extra names are rejected.
    pub fn read_checkpoint<R: BufRead>(&mut self, mut r: R) -> Result<()> {
        let mut magic = String::new();
        r.read_line(&mut magic)?;
        if magic.trim_end() != CHECKPOINT_MAGIC {
            return Err(NeuralError::Checkpoint(format!(
                "bad magic header {:?}, expected {CHECKPOINT_MAGIC}",
                magic.trim_end()
            )));
        }
        let entries: Vec<CheckpointEntry> =
            serde_json::from_reader(r).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        let mut loaded: BTreeMap<String, CheckpointEntry> =
            entries.into_iter().map(|e| (e.name.clone(), e)).collect();
        for p in &mut self.params {
            let e = loaded
                .remove(&p.name)
                .ok_or_else(|| NeuralError::Checkpoint(format!("missing parameter `{}`", p.name)))?;
            if e.shape != [p.value.rows(), p.value.cols()] || e.values.len() != p.value.len() {
                return Err(NeuralError::Checkpoint(format!(
                    "shape mismatch for `{}`: file {:?}, model {:?}",
                    p.name,
                    e.shape,
                    p.value.shape()
                )));
            }
            p.value.data_mut().copy_from_slice(&e.values);
        }
        if let Some(extra) = loaded.keys().next() {
            return Err(NeuralError::Checkpoint(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let file = std::fs::File::open(path)?;
        self.read_checkpoint(std::io::BufReader::new(file))
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}
