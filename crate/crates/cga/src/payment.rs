//! PaymentNet: per-winner payment rates from the winners' embeddings, the
//! other winners' bids and the expected click mass `z Θ`.

use aforge_neural::{Activation, Graph, Mlp, ParamStore, Tensor, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{CgaError, Result};

#[derive(Clone, Debug)]
pub struct PaymentNet {
    store: ParamStore,
    mlp: Mlp,
    embed: usize,
    k: usize,
}

/// One row of payment-network input.
pub fn payment_row(h: &[f64], winner_bids: &[f64], slot: usize, z: f64, theta: f64) -> Vec<f64> {
    let mut row = Vec::with_capacity(h.len() + winner_bids.len());
    row.extend_from_slice(h);
    row.extend(winner_bids.iter().enumerate().filter(|&(t, _)| t != slot).map(|(_, &b)| b));
    row.push(z * theta);
    row
}

impl PaymentNet {
    pub fn new(cfg: &ModelConfig, k: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if k == 0 {
            return Err(CgaError::InvalidConfig("payment network needs at least one slot".into()));
        }
        let mut store = ParamStore::new();
        let mut dims = vec![cfg.embed + k];
        dims.extend(&cfg.payment_hidden);
        dims.push(1);
        let mlp = Mlp::new(&mut store, "pay.mlp", &dims, Activation::Relu, Activation::Sigmoid, rng)?;
        Ok(Self { store, mlp, embed: cfg.embed, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Width of one input row: `embed + (k - 1) + 1`.
    pub fn input_dim(&self) -> usize {
        self.embed + self.k
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// Payment rates `p̃ ∈ (0,1)` (an `m x 1` column) for `m` input rows.
    pub fn rates(&self, g: &mut Graph, rows: Var) -> Result<Var> {
        let (_, c) = g.shape(rows);
        if c != self.input_dim() {
            return Err(CgaError::InvalidInput(format!("payment rows have {c} columns, expected {}", self.input_dim())));
        }
        Ok(self.mlp.forward(g, &self.store, rows)?)
    }

    /// Per-click payments `p = p̃ ⊙ b`.
    pub fn payments(&self, g: &mut Graph, rows: Var, bids: &[f64]) -> Result<Var> {
        let rates = self.rates(g, rows)?;
        let b = g.constant(Tensor::column_vector(bids.to_vec()));
        Ok(g.mul(rates, b)?)
    }

    /// Untraced payments for plain row vectors.
    pub fn predict(&self, rows: &[Vec<f64>], bids: &[f64]) -> Result<Vec<f64>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::inference();
        let x = g.constant(Tensor::from_rows(rows));
        let p = self.payments(&mut g, x, bids)?;
        Ok(g.value(p).data().to_vec())
    }
}
