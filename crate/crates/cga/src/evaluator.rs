//! Permutation-aware CTR evaluator and the point-wise alternative.

use aforge_core::world::{pointwise_ctr, LoggedAuction};
use aforge_core::{CtrModel, PublicAuction};
use aforge_neural::{Activation, AdamConfig, BiLstm, Graph, Linear, Mlp, MultiHeadAttention, ParamStore, Positional, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::batch::{chunks, SlateBatch};
use crate::config::ModelConfig;
use crate::error::{CgaError, Result};

/// Probabilities are kept this far from 0 and 1 inside the log-loss.
pub const LOG_LOSS_CLAMP: f64 = 1e-6;

/// Scores ordered slates with one CTR per slot. Slates may have any length
/// up to `k`; a shortened slate occupies the first slots.
pub trait SlateScorer {
    fn theta(&self, auctions: &[&PublicAuction], slates: &[&[usize]]) -> Result<Vec<Vec<f64>>>;
}

/// Position-aware but context-free CTR `α`: the position-free pCTR decayed
/// by slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointwiseScorer {
    pub decay: f64,
}

impl SlateScorer for PointwiseScorer {
    fn theta(&self, auctions: &[&PublicAuction], slates: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
        Ok(auctions
            .iter()
            .zip(slates)
            .map(|(a, s)| s.iter().enumerate().map(|(t, &i)| pointwise_ctr(a.pctr[i], t, self.decay)).collect())
            .collect())
    }
}

/// Traced evaluator outputs, one row per slate position (position-major).
#[derive(Clone, Copy, Debug)]
pub struct EvaluatorVars {
    pub gamma: Var,
    pub theta: Var,
}

#[derive(Clone, Debug)]
pub struct Evaluator {
    cfg: ModelConfig,
    store: ParamStore,
    embed: Linear,
    user: Linear,
    attn: MultiHeadAttention,
    lstm: BiLstm,
    head: Mlp,
}

impl Evaluator {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let e = cfg.embed;
        let embed = Linear::new(&mut store, "eval.embed", cfg.d_a + 1, e, rng)?;
        let user = Linear::new(&mut store, "eval.user", cfg.d_u, e, rng)?;
        let attn = MultiHeadAttention::new(&mut store, "eval.attn", e, cfg.heads, Positional::Sinusoidal, rng)?;
        let lstm = BiLstm::new(&mut store, "eval.lstm", e, cfg.lstm_hidden, rng)?;
        let mut dims = vec![2 * e + 2 * cfg.lstm_hidden];
        dims.extend(&cfg.head_hidden);
        dims.push(1);
        let head = Mlp::new(&mut store, "eval.head", &dims, Activation::Relu, Activation::Identity, rng)?;
        Ok(Self { cfg: cfg.clone(), store, embed, user, attn, lstm, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    /// `γ = 2σ(MLP([H^s; H^f; H^b; h_u]))` and `θ = min(α ⊙ γ, 1)`.
    pub fn forward(&self, g: &mut Graph, slates: &SlateBatch) -> Result<EvaluatorVars> {
        let (len, bsz) = (slates.len, slates.batch);
        let x = g.constant(slates.slots.clone());
        let ha = self.embed.forward(g, &self.store, x)?;
        let hs = self.attn.forward_batched(g, &self.store, ha, bsz)?;
        let (hf, hb) = self.lstm.forward_batched(g, &self.store, ha, bsz)?;
        let users = g.constant(slates.users.clone());
        let hu = self.user.forward(g, &self.store, users)?;
        let hu = g.concat_rows(&vec![hu; len])?;
        let joined = g.concat_cols(&[hs, hf, hb, hu])?;
        let logit = self.head.forward(g, &self.store, joined)?;
        let gamma = g.sigmoid(logit);
        let gamma = g.scale(gamma, 2.0);
        let alpha = g.constant(Tensor::column_vector(slates.alpha.clone()));
        let theta = g.mul(alpha, gamma)?;
        let theta = g.min_with_const(theta, 1.0);
        Ok(EvaluatorVars { gamma, theta })
    }

    /// `(γ, θ)` per slate without tracing.
    pub fn predict(&self, slates: &SlateBatch) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut g = Graph::inference();
        let out = self.forward(&mut g, slates)?;
        Ok((slates.unstack(g.value(out.gamma).data()), slates.unstack(g.value(out.theta).data())))
    }

    fn slate_batch(&self, auctions: &[&PublicAuction], slates: &[&[usize]]) -> Result<SlateBatch> {
        SlateBatch::new(auctions, slates, self.cfg.d_a, self.cfg.d_u, self.cfg.alpha_decay)
    }

    /// Mean per-slate log-loss (summed over slots) on logged exposures.
    pub fn log_loss(&self, logs: &[LoggedAuction]) -> Result<f64> {
        let mut total = 0.0;
        for range in chunks(logs.len(), 1024) {
            let part = &logs[range];
            let auctions: Vec<&PublicAuction> = part.iter().map(|l| &l.instance.auction).collect();
            let slates: Vec<&[usize]> = part.iter().map(|l| l.log.alloc.as_slice()).collect();
            let (_, theta) = self.predict(&self.slate_batch(&auctions, &slates)?)?;
            for (l, th) in part.iter().zip(&theta) {
                total += slate_log_loss(th, &l.log.clicks);
            }
        }
        Ok(total / logs.len().max(1) as f64)
    }

    /// Minimises the click log-loss with Adam; returns the mean training
    /// loss of every epoch.
    pub fn train(
        &mut self,
        logs: &[LoggedAuction],
        epochs: usize,
        batch: usize,
        adam: &AdamConfig,
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>> {
        if logs.is_empty() {
            return Err(CgaError::InvalidInput("no logged exposures to train on".into()));
        }
        let mut order: Vec<usize> = (0..logs.len()).collect();
        let mut curve = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(rng);
            let mut epoch_loss = 0.0;
            for range in chunks(order.len(), batch) {
                let idx = &order[range];
                // Slates of different lengths go through separate graphs.
                let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
                for &i in idx {
                    by_len.entry(logs[i].log.alloc.len()).or_default().push(i);
                }
                for group in by_len.values() {
                    let auctions: Vec<&PublicAuction> = group.iter().map(|&i| &logs[i].instance.auction).collect();
                    let slates: Vec<&[usize]> = group.iter().map(|&i| logs[i].log.alloc.as_slice()).collect();
                    let sb = self.slate_batch(&auctions, &slates)?;
                    let mut clicks = vec![0.0; sb.len * sb.batch];
                    for (b, &i) in group.iter().enumerate() {
                        for (s, &c) in logs[i].log.clicks.iter().enumerate() {
                            clicks[s * sb.batch + b] = f64::from(c);
                        }
                    }
                    let mut g = Graph::new();
                    let out = self.forward(&mut g, &sb)?;
                    let loss = bce_sum(&mut g, out.theta, &clicks)?;
                    epoch_loss += g.value(loss).item();
                    let loss = g.scale(loss, 1.0 / idx.len() as f64);
                    g.backward(loss, &mut self.store)?;
                }
                self.store.adam_step(adam);
            }
            curve.push(epoch_loss / logs.len() as f64);
        }
        Ok(curve)
    }
}

/// `-Σ [y log θ + (1-y) log(1-θ)]` with θ clamped away from 0 and 1.
fn bce_sum(g: &mut Graph, theta: Var, clicks: &[f64]) -> Result<Var> {
    let t = g.clamp(theta, LOG_LOSS_CLAMP, 1.0 - LOG_LOSS_CLAMP);
    let log_t = g.log(t);
    let one_minus = g.neg(t);
    let one_minus = g.add_const(one_minus, 1.0);
    let log_1mt = g.log(one_minus);
    let y = g.constant(Tensor::column_vector(clicks.to_vec()));
    let not_y = g.constant(Tensor::column_vector(clicks.iter().map(|c| 1.0 - c).collect()));
    let pos = g.mul(y, log_t)?;
    let neg = g.mul(not_y, log_1mt)?;
    let ll = g.add(pos, neg)?;
    let total = g.sum(ll);
    Ok(g.neg(total))
}

/// Log-loss of one slate's predictions against its clicks.
pub fn slate_log_loss(theta: &[f64], clicks: &[u8]) -> f64 {
    theta
        .iter()
        .zip(clicks)
        .map(|(&t, &y)| {
            let t = t.clamp(LOG_LOSS_CLAMP, 1.0 - LOG_LOSS_CLAMP);
            if y == 1 { -t.ln() } else { -(1.0 - t).ln() }
        })
        .sum()
}

/// Mean per-slate log-loss of the point-wise CTRs recorded in the logs.
pub fn pointwise_log_loss(logs: &[LoggedAuction]) -> f64 {
    logs.iter().map(|l| slate_log_loss(&l.log.pctr, &l.log.clicks)).sum::<f64>() / logs.len().max(1) as f64
}

impl SlateScorer for Evaluator {
    fn theta(&self, auctions: &[&PublicAuction], slates: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![Vec::new(); slates.len()];
        let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, s) in slates.iter().enumerate() {
            if s.is_empty() {
                continue;
            }
            by_len.entry(s.len()).or_default().push(i);
        }
        for group in by_len.values() {
            for range in chunks(group.len(), 2048) {
                let ids = &group[range];
                let a: Vec<&PublicAuction> = ids.iter().map(|&i| auctions[i]).collect();
                let s: Vec<&[usize]> = ids.iter().map(|&i| slates[i]).collect();
                let (_, theta) = self.predict(&self.slate_batch(&a, &s)?)?;
                for (&i, t) in ids.iter().zip(theta) {
                    out[i] = t;
                }
            }
        }
        Ok(out)
    }
}

impl CtrModel for Evaluator {
    fn ctrs(&self, auction: &PublicAuction, alloc: &[usize]) -> aforge_core::Result<Vec<f64>> {
        if !auction.is_feasible(alloc) {
            return Err(aforge_core::CoreError::Infeasible { alloc: alloc.to_vec(), n: auction.n(), k: auction.k });
        }
        Ok(SlateScorer::theta(self, &[auction], &[alloc])?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_loss_reference_values() {
        let half = slate_log_loss(&[0.5, 0.5], &[1, 0]);
        assert!((half - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = slate_log_loss(&[1.0, 0.0], &[1, 0]);
        assert!(perfect < 3e-6);
    }
}
