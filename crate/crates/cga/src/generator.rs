//! Permutation-invariant encoder and autoregressive slate decoder.

use aforge_neural::{
    Activation, GruCell, Graph, Linear, Mlp, MultiHeadAttention, ParamId, ParamStore, Positional, Tensor, Var,
};
use rand::{Rng, RngCore};

use crate::batch::AdBatch;
use crate::config::ModelConfig;
use crate::error::{CgaError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Draw each slot from `z^t`; used for policy-gradient training.
    Sample,
    /// Take the most likely unmasked ad, lower index on ties.
    Greedy,
}

/// Encoder output for a batch (position-major rows).
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `(n * batch) x embed` attended ad embeddings `h_i`.
    pub h: Var,
    /// `batch x embed` user embedding.
    pub hu: Var,
    /// `batch x state` context, invariant to candidate order.
    pub c: Var,
}

/// Everything one decoding pass produced.
#[derive(Clone, Debug)]
pub struct Generation {
    pub encoded: Encoded,
    /// One slate per auction.
    pub allocs: Vec<Vec<usize>>,
    /// `s_0 .. s_k`, each `batch x state`.
    pub states: Vec<Var>,
    /// `probs[b][t]`: the distribution `z^t` over the auction's ads; masked
    /// ads hold exactly 0.
    pub probs: Vec<Vec<Vec<f64>>>,
    /// `batch x k` log-probabilities of the chosen ads.
    pub chosen_log_prob: Var,
}

impl Generation {
    /// `Z`: chosen-ad probabilities per auction, in slot order.
    pub fn chosen_probs(&self) -> Vec<Vec<f64>> {
        self.probs
            .iter()
            .zip(&self.allocs)
            .map(|(steps, alloc)| steps.iter().zip(alloc).map(|(z, &a)| z[a]).collect())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    cfg: ModelConfig,
    store: ParamStore,
    embed: Linear,
    attn: MultiHeadAttention,
    user: Linear,
    context: Mlp,
    start: ParamId,
    gru: GruCell,
    score: Mlp,
    w: ParamId,
}

impl Generator {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let e = cfg.embed;
        let embed = Linear::new(&mut store, "gen.embed", cfg.d_a + 2, e, rng)?;
        let attn = MultiHeadAttention::new(&mut store, "gen.attn", e, cfg.heads, Positional::None, rng)?;
        let user = Linear::new(&mut store, "gen.user", cfg.d_u, e, rng)?;
        let context =
            Mlp::new(&mut store, "gen.context", &[2 * e, cfg.state, cfg.state], Activation::Relu, Activation::Tanh, rng)?;
        let start = store.add_uniform("gen.start", 1, e, e, rng)?;
        let gru = GruCell::new(&mut store, "gen.gru", e, cfg.state, rng)?;
        let score = Mlp::new(
            &mut store,
            "gen.score",
            &[cfg.state + e, cfg.score_hidden, 1],
            Activation::Relu,
            Activation::Identity,
            rng,
        )?;
        let w = store.add("gen.w", Tensor::scalar(0.0))?;
        Ok(Self { cfg: cfg.clone(), store, embed, attn, user, context, start, gru, score, w })
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

    /// Handle of the final score layer, for tests that zero it.
    pub fn score_mlp(&self) -> &Mlp {
        &self.score
    }

    /// Handle of the learnable exponent `w` in the `e^w φ̃` term.
    pub fn w(&self) -> ParamId {
        self.w
    }

    pub fn encode(&self, g: &mut Graph, batch: &AdBatch) -> Result<Encoded> {
        let (n, bsz) = (batch.n, batch.batch);
        let ads = g.constant(batch.ads.clone());
        let e = self.embed.forward(g, &self.store, ads)?;
        let h = self.attn.forward_batched(g, &self.store, e, bsz)?;
        let users = g.constant(batch.users.clone());
        let hu = self.user.forward(g, &self.store, users)?;
        let mut pooled = g.slice_rows(h, 0, bsz)?;
        for i in 1..n {
            let hi = g.slice_rows(h, i * bsz, bsz)?;
            pooled = g.add(pooled, hi)?;
        }
        let joined = g.concat_cols(&[pooled, hu])?;
        let c = self.context.forward(g, &self.store, joined)?;
        Ok(Encoded { h, hu, c })
    }

    /// Log of `z^t` as a `batch x n` matrix: the shared score MLP applied
    /// to every `[s_t; h_i]` pair plus the prior `e^w φ̃`, softmaxed over the
    /// unmasked ads. `mask` is `batch x n`, row-major, `true` = taken.
    pub fn alloc_log_probs(
        &self,
        g: &mut Graph,
        state: Var,
        h: Var,
        prior: Var,
        n: usize,
        mask: &[bool],
    ) -> Result<Var> {
        let bsz = g.shape(state).0;
        let tiled = g.concat_rows(&vec![state; n])?;
        let pairs = g.concat_cols(&[tiled, h])?;
        let scores = self.score.forward(g, &self.store, pairs)?;
        let cols = (0..n).map(|i| g.slice_rows(scores, i * bsz, bsz)).collect::<aforge_neural::Result<Vec<_>>>()?;
        let logits = g.concat_cols(&cols)?;
        let logits = g.add(logits, prior)?;
        match g.masked_log_softmax(logits, mask) {
            Ok(v) => Ok(v),
            Err(_) if mask.iter().all(|&m| m) || n == 0 => {
                Err(CgaError::InvalidInput("every candidate ad is already allocated".into()))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// `e^w φ̃` as a `batch x n` variable.
    pub fn prior(&self, g: &mut Graph, batch: &AdBatch) -> Result<Var> {
        let w = g.param(&self.store, self.w);
        let ew = g.exp(w);
        let weights = g.constant(batch.weights.clone());
        Ok(g.mul_scalar(weights, ew)?)
    }

    pub fn generate(&self, g: &mut Graph, batch: &AdBatch, mode: Mode, rng: &mut dyn RngCore) -> Result<Generation> {
        let (n, k, bsz) = (batch.n, batch.k, batch.batch);
        let encoded = self.encode(g, batch)?;
        let prior = self.prior(g, batch)?;
        let start = g.param(&self.store, self.start);
        let mut x = g.repeat_rows(start, bsz)?;
        let mut s = encoded.c;
        let mut states = vec![s];
        let mut mask = vec![false; bsz * n];
        let mut allocs = vec![Vec::with_capacity(k); bsz];
        let mut probs = vec![Vec::with_capacity(k); bsz];
        let mut picked = Vec::with_capacity(k);
        for _ in 0..k {
            s = self.gru.forward(g, &self.store, s, x)?;
            states.push(s);
            let logp = self.alloc_log_probs(g, s, encoded.h, prior, n, &mask)?;
            let lp = g.value(logp);
            let mut choice = Vec::with_capacity(bsz);
            for b in 0..bsz {
                let z: Vec<f64> =
                    (0..n).map(|i| if mask[b * n + i] { 0.0 } else { lp.get(b, i).exp() }).collect();
                let pick = match mode {
                    Mode::Greedy => argmax_unmasked(&z, &mask[b * n..(b + 1) * n]),
                    Mode::Sample => sample_unmasked(&z, &mask[b * n..(b + 1) * n], rng),
                };
                mask[b * n + pick] = true;
                allocs[b].push(pick);
                probs[b].push(z);
                choice.push(pick);
            }
            picked.push(g.pick(logp, &choice)?);
            let rows: Vec<usize> = choice.iter().enumerate().map(|(b, &i)| i * bsz + b).collect();
            x = g.gather_rows(encoded.h, &rows)?;
        }
        let chosen_log_prob = g.concat_cols(&picked)?;
        Ok(Generation { encoded, allocs, states, probs, chosen_log_prob })
    }
}

fn argmax_unmasked(z: &[f64], mask: &[bool]) -> usize {
    let mut best: Option<usize> = None;
    for (i, (&p, &m)) in z.iter().zip(mask).enumerate() {
        if !m && best.is_none_or(|j| p > z[j]) {
            best = Some(i);
        }
    }
    best.expect("at least one unmasked ad")
}

fn sample_unmasked(z: &[f64], mask: &[bool], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (i, (&p, &m)) in z.iter().zip(mask).enumerate() {
        if m {
            continue;
        }
        acc += p;
        last = Some(i);
        if u < acc {
            return i;
        }
    }
    // rounding left the cumulative sum a hair below u
    last.expect("at least one unmasked ad")
}
