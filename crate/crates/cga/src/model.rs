//! The assembled mechanism: greedy generator, slate scorer and payment
//! network behind the core `Mechanism` interface.

use std::collections::BTreeMap;
use std::path::Path;

use aforge_core::rng::stream_rng;
use aforge_core::{Allocation, Decision, Mechanism, PublicAuction};
use aforge_neural::Graph;
use rand::RngCore;

use crate::batch::{chunks, AdBatch};
use crate::config::Variant;
use crate::error::{CgaError, Result};
use crate::evaluator::{Evaluator, PointwiseScorer, SlateScorer};
use crate::generator::{Generator, Mode};
use crate::payment::{payment_row, PaymentNet};

/// Auctions per inference batch.
pub const INFERENCE_BATCH: usize = 512;

/// Whatever scores slates for the variant: the learned evaluator or `α`.
#[derive(Clone, Debug)]
pub enum Scorer {
    Evaluator(Evaluator),
    Pointwise(PointwiseScorer),
}

impl SlateScorer for Scorer {
    fn theta(&self, auctions: &[&PublicAuction], slates: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
        match self {
            Scorer::Evaluator(e) => e.theta(auctions, slates),
            Scorer::Pointwise(p) => p.theta(auctions, slates),
        }
    }
}

/// The frozen generator-evaluator result for one auction.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocated {
    pub alloc: Vec<usize>,
    /// `Z`: probability of each chosen ad at its step.
    pub z: Vec<f64>,
    /// Scorer CTR per slot.
    pub theta: Vec<f64>,
    /// Encoder embedding of each winner, in slot order.
    pub h: Vec<Vec<f64>>,
}

impl Allocated {
    /// Payment-network input rows, one per slot.
    pub fn payment_rows(&self, auction: &PublicAuction) -> Vec<Vec<f64>> {
        let bids: Vec<f64> = self.alloc.iter().map(|&a| auction.bids[a]).collect();
        (0..self.alloc.len()).map(|s| payment_row(&self.h[s], &bids, s, self.z[s], self.theta[s])).collect()
    }
}

/// Indices of `items` grouped by `(n, k)`, in first-seen order.
pub(crate) fn group_by_shape(auctions: &[&PublicAuction]) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, a) in auctions.iter().enumerate() {
        groups.entry((a.n(), a.k)).or_default().push(i);
    }
    groups.into_values().collect()
}

#[derive(Clone, Debug)]
pub struct Cga {
    pub variant: Variant,
    pub generator: Generator,
    pub scorer: Scorer,
    pub payment: PaymentNet,
}

impl Cga {
    pub fn new(variant: Variant, generator: Generator, scorer: Scorer, payment: PaymentNet) -> Result<Self> {
        match (&scorer, variant.use_evaluator) {
            (Scorer::Evaluator(_), false) | (Scorer::Pointwise(_), true) => Err(CgaError::InvalidConfig(format!(
                "variant {} does not match the supplied scorer",
                variant.name()
            ))),
            _ => Ok(Self { variant, generator, scorer, payment }),
        }
    }

    /// Greedy slates with their scorer CTRs and winner embeddings.
    pub fn allocate(&self, auctions: &[&PublicAuction]) -> Result<Vec<Allocated>> {
        let mut out = vec![None; auctions.len()];
        let cfg = self.generator.config();
        for group in group_by_shape(auctions) {
            for range in chunks(group.len(), INFERENCE_BATCH) {
                let ids = &group[range];
                let part: Vec<&PublicAuction> = ids.iter().map(|&i| auctions[i]).collect();
                let batch = AdBatch::new(&part, cfg.d_a, cfg.d_u, self.variant.use_virtual_value)?;
                let mut g = Graph::inference();
                // greedy decoding never draws from the stream
                let mut rng = stream_rng(0, "cga.greedy", 0);
                let gen = self.generator.generate(&mut g, &batch, Mode::Greedy, &mut rng)?;
                let slates: Vec<&[usize]> = gen.allocs.iter().map(Vec::as_slice).collect();
                let theta = self.scorer.theta(&part, &slates)?;
                let z = gen.chosen_probs();
                let h = g.value(gen.encoded.h);
                for (b, &i) in ids.iter().enumerate() {
                    let alloc = gen.allocs[b].clone();
                    let rows = alloc.iter().map(|&a| h.row(a * batch.batch + b).to_vec()).collect();
                    out[i] = Some(Allocated { alloc, z: z[b].clone(), theta: theta[b].clone(), h: rows });
                }
            }
        }
        Ok(out.into_iter().map(|a| a.expect("every auction allocated")).collect())
    }

    /// Greedy slates and payments for many auctions at once.
    pub fn decide_batch(&self, auctions: &[&PublicAuction]) -> Result<Vec<Decision>> {
        let allocated = self.allocate(auctions)?;
        let mut rows = Vec::new();
        let mut bids = Vec::new();
        for (a, al) in auctions.iter().zip(&allocated) {
            rows.extend(al.payment_rows(a));
            bids.extend(al.alloc.iter().map(|&i| a.bids[i]));
        }
        let mut payments = Vec::with_capacity(rows.len());
        for range in chunks(rows.len(), 4096) {
            payments.extend(self.payment.predict(&rows[range.clone()], &bids[range])?);
        }
        let mut cursor = 0;
        Ok(allocated
            .into_iter()
            .map(|al| {
                let k = al.alloc.len();
                let p = payments[cursor..cursor + k].to_vec();
                cursor += k;
                Decision { allocation: Allocation::new(al.alloc), payments: p }
            })
            .collect())
    }

    /// Writes `generator.ckpt`, `payment.ckpt` and, when the variant uses
    /// one, `evaluator.ckpt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(aforge_neural::NeuralError::from)?;
        self.generator.store().save(&dir.join("generator.ckpt"))?;
        self.payment.store().save(&dir.join("payment.ckpt"))?;
        if let Scorer::Evaluator(e) = &self.scorer {
            e.store().save(&dir.join("evaluator.ckpt"))?;
        }
        Ok(())
    }

    /// Loads weights saved by [`save`](Self::save) into a model of the
    /// same architecture.
    pub fn load(&mut self, dir: &Path) -> Result<()> {
        self.generator.store_mut().load(&dir.join("generator.ckpt"))?;
        self.payment.store_mut().load(&dir.join("payment.ckpt"))?;
        if let Scorer::Evaluator(e) = &mut self.scorer {
            e.store_mut().load(&dir.join("evaluator.ckpt"))?;
        }
        Ok(())
    }
}

impl Mechanism for Cga {
    fn name(&self) -> String {
        self.variant.name()
    }

    fn decide(&self, auction: &PublicAuction, _rng: &mut dyn RngCore) -> aforge_core::Result<Decision> {
        Ok(self.decide_batch(&[auction])?.remove(0))
    }
}
