//! CTR models and per-auction score tables.

use crate::auction::PublicAuction;
use crate::enumerate::{check_cap, enumerate_allocations};
use crate::error::{CoreError, Result};

/// Maps an auction and a feasible slate to one CTR per slot.
///
/// Implementations must not read the bids: every mechanism here assumes
/// CTRs depend only on features, user and slot order, which is what lets
/// a [`ScoreTable`] be reused across bid changes.
pub trait CtrModel {
    fn ctrs(&self, auction: &PublicAuction, alloc: &[usize]) -> Result<Vec<f64>>;
}

impl<T: CtrModel + ?Sized> CtrModel for &T {
    fn ctrs(&self, auction: &PublicAuction, alloc: &[usize]) -> Result<Vec<f64>> {
        (**self).ctrs(auction, alloc)
    }
}

/// The same CTR in every slot for every ad.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantCtr(pub f64);

impl CtrModel for ConstantCtr {
    fn ctrs(&self, auction: &PublicAuction, alloc: &[usize]) -> Result<Vec<f64>> {
        if !auction.is_feasible(alloc) {
            return Err(CoreError::Infeasible { alloc: alloc.to_vec(), n: auction.n(), k: auction.k });
        }
        Ok(vec![self.0; alloc.len()])
    }
}

/// Largest table a mechanism will materialise; beyond this the memory cost
/// (`k` floats per allocation) stops being desk-scale.
pub const TABLE_CAP: u64 = 2_000_000;

/// Every allocation of one auction, in lexicographic order, with its CTRs.
#[derive(Clone, Debug)]
pub struct ScoreTable {
    n: usize,
    k: usize,
    allocs: Vec<usize>,
    ctrs: Vec<f64>,
}

impl ScoreTable {
    pub fn build(auction: &PublicAuction, model: &dyn CtrModel, cap: u64) -> Result<Self> {
        let (n, k) = (auction.n(), auction.k);
        let count = check_cap(n, k, cap.min(TABLE_CAP))? as usize;
        let mut allocs = Vec::with_capacity(count * k);
        let mut ctrs = Vec::with_capacity(count * k);
        let mut it = enumerate_allocations(n, k, cap.min(TABLE_CAP))?;
        while let Some(a) = it.next_slice() {
            allocs.extend_from_slice(a);
            ctrs.extend(model.ctrs(auction, a)?);
        }
        Ok(Self { n, k, allocs, ctrs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.allocs.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.allocs.is_empty()
    }

    pub fn alloc(&self, idx: usize) -> &[usize] {
        &self.allocs[idx * self.k..(idx + 1) * self.k]
    }

    pub fn ctrs(&self, idx: usize) -> &[f64] {
        &self.ctrs[idx * self.k..(idx + 1) * self.k]
    }

    /// CTR of `ad` under allocation `idx`, zero if it is not shown.
    pub fn ctr_of(&self, idx: usize, ad: usize) -> f64 {
        self.alloc(idx).iter().position(|&a| a == ad).map_or(0.0, |s| self.ctrs(idx)[s])
    }

    /// `Σ_s weights[A_s] θ_s`, summed in slot order.
    pub fn welfare(&self, idx: usize, weights: &[f64]) -> f64 {
        self.alloc(idx).iter().zip(self.ctrs(idx)).map(|(&a, &c)| weights[a] * c).sum()
    }

    /// Index of the welfare-maximising allocation; the first (lexicographically
    /// smallest) wins ties.
    pub fn argmax(&self, weights: &[f64]) -> usize {
        self.argmax_where(weights, |_| true).expect("score table is never empty")
    }

    /// Like [`argmax`](Self::argmax) restricted to allocations accepted by `keep`.
    pub fn argmax_where(&self, weights: &[f64], keep: impl Fn(&[usize]) -> bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for idx in 0..self.len() {
            if !keep(self.alloc(idx)) {
                continue;
            }
            let w = self.welfare(idx, weights);
            if best.is_none_or(|(_, bw)| w > bw) {
                best = Some((idx, w));
            }
        }
        best.map(|(i, _)| i)
    }
}
