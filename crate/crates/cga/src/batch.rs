//! Stacking auctions into position-major tensors: row `i * batch + b`
//! belongs to item `i` of auction `b`.

use aforge_core::world::pointwise_ctr;
use aforge_core::PublicAuction;
use aforge_neural::Tensor;

use crate::error::{CgaError, Result};

/// The weight an ad carries in virtual welfare: its (extended) virtual
/// value, or its bid when virtual values are switched off.
pub fn ad_weights(auction: &PublicAuction, use_virtual_value: bool) -> Vec<f64> {
    if use_virtual_value {
        aforge_core::virtual_values(auction)
    } else {
        auction.bids.clone()
    }
}

fn check_dims(auction: &PublicAuction, d_a: usize, d_u: usize) -> Result<()> {
    if auction.user.len() != d_u {
        return Err(CgaError::InvalidInput(format!("user has {} features, model expects {d_u}", auction.user.len())));
    }
    if let Some(f) = auction.features.iter().find(|f| f.len() != d_a) {
        return Err(CgaError::InvalidInput(format!("ad has {} features, model expects {d_a}", f.len())));
    }
    Ok(())
}

/// Candidate ads of several auctions with the same `n`.
#[derive(Clone, Debug)]
pub struct AdBatch {
    pub batch: usize,
    pub n: usize,
    pub k: usize,
    /// `(n * batch) x (d_a + 2)`: features, position-free pCTR, bid.
    pub ads: Tensor,
    /// `batch x d_u`.
    pub users: Tensor,
    /// `batch x n` ad weights (`φ̃` or bids).
    pub weights: Tensor,
}

impl AdBatch {
    pub fn new(auctions: &[&PublicAuction], d_a: usize, d_u: usize, use_virtual_value: bool) -> Result<Self> {
        let first = auctions.first().ok_or_else(|| CgaError::InvalidInput("empty auction batch".into()))?;
        let (n, k) = (first.n(), first.k);
        let batch = auctions.len();
        if n == 0 || k == 0 || k > n {
            return Err(CgaError::InvalidInput(format!("cannot allocate {k} slots among {n} ads")));
        }
        let mut ads = Tensor::zeros(n * batch, d_a + 2);
        let mut users = Tensor::zeros(batch, d_u);
        let mut weights = Tensor::zeros(batch, n);
        for (b, a) in auctions.iter().enumerate() {
            if a.n() != n || a.k != k {
                return Err(CgaError::InvalidInput("auctions in one batch must share n and k".into()));
            }
            check_dims(a, d_a, d_u)?;
            users.data_mut()[b * d_u..(b + 1) * d_u].copy_from_slice(&a.user);
            for (i, w) in ad_weights(a, use_virtual_value).into_iter().enumerate() {
                weights.set(b, i, w);
                let row = i * batch + b;
                let dst = &mut ads.data_mut()[row * (d_a + 2)..(row + 1) * (d_a + 2)];
                dst[..d_a].copy_from_slice(&a.features[i]);
                dst[d_a] = a.pctr[i];
                dst[d_a + 1] = a.bids[i];
            }
        }
        Ok(Self { batch, n, k, ads, users, weights })
    }
}

/// Ordered slates of several auctions, all of the same length.
#[derive(Clone, Debug)]
pub struct SlateBatch {
    pub batch: usize,
    pub len: usize,
    /// `(len * batch) x (d_a + 1)`: features and position-free pCTR.
    pub slots: Tensor,
    pub users: Tensor,
    /// Point-wise CTR `α` per row.
    pub alpha: Vec<f64>,
}

impl SlateBatch {
    pub fn new(auctions: &[&PublicAuction], slates: &[&[usize]], d_a: usize, d_u: usize, decay: f64) -> Result<Self> {
        if auctions.is_empty() || auctions.len() != slates.len() {
            return Err(CgaError::InvalidInput(format!(
                "{} auctions for {} slates",
                auctions.len(),
                slates.len()
            )));
        }
        let len = slates[0].len();
        if len == 0 {
            return Err(CgaError::InvalidInput("empty slate".into()));
        }
        let batch = auctions.len();
        let mut slots = Tensor::zeros(len * batch, d_a + 1);
        let mut users = Tensor::zeros(batch, d_u);
        let mut alpha = vec![0.0; len * batch];
        for (b, (a, slate)) in auctions.iter().zip(slates).enumerate() {
            if slate.len() != len {
                return Err(CgaError::InvalidInput("slates in one batch must share a length".into()));
            }
            check_dims(a, d_a, d_u)?;
            if slate.iter().any(|&i| i >= a.n()) {
                return Err(CgaError::InvalidInput(format!("slate {slate:?} indexes past {} ads", a.n())));
            }
            users.data_mut()[b * d_u..(b + 1) * d_u].copy_from_slice(&a.user);
            for (s, &i) in slate.iter().enumerate() {
                let row = s * batch + b;
                let dst = &mut slots.data_mut()[row * (d_a + 1)..(row + 1) * (d_a + 1)];
                dst[..d_a].copy_from_slice(&a.features[i]);
                dst[d_a] = a.pctr[i];
                alpha[row] = pointwise_ctr(a.pctr[i], s, decay);
            }
        }
        Ok(Self { batch, len, slots, users, alpha })
    }

    /// Per-slate values out of a position-major column.
    pub fn unstack(&self, column: &[f64]) -> Vec<Vec<f64>> {
        (0..self.batch).map(|b| (0..self.len).map(|s| column[s * self.batch + b]).collect()).collect()
    }
}

/// Splits `0..len` into consecutive chunks of at most `size`.
pub fn chunks(len: usize, size: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    let size = size.max(1);
    (0..len.div_ceil(size)).map(move |c| c * size..((c + 1) * size).min(len))
}
