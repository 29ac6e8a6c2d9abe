//! Auctions, allocations and outcomes.
//!
//! A mechanism only ever sees a [`PublicAuction`]: features, bids, value
//! distributions and point-wise pCTRs. True values live alongside it in
//! [`AuctionInstance`] and are used by the evaluation code alone.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::valuation::ValueDistribution;

/// Ordered slate: `slots()[s]` is the ad shown in slot `s` (0-based).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Allocation(Vec<usize>);

impl Allocation {
    pub fn new(slots: Vec<usize>) -> Self {
        Self(slots)
    }

    pub fn slots(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Slot of ad `i`, if it was allocated.
    pub fn slot_of(&self, ad: usize) -> Option<usize> {
        self.0.iter().position(|&a| a == ad)
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

impl From<Vec<usize>> for Allocation {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// True iff `alloc` holds exactly `k` distinct indices below `n`.
pub fn check_feasible(alloc: &[usize], n: usize, k: usize) -> bool {
    if alloc.len() != k || k > n {
        return false;
    }
    let mut seen = vec![false; n];
    for &a in alloc {
        if a >= n || seen[a] {
            return false;
        }
        seen[a] = true;
    }
    true
}

/// Expected utility of a CPC advertiser: `(value - payment) * ctr`.
pub fn utility(value: f64, payment: f64, ctr: f64) -> f64 {
    (value - payment) * ctr
}

/// What the mechanism decides: a slate and a per-click price per slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub allocation: Allocation,
    pub payments: Vec<f64>,
}

/// A decision together with the CTRs it realises under some CTR model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub allocation: Allocation,
    /// Per-click payment of the ad in each slot.
    pub payments: Vec<f64>,
    pub ctrs: Vec<f64>,
}

impl Outcome {
    /// Expected revenue `Σ p_s θ_s`.
    pub fn revenue(&self) -> f64 {
        self.payments.iter().zip(&self.ctrs).map(|(p, c)| p * c).sum()
    }

    /// Expected utility of ad `ad` with true value `value`; zero for losers.
    pub fn utility_of(&self, ad: usize, value: f64) -> f64 {
        match self.allocation.slot_of(ad) {
            Some(s) => utility(value, self.payments[s], self.ctrs[s]),
            None => 0.0,
        }
    }
}

/// The mechanism-facing view of one auction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublicAuction {
    pub user: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    pub bids: Vec<f64>,
    pub dists: Vec<ValueDistribution>,
    /// Position-free predicted CTR per ad, as a point-wise model would give.
    pub pctr: Vec<f64>,
    pub k: usize,
}

impl PublicAuction {
    pub fn n(&self) -> usize {
        self.bids.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let bad = |msg: String| Err(CoreError::InvalidAuction(msg));
        if n == 0 {
            return bad("no candidate ads".into());
        }
        if self.k == 0 || self.k > n {
            return bad(format!("k={} must lie in 1..={n}", self.k));
        }
        if self.features.len() != n || self.dists.len() != n || self.pctr.len() != n {
            return bad(format!(
                "per-ad arrays disagree: {} bids, {} feature rows, {} dists, {} pctrs",
                n,
                self.features.len(),
                self.dists.len(),
                self.pctr.len()
            ));
        }
        let d = self.features[0].len();
        if self.features.iter().any(|f| f.len() != d) {
            return bad("ad feature rows have different lengths".into());
        }
        if let Some(b) = self.bids.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return bad(format!("bid {b} is not a finite nonnegative number"));
        }
        if let Some(q) = self.pctr.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return bad(format!("pctr {q} is outside [0, 1]"));
        }
        Ok(())
    }

    /// Copy of this auction with ad `ad` bidding `bid`.
    pub fn with_bid(&self, ad: usize, bid: f64) -> Self {
        let mut out = self.clone();
        out.bids[ad] = bid;
        out
    }

    pub fn is_feasible(&self, alloc: &[usize]) -> bool {
        check_feasible(alloc, self.n(), self.k)
    }
}

/// An auction plus the advertisers' private values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuctionInstance {
    pub auction: PublicAuction,
    pub values: Vec<f64>,
}

impl AuctionInstance {
    pub fn new(auction: PublicAuction, values: Vec<f64>) -> Result<Self> {
        auction.validate()?;
        if values.len() != auction.n() {
            return Err(CoreError::InvalidAuction(format!(
                "{} values for {} ads",
                values.len(),
                auction.n()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(CoreError::InvalidAuction(format!("value {v} is not a finite nonnegative number")));
        }
        Ok(Self { auction, values })
    }

    pub fn public(&self) -> &PublicAuction {
        &self.auction
    }

    pub fn n(&self) -> usize {
        self.auction.n()
    }

    pub fn k(&self) -> usize {
        self.auction.k
    }
}
