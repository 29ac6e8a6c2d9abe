//! The mechanism interface and helpers shared by every auction rule.

use rand::RngCore;

use crate::auction::{Allocation, Decision, Outcome, PublicAuction};
use crate::ctr::CtrModel;
use crate::error::{CoreError, Result};

/// An auction rule: maps the public auction to a slate and per-click prices.
pub trait Mechanism {
    fn name(&self) -> String;

    fn decide(&self, auction: &PublicAuction, rng: &mut dyn RngCore) -> Result<Decision>;

    /// The slate and the price of `ad` alone (`None` when it loses).
    /// Mechanisms that price winners one at a time override this to skip
    /// the others.
    fn decide_for(&self, auction: &PublicAuction, ad: usize, rng: &mut dyn RngCore) -> Result<(Allocation, Option<f64>)> {
        let d = self.decide(auction, rng)?;
        let price = d.allocation.slot_of(ad).map(|s| d.payments[s]);
        Ok((d.allocation, price))
    }
}

impl<M: Mechanism + ?Sized> Mechanism for &M {
    fn name(&self) -> String {
        (**self).name()
    }

    fn decide(&self, auction: &PublicAuction, rng: &mut dyn RngCore) -> Result<Decision> {
        (**self).decide(auction, rng)
    }

    fn decide_for(&self, auction: &PublicAuction, ad: usize, rng: &mut dyn RngCore) -> Result<(Allocation, Option<f64>)> {
        (**self).decide_for(auction, ad, rng)
    }
}

impl<M: Mechanism + ?Sized> Mechanism for Box<M> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn decide(&self, auction: &PublicAuction, rng: &mut dyn RngCore) -> Result<Decision> {
        (**self).decide(auction, rng)
    }

    fn decide_for(&self, auction: &PublicAuction, ad: usize, rng: &mut dyn RngCore) -> Result<(Allocation, Option<f64>)> {
        (**self).decide_for(auction, ad, rng)
    }
}

/// Attaches the CTRs of `ctr` to a decision.
pub fn score(decision: Decision, auction: &PublicAuction, ctr: &dyn CtrModel) -> Result<Outcome> {
    if !auction.is_feasible(decision.allocation.slots()) {
        return Err(CoreError::Infeasible { alloc: decision.allocation.into_inner(), n: auction.n(), k: auction.k });
    }
    let ctrs = ctr.ctrs(auction, decision.allocation.slots())?;
    Ok(Outcome { allocation: decision.allocation, payments: decision.payments, ctrs })
}

/// `φ(b_i)` of every ad, continued past the support.
pub fn virtual_values(auction: &PublicAuction) -> Vec<f64> {
    auction.dists.iter().zip(&auction.bids).map(|(d, &b)| d.virtual_value_extended(b)).collect()
}

/// Keeps the inner slate but charges every winner its bid. Not truthful;
/// used as a negative control for regret measurements.
pub struct PayYourBid<M>(pub M);

impl<M: Mechanism> Mechanism for PayYourBid<M> {
    fn name(&self) -> String {
        format!("{}-pay-your-bid", self.0.name())
    }

    fn decide(&self, auction: &PublicAuction, rng: &mut dyn RngCore) -> Result<Decision> {
        let d = self.0.decide(auction, rng)?;
        let payments = d.allocation.slots().iter().map(|&a| auction.bids[a]).collect();
        Ok(Decision { allocation: d.allocation, payments })
    }
}
