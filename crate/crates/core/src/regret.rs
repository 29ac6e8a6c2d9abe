//! Empirical ex-post regret over a multiplicative misreport grid and the
//! aggregate IC metric Ψ.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::auction::{AuctionInstance, PublicAuction};
use crate::ctr::CtrModel;
use crate::error::{CoreError, Result};
use crate::mechanism::Mechanism;
use crate::rng::{derive_seed, stream_rng};

/// Truthful utilities below this are left out of Ψ (and counted).
pub const PSI_UTILITY_FLOOR: f64 = 1e-8;

/// `{0.2 j : j = 1..10}`; contains 1.0 exactly.
pub fn default_grid() -> Vec<f64> {
    (1..=10).map(|j| j as f64 / 5.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegretConfig {
    /// Misreport factors applied to the truthful bid.
    pub grid: Vec<f64>,
    /// Value profiles per ad: the instance's own value plus `redraws - 1`
    /// fresh draws from the ad's distribution.
    pub redraws: usize,
    pub seed: u64,
}

impl Default for RegretConfig {
    fn default() -> Self {
        Self { grid: default_grid(), redraws: 1, seed: 0 }
    }
}

impl RegretConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.grid.contains(&1.0) {
            return Err(CoreError::InvalidConfig("regret grid must contain 1.0".into()));
        }
        if self.grid.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(CoreError::InvalidConfig("regret grid factors must be finite and nonnegative".into()));
        }
        if self.redraws == 0 {
            return Err(CoreError::InvalidConfig("redraws must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdRegret {
    pub ad: usize,
    /// Mean truthful utility over the value profiles.
    pub utility: f64,
    /// Mean best gain from misreporting, never negative.
    pub regret: f64,
}

/// Utility of `ad` with value `value` when the auction is `auction`.
fn utility_under(
    mech: &dyn Mechanism,
    auction: &PublicAuction,
    truth: &dyn CtrModel,
    ad: usize,
    value: f64,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let (alloc, price) = mech.decide_for(auction, ad, rng)?;
    match (alloc.slot_of(ad), price) {
        (Some(s), Some(p)) => Ok((value - p) * truth.ctrs(auction, alloc.slots())?[s]),
        _ => Ok(0.0),
    }
}

/// Regret of one ad. Every misreport of a profile reuses the same random
/// stream as the truthful run, so Monte Carlo noise largely cancels in the
/// utility differences.
pub fn ad_regret(
    mech: &dyn Mechanism,
    inst: &AuctionInstance,
    truth: &dyn CtrModel,
    ad: usize,
    cfg: &RegretConfig,
    instance_index: u64,
) -> Result<AdRegret> {
    let seed = derive_seed(cfg.seed, "regret", instance_index);
    let mut utility = 0.0;
    let mut regret = 0.0;
    for draw in 0..cfg.redraws {
        let stream = ((ad as u64) << 16) | draw as u64;
        let (value, truthful) = if draw == 0 {
            (inst.values[ad], inst.auction.clone())
        } else {
            let v = inst.auction.dists[ad].sample(&mut stream_rng(seed, "redraw", stream));
            (v, inst.auction.with_bid(ad, v))
        };
        let bid = truthful.bids[ad];
        let base = utility_under(mech, &truthful, truth, ad, value, &mut stream_rng(seed, "mc", stream))?;
        let mut best = 0.0f64;
        for &f in &cfg.grid {
            if f == 1.0 {
                continue;
            }
            let report = truthful.with_bid(ad, f * bid);
            let u = utility_under(mech, &report, truth, ad, value, &mut stream_rng(seed, "mc", stream))?;
            best = best.max(u - base);
        }
        utility += base;
        regret += best;
    }
    let l = cfg.redraws as f64;
    Ok(AdRegret { ad, utility: utility / l, regret: regret / l })
}

/// Ψ contribution of one auction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PsiTerm {
    /// `Σ_winners rgt_i / u_i` over winners with `u_i >= PSI_UTILITY_FLOOR`.
    pub ratio_sum: f64,
    pub counted: usize,
    pub skipped: usize,
    pub regrets: Vec<AdRegret>,
}

/// Regret of every winner of the truthful outcome.
pub fn psi_term(
    mech: &dyn Mechanism,
    inst: &AuctionInstance,
    truth: &dyn CtrModel,
    cfg: &RegretConfig,
    instance_index: u64,
) -> Result<PsiTerm> {
    let seed = derive_seed(cfg.seed, "psi", instance_index);
    let decision = mech.decide(&inst.auction, &mut stream_rng(seed, "truthful", 0))?;
    let mut term = PsiTerm::default();
    for &ad in decision.allocation.slots() {
        let r = ad_regret(mech, inst, truth, ad, cfg, instance_index)?;
        if r.utility < PSI_UTILITY_FLOOR {
            term.skipped += 1;
        } else {
            term.ratio_sum += r.regret / r.utility;
            term.counted += 1;
        }
        term.regrets.push(r);
    }
    Ok(term)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PsiSummary {
    pub psi: f64,
    pub skipped: usize,
    pub counted: usize,
    pub instances: usize,
}

/// Ψ: mean over auctions of `Σ_winners rgt_i / u_i`.
pub fn psi(
    mech: &dyn Mechanism,
    instances: &[AuctionInstance],
    truth: &dyn CtrModel,
    cfg: &RegretConfig,
) -> Result<PsiSummary> {
    cfg.validate()?;
    let mut out = PsiSummary { instances: instances.len(), ..PsiSummary::default() };
    for (i, inst) in instances.iter().enumerate() {
        let t = psi_term(mech, inst, truth, cfg, i as u64)?;
        out.psi += t.ratio_sum;
        out.counted += t.counted;
        out.skipped += t.skipped;
    }
    if !instances.is_empty() {
        out.psi /= instances.len() as f64;
    }
    Ok(out)
}
