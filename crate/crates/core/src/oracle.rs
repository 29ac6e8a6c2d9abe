//! Exact mechanisms by enumeration: the virtual-welfare-optimal auction with
//! Monte Carlo Myerson payments, VCG and GSP, plus the allocation
//! monotonicity checker.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::auction::{Allocation, Decision, PublicAuction};
use crate::ctr::{CtrModel, ScoreTable};
use crate::enumerate::{enumerate_allocations, DEFAULT_CAP};
use crate::error::{CoreError, Result};
use crate::mechanism::{virtual_values, Mechanism};

/// Winner of a streamed welfare search.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationResult {
    pub allocation: Allocation,
    /// `Σ_s weights[A_s] θ_s` of the chosen slate.
    pub welfare: f64,
    pub scored: usize,
}

/// Maximises `Σ_s weights[A_s] θ_s(A)` over every slate, streaming the
/// enumeration. Ties go to the lexicographically smallest slate.
pub fn optimal_allocate(
    auction: &PublicAuction,
    ctr: &dyn CtrModel,
    weights: &[f64],
    cap: u64,
) -> Result<AllocationResult> {
    let mut it = enumerate_allocations(auction.n(), auction.k, cap)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut scored = 0;
    while let Some(a) = it.next_slice() {
        let theta = ctr.ctrs(auction, a)?;
        let w: f64 = a.iter().zip(&theta).map(|(&i, &t)| weights[i] * t).sum();
        scored += 1;
        if best.as_ref().is_none_or(|(_, bw)| w > *bw) {
            best = Some((a.to_vec(), w));
        }
    }
    let (alloc, welfare) = best.expect("at least one allocation exists when k <= n");
    Ok(AllocationResult { allocation: Allocation::new(alloc), welfare, scored })
}

/// How the Monte Carlo payment draws its bid points `t_s` on `[0, b]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentSampler {
    /// `t_s = b U_s`.
    Iid,
    /// `t_s = b (s + U_s) / S`: one uniform draw per stratum.
    Stratified,
}

/// Myerson per-click payment of `ad` estimated from a prepared score table:
/// `p = b - b mean_s Θ(t_s, b_-i) / Θ(b)`, zero when the ad is not shown.
pub fn myerson_payment_from_table(
    table: &ScoreTable,
    auction: &PublicAuction,
    ad: usize,
    samples: usize,
    sampler: PaymentSampler,
    rng: &mut dyn RngCore,
) -> f64 {
    let mut phi = virtual_values(auction);
    let bid = auction.bids[ad];
    let chosen = table.argmax(&phi);
    let theta_b = table.ctr_of(chosen, ad);
    if theta_b == 0.0 || bid == 0.0 || samples == 0 {
        return 0.0;
    }
    // Welfare splits into the part that does not involve `ad` plus
    // φ(t) θ_ad(A); only the latter moves with the bid.
    phi[ad] = 0.0;
    let base: Vec<f64> = (0..table.len()).map(|i| table.welfare(i, &phi)).collect();
    let own: Vec<f64> = (0..table.len()).map(|i| table.ctr_of(i, ad)).collect();
    let dist = auction.dists[ad];
    let mut total = 0.0;
    for s in 0..samples {
        let u: f64 = rng.random();
        let t = match sampler {
            PaymentSampler::Iid => bid * u,
            PaymentSampler::Stratified => bid * (s as f64 + u) / samples as f64,
        };
        let pt = dist.virtual_value_extended(t);
        let mut best = f64::NEG_INFINITY;
        let mut theta = 0.0;
        for (b, o) in base.iter().zip(&own) {
            let w = b + pt * o;
            if w > best {
                best = w;
                theta = *o;
            }
        }
        total += theta;
    }
    bid - bid * (total / samples as f64) / theta_b
}

/// Standalone Monte Carlo Myerson payment of `ad`.
pub fn myerson_payment_mc(
    auction: &PublicAuction,
    ctr: &dyn CtrModel,
    ad: usize,
    samples: usize,
    sampler: PaymentSampler,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let table = ScoreTable::build(auction, ctr, DEFAULT_CAP)?;
    Ok(myerson_payment_from_table(&table, auction, ad, samples, sampler, rng))
}

/// Revenue-optimal DSIC auction: the virtual-welfare-maximising slate with
/// Monte Carlo Myerson payments.
#[derive(Clone, Debug)]
pub struct OptimalMechanism<C> {
    pub ctr: C,
    pub samples: usize,
    pub sampler: PaymentSampler,
    pub cap: u64,
}

impl<C: CtrModel> OptimalMechanism<C> {
    pub fn new(ctr: C, samples: usize) -> Self {
        Self { ctr, samples, sampler: PaymentSampler::Stratified, cap: DEFAULT_CAP }
    }

    pub fn with_sampler(mut self, sampler: PaymentSampler) -> Self {
        self.sampler = sampler;
        self
    }
}

impl<C: CtrModel> Mechanism for OptimalMechanism<C> {
    fn name(&self) -> String {
        "optimal".into()
    }

    fn decide(&self, auction: &PublicAuction, rng: &mut dyn RngCore) -> Result<Decision> {
        let table = ScoreTable::build(auction, &self.ctr, self.cap)?;
        let chosen = table.argmax(&virtual_values(auction));
        let alloc = table.alloc(chosen).to_vec();
        let payments = alloc
            .iter()
            .map(|&a| myerson_payment_from_table(&table, auction, a, self.samples, self.sampler, rng))
            .collect();
        Ok(Decision { allocation: Allocation::new(alloc), payments })
    }

    fn decide_for(&self, auction: &PublicAuction, ad: usize, rng: &mut dyn RngCore) -> Result<(Allocation, Option<f64>)> {
        let table = ScoreTable::build(auction, &self.ctr, self.cap)?;
        let chosen = table.argmax(&virtual_values(auction));
        let alloc = Allocation::new(table.alloc(chosen).to_vec());
        let price = alloc
            .slot_of(ad)
            .map(|_| myerson_payment_from_table(&table, auction, ad, self.samples, self.sampler, rng));
        Ok((alloc, price))
    }
}

/// VCG over slates: welfare-maximising allocation, each winner charged the
/// welfare it displaces, per click.
#[derive(Clone, Debug)]
pub struct VcgMechanism<C> {
    pub ctr: C,
    pub cap: u64,
}

impl<C: CtrModel> VcgMechanism<C> {
    pub fn new(ctr: C) -> Self {
        Self { ctr, cap: DEFAULT_CAP }
    }
}

impl<C: CtrModel> Mechanism for VcgMechanism<C> {
    fn name(&self) -> String {
        "vcg".into()
    }

    fn decide(&self, auction: &PublicAuction, _rng: &mut dyn RngCore) -> Result<Decision> {
        let (n, k) = (auction.n(), auction.k);
        if n < k + 1 {
            return Err(CoreError::TooFewCandidates { n, k });
        }
        let table = ScoreTable::build(auction, &self.ctr, self.cap)?;
        let bids = &auction.bids;
        let chosen = table.argmax(bids);
        let welfare = table.welfare(chosen, bids);
        let alloc = table.alloc(chosen).to_vec();
        let payments = alloc
            .iter()
            .zip(table.ctrs(chosen))
            .map(|(&i, &theta)| {
                if theta == 0.0 {
                    return 0.0;
                }
                let without = table
                    .argmax_where(bids, |a| !a.contains(&i))
                    .map(|idx| table.welfare(idx, bids))
                    .expect("n - 1 >= k leaves a slate without i");
                ((without - (welfare - bids[i] * theta)) / theta).clamp(0.0, bids[i])
            })
            .collect();
        Ok(Decision { allocation: Allocation::new(alloc), payments })
    }
}

/// Generalised second price on position-free pCTRs.
#[derive(Clone, Copy, Debug, Default)]
pub struct GspMechanism;

impl Mechanism for GspMechanism {
    fn name(&self) -> String {
        "gsp".into()
    }

    fn decide(&self, auction: &PublicAuction, _rng: &mut dyn RngCore) -> Result<Decision> {
        let (b, q) = (&auction.bids, &auction.pctr);
        let mut order: Vec<usize> = (0..auction.n()).collect();
        order.sort_by(|&x, &y| (b[y] * q[y]).total_cmp(&(b[x] * q[x])).then(x.cmp(&y)));
        let payments = (0..auction.k)
            .map(|j| {
                let me = order[j];
                match order.get(j + 1) {
                    Some(&next) if q[me] > 0.0 => (b[next] * q[next] / q[me]).min(b[me]),
                    _ => 0.0,
                }
            })
            .collect();
        order.truncate(auction.k);
        Ok(Decision { allocation: Allocation::new(order), payments })
    }
}

/// An allocation rule, for monotonicity checks.
pub trait AllocationRule {
    fn allocate(&self, auction: &PublicAuction) -> Result<Allocation>;
}

/// The optimal mechanism's allocation rule: virtual-welfare argmax.
#[derive(Clone, Debug)]
pub struct VirtualWelfareRule<C> {
    pub ctr: C,
    pub cap: u64,
}

impl<C: CtrModel> AllocationRule for VirtualWelfareRule<C> {
    fn allocate(&self, auction: &PublicAuction) -> Result<Allocation> {
        Ok(optimal_allocate(auction, &self.ctr, &virtual_values(auction), self.cap)?.allocation)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    /// Grid position where the CTR dropped (compared with the previous point).
    pub index: usize,
    pub before: f64,
    pub after: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityReport {
    pub bids: Vec<f64>,
    /// CTR of the ad at each grid bid, 0 when not shown.
    pub ctrs: Vec<f64>,
    pub violations: Vec<Violation>,
}

impl MonotonicityReport {
    pub fn is_monotone(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Tolerance below which a CTR decrease counts as a tie.
pub const MONOTONE_TOL: f64 = 1e-9;

/// Re-runs `rule` for every bid of `grid` (ascending) with the other bids
/// fixed and reports every decrease of the ad's CTR beyond [`MONOTONE_TOL`].
pub fn monotonicity_check(
    auction: &PublicAuction,
    rule: &dyn AllocationRule,
    ctr: &dyn CtrModel,
    ad: usize,
    grid: &[f64],
) -> Result<MonotonicityReport> {
    let mut ctrs = Vec::with_capacity(grid.len());
    for &b in grid {
        let a = auction.with_bid(ad, b);
        let alloc = rule.allocate(&a)?;
        let theta = match alloc.slot_of(ad) {
            Some(s) => ctr.ctrs(&a, alloc.slots())?[s],
            None => 0.0,
        };
        ctrs.push(theta);
    }
    let violations = ctrs
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] < w[0] - MONOTONE_TOL)
        .map(|(i, w)| Violation { index: i + 1, before: w[0], after: w[1] })
        .collect();
    Ok(MonotonicityReport { bids: grid.to_vec(), ctrs, violations })
}
