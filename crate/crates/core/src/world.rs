//! Synthetic ground truth: instance generation, a permutation-aware click
//! model and logged exposures for training CTR models.
//!
//! An ad `i` shown in slot `s` (1-based) is clicked with probability
//!
//! `clamp(q_i ρ^(s-1) (1 + Σ_j κ cos(x_i, x_j) / (1 + |s - s_j|)), ε, 1)`
//!
//! where `q_i = sigmoid(3 <x_i, P u>)`, `P` is a seeded projection of the
//! user features and the sum runs over the other shown ads. With κ < 0,
//! similar neighbours cannibalise each other, which can make a lower slot
//! worth more than a higher one.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::auction::{AuctionInstance, PublicAuction};
use crate::ctr::CtrModel;
use crate::error::{CoreError, Result};
use crate::rng::stream_rng;
use crate::valuation::ValueDistribution;

/// Scale applied to the user-ad affinity inside the base-quality sigmoid.
pub const QUALITY_SCALE: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n: usize,
    pub k: usize,
    pub d_a: usize,
    pub d_u: usize,
    /// Position decay ρ in (0, 1].
    pub pos_decay: f64,
    /// Interaction strength κ; negative means substitutes.
    pub competition: f64,
    /// Standard deviation σ of the multiplicative log-noise on pCTR.
    pub pred_noise: f64,
    /// CTR floor ε in (0, 0.01].
    pub ctr_floor: f64,
    pub seed: u64,
    /// Ad `i` draws its value from `value_dists[i % len]`.
    pub value_dists: Vec<ValueDistribution>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n: 8,
            k: 3,
            d_a: 4,
            d_u: 4,
            pos_decay: 0.8,
            competition: -0.3,
            pred_noise: 0.1,
            ctr_floor: 1e-4,
            seed: 0,
            value_dists: vec![ValueDistribution::standard_uniform()],
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidConfig(m));
        if self.n == 0 || self.k == 0 || self.k > self.n {
            return bad(format!("need 1 <= k <= n, got n={}, k={}", self.n, self.k));
        }
        if self.d_a == 0 || self.d_u == 0 {
            return bad("feature dimensions must be positive".into());
        }
        if !(self.pos_decay > 0.0 && self.pos_decay <= 1.0) {
            return bad(format!("pos_decay {} must lie in (0, 1]", self.pos_decay));
        }
        if !(self.ctr_floor > 0.0 && self.ctr_floor <= 0.01) {
            return bad(format!("ctr_floor {} must lie in (0, 0.01]", self.ctr_floor));
        }
        if !(self.pred_noise >= 0.0 && self.pred_noise.is_finite()) {
            return bad(format!("pred_noise {} must be nonnegative", self.pred_noise));
        }
        if !self.competition.is_finite() {
            return bad("competition must be finite".into());
        }
        if self.value_dists.is_empty() {
            return bad("value_dists must not be empty".into());
        }
        Ok(())
    }

    pub fn dist_of(&self, ad: usize) -> ValueDistribution {
        self.value_dists[ad % self.value_dists.len()]
    }
}

/// One logged exposure of an auction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub alloc: Vec<usize>,
    /// Point-wise pCTR `α_s` of the ad in each slot.
    pub pctr: Vec<f64>,
    pub clicks: Vec<u8>,
}

/// An auction together with the exposure the logging policy showed.
#[derive(Clone, Debug, PartialEq)]
pub struct LoggedAuction {
    pub id: u64,
    pub instance: AuctionInstance,
    pub log: ClickRecord,
}

/// Point-wise pCTR of an ad with position-free pCTR `pctr` in 0-based
/// slot `slot`: `clamp(pctr ρ^slot, 0, 1)`.
pub fn pointwise_ctr(pctr: f64, slot: usize, pos_decay: f64) -> f64 {
    (pctr * pos_decay.powi(slot as i32)).clamp(0.0, 1.0)
}

/// Independent Bernoulli draws.
pub fn sample_clicks<R: Rng + ?Sized>(theta: &[f64], rng: &mut R) -> Vec<u8> {
    theta.iter().map(|&t| u8::from(rng.random::<f64>() < t)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn unit_normal_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Clone, Debug)]
pub struct World {
    cfg: WorldConfig,
    /// `d_a x d_u`.
    projection: Vec<Vec<f64>>,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(cfg.seed, "world.projection", 0);
        let scale = 1.0 / (cfg.d_u as f64).sqrt();
        let projection = (0..cfg.d_a)
            .map(|_| (0..cfg.d_u).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        Ok(Self { cfg, projection })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    /// Same projection, different interaction strength.
    pub fn with_competition(&self, competition: f64) -> Self {
        let mut w = self.clone();
        w.cfg.competition = competition;
        w
    }

    pub fn project_user(&self, user: &[f64]) -> Vec<f64> {
        self.projection.iter().map(|row| row.iter().zip(user).map(|(p, u)| p * u).sum()).collect()
    }

    /// Base quality `q_i` of every ad of the auction.
    pub fn base_quality(&self, auction: &PublicAuction) -> Vec<f64> {
        let u = self.project_user(&auction.user);
        auction
            .features
            .iter()
            .map(|x| sigmoid(QUALITY_SCALE * x.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()))
            .collect()
    }

    /// Ground-truth CTR of each slot of `alloc`.
    pub fn true_ctr(&self, auction: &PublicAuction, alloc: &[usize]) -> Result<Vec<f64>> {
        if !auction.is_feasible(alloc) {
            return Err(CoreError::Infeasible { alloc: alloc.to_vec(), n: auction.n(), k: auction.k });
        }
        let u = self.project_user(&auction.user);
        let cfg = &self.cfg;
        Ok(alloc
            .iter()
            .enumerate()
            .map(|(s, &i)| {
                let xi = &auction.features[i];
                let q = sigmoid(QUALITY_SCALE * xi.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>());
                let mut interaction = 1.0;
                for (t, &j) in alloc.iter().enumerate() {
                    if t != s {
                        let dist = (s as f64 - t as f64).abs();
                        interaction += cfg.competition * cosine(xi, &auction.features[j]) / (1.0 + dist);
                    }
                }
                (q * cfg.pos_decay.powi(s as i32) * interaction).clamp(cfg.ctr_floor, 1.0)
            })
            .collect())
    }

    /// Draws one truthful auction: unit-norm standard-normal features, values
    /// from the configured distributions, bids equal to values and noisy
    /// position-free pCTRs `clamp(q exp(η), 0, 1)`, `η ~ N(0, σ²)`.
    pub fn gen_instance<R: Rng + ?Sized>(&self, rng: &mut R) -> AuctionInstance {
        let cfg = &self.cfg;
        let user = unit_normal_vector(cfg.d_u, rng);
        let features: Vec<Vec<f64>> = (0..cfg.n).map(|_| unit_normal_vector(cfg.d_a, rng)).collect();
        let dists: Vec<ValueDistribution> = (0..cfg.n).map(|i| cfg.dist_of(i)).collect();
        let values: Vec<f64> = dists.iter().map(|d| d.sample(rng)).collect();
        let noise: Vec<f64> = (0..cfg.n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut auction =
            PublicAuction { user, features, bids: values.clone(), dists, pctr: vec![0.0; cfg.n], k: cfg.k };
        let q = self.base_quality(&auction);
        auction.pctr = q.iter().zip(&noise).map(|(q, z)| (q * (cfg.pred_noise * z).exp()).clamp(0.0, 1.0)).collect();
        AuctionInstance { auction, values }
    }

    /// Logging policy: a uniformly random slate or, with equal probability,
    /// the top-k by `bid * pctr` (ties to the lower index).
    pub fn logging_allocation<R: Rng + ?Sized>(&self, auction: &PublicAuction, rng: &mut R) -> Vec<usize> {
        let (n, k) = (auction.n(), auction.k);
        if rng.random_bool(0.5) {
            let mut order: Vec<usize> = (0..n).collect();
            order.partial_shuffle(rng, k).0.to_vec()
        } else {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                let (sa, sb) = (auction.bids[a] * auction.pctr[a], auction.bids[b] * auction.pctr[b]);
                sb.total_cmp(&sa).then(a.cmp(&b))
            });
            order.truncate(k);
            order
        }
    }

    /// One logged exposure: allocation, point-wise pCTRs and clicks drawn
    /// against the true CTR.
    pub fn log_exposure<R: Rng + ?Sized>(&self, auction: &PublicAuction, rng: &mut R) -> ClickRecord {
        let alloc = self.logging_allocation(auction, rng);
        let pctr = alloc.iter().enumerate().map(|(s, &a)| pointwise_ctr(auction.pctr[a], s, self.cfg.pos_decay)).collect();
        let theta = self.true_ctr(auction, &alloc).expect("logging policy yields feasible slates");
        let clicks = sample_clicks(&theta, rng);
        ClickRecord { alloc, pctr, clicks }
    }

    /// Auction `id` of the dataset stream; independent of every other id.
    pub fn logged_auction(&self, id: u64) -> LoggedAuction {
        let mut rng = stream_rng(self.cfg.seed, "world.auction", id);
        let instance = self.gen_instance(&mut rng);
        let log = self.log_exposure(&instance.auction, &mut rng);
        LoggedAuction { id, instance, log }
    }

    /// Auctions `first .. first + count` of the dataset stream.
    pub fn gen_dataset(&self, first: u64, count: usize) -> Vec<LoggedAuction> {
        (first..first + count as u64).map(|id| self.logged_auction(id)).collect()
    }
}

impl CtrModel for World {
    fn ctrs(&self, auction: &PublicAuction, alloc: &[usize]) -> Result<Vec<f64>> {
        self.true_ctr(auction, alloc)
    }
}
