//! Multi-slot ad auctions with permutation-level externalities: auction
//! types, value distributions, a synthetic click world, exact mechanisms by
//! enumeration and regret measurement.

pub mod auction;
pub mod ctr;
pub mod dataset;
pub mod enumerate;
mod error;
pub mod mechanism;
pub mod oracle;
pub mod regret;
pub mod rng;
pub mod valuation;
pub mod world;

pub use auction::{check_feasible, utility, Allocation, AuctionInstance, Decision, Outcome, PublicAuction};
pub use ctr::{ConstantCtr, CtrModel, ScoreTable};
pub use enumerate::{enumerate_allocations, DEFAULT_CAP};
pub use error::{CoreError, Result};
pub use mechanism::{score, virtual_values, Mechanism, PayYourBid};
pub use oracle::{
    monotonicity_check, myerson_payment_mc, optimal_allocate, AllocationRule, GspMechanism, OptimalMechanism,
    PaymentSampler, VcgMechanism, VirtualWelfareRule,
};
pub use regret::{psi, RegretConfig};
pub use valuation::{iron_curve, ContinuousDistribution, IronedCurve, ValueDistribution};
pub use world::{ClickRecord, LoggedAuction, World, WorldConfig};
