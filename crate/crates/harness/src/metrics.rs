//! Click-based revenue and CTR metrics.

use aforge_core::rng::stream_rng;
use aforge_core::world::sample_clicks;
use aforge_core::Outcome;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClickMetrics {
    /// `1000 Σ click · p / Σ impressions` from simulated clicks.
    pub rpm: f64,
    /// `Σ click / Σ impressions` from simulated clicks.
    pub ctr: f64,
    /// `1000 Σ p θ / Σ impressions`.
    pub expected_rpm: f64,
    /// `Σ θ / Σ impressions`.
    pub expected_ctr: f64,
    /// Mean true CTR of each slot.
    pub slot_ctr: Vec<f64>,
    /// Mean `Σ p θ` per auction.
    pub revenue: f64,
}

/// Simulates one user per auction (clicks drawn from the outcome's true
/// CTRs) and aggregates. Auction `i` draws from its own stream of `seed`.
pub fn rpm_ctr(outcomes: &[Outcome], seed: u64) -> ClickMetrics {
    let mut m = ClickMetrics::default();
    let k = outcomes.iter().map(|o| o.ctrs.len()).max().unwrap_or(0);
    let mut slot_sum = vec![0.0; k];
    let mut slot_count = vec![0usize; k];
    let (mut impressions, mut clicks, mut paid, mut exp_paid, mut exp_clicks) = (0usize, 0.0, 0.0, 0.0, 0.0);
    for (i, o) in outcomes.iter().enumerate() {
        let drawn = sample_clicks(&o.ctrs, &mut stream_rng(seed, "eval.clicks", i as u64));
        for (s, ((&c, &p), &t)) in drawn.iter().zip(&o.payments).zip(&o.ctrs).enumerate() {
            impressions += 1;
            clicks += f64::from(c);
            paid += f64::from(c) * p;
            exp_paid += p * t;
            exp_clicks += t;
            slot_sum[s] += t;
            slot_count[s] += 1;
        }
    }
    if impressions > 0 {
        let imp = impressions as f64;
        m.rpm = 1000.0 * paid / imp;
        m.ctr = clicks / imp;
        m.expected_rpm = 1000.0 * exp_paid / imp;
        m.expected_ctr = exp_clicks / imp;
    }
    if !outcomes.is_empty() {
        m.revenue = exp_paid / outcomes.len() as f64;
    }
    m.slot_ctr = slot_sum.iter().zip(&slot_count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    m
}
