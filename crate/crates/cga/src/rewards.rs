//! Per-slot policy-gradient rewards from a slate scorer.

use aforge_core::PublicAuction;

use crate::error::{CgaError, Result};
use crate::evaluator::SlateScorer;

/// Rewards of every slot of every slate.
#[derive(Clone, Debug, PartialEq)]
pub struct Rewards {
    /// `φ̃_{A_i} Θ_i(A)`.
    pub self_reward: Vec<Vec<f64>>,
    /// `Σ_{j ∈ A_{-i}} φ̃_j [Θ_j(A) - Θ_j(A_{-i})]`.
    pub external: Vec<Vec<f64>>,
    /// Scorer CTRs of the full slates.
    pub theta: Vec<Vec<f64>>,
}

impl Rewards {
    /// The training signal with either part switched off.
    pub fn combined(&self, use_self: bool, use_external: bool) -> Vec<Vec<f64>> {
        self.self_reward
            .iter()
            .zip(&self.external)
            .map(|(s, e)| {
                s.iter()
                    .zip(e)
                    .map(|(&s, &e)| if use_self { s } else { 0.0 } + if use_external { e } else { 0.0 })
                    .collect()
            })
            .collect()
    }
}

/// `A` with slot `i` removed; later ads move up one slot.
pub fn without_slot(slate: &[usize], i: usize) -> Vec<usize> {
    slate.iter().enumerate().filter(|&(t, _)| t != i).map(|(_, &a)| a).collect()
}

/// Scores each slate and each of its one-shorter versions in two batched
/// scorer calls. `weights[b]` holds `φ̃` for every ad of auction `b`.
pub fn rewards(
    scorer: &dyn SlateScorer,
    auctions: &[&PublicAuction],
    slates: &[Vec<usize>],
    weights: &[Vec<f64>],
) -> Result<Rewards> {
    if auctions.len() != slates.len() || auctions.len() != weights.len() {
        return Err(CgaError::InvalidInput("rewards need one slate and one weight vector per auction".into()));
    }
    let full: Vec<&[usize]> = slates.iter().map(Vec::as_slice).collect();
    let theta = scorer.theta(auctions, &full)?;

    let mut short_auctions = Vec::new();
    let mut short = Vec::new();
    for (a, s) in auctions.iter().zip(slates) {
        if s.len() < 2 {
            continue;
        }
        for i in 0..s.len() {
            short_auctions.push(*a);
            short.push(without_slot(s, i));
        }
    }
    let short_refs: Vec<&[usize]> = short.iter().map(Vec::as_slice).collect();
    let short_theta = if short.is_empty() { Vec::new() } else { scorer.theta(&short_auctions, &short_refs)? };

    let mut self_reward = Vec::with_capacity(slates.len());
    let mut external = Vec::with_capacity(slates.len());
    let mut cursor = 0;
    for ((s, th), w) in slates.iter().zip(&theta).zip(weights) {
        let contrib: Vec<f64> = s.iter().zip(th).map(|(&a, &t)| w[a] * t).collect();
        let total: f64 = contrib.iter().sum();
        self_reward.push(contrib.clone());
        if s.len() < 2 {
            external.push(vec![0.0; s.len()]);
            continue;
        }
        let mut ext = Vec::with_capacity(s.len());
        for i in 0..s.len() {
            let reduced = &short[cursor];
            let reduced_total: f64 = reduced.iter().zip(&short_theta[cursor]).map(|(&a, &t)| w[a] * t).sum();
            ext.push((total - contrib[i]) - reduced_total);
            cursor += 1;
        }
        external.push(ext);
    }
    Ok(Rewards { self_reward, external, theta })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn removing_a_slot_shifts_later_ads() {
        assert_eq!(without_slot(&[4, 2, 7], 0), vec![2, 7]);
        assert_eq!(without_slot(&[4, 2, 7], 1), vec![4, 7]);
        assert_eq!(without_slot(&[4], 0), Vec::<usize>::new());
    }
}
