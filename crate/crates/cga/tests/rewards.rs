mod common;

use aforge_cga::rewards::without_slot;
use aforge_cga::{rewards, Evaluator, ModelConfig, PointwiseScorer, SlateScorer};
use aforge_core::rng::stream_rng;
use aforge_core::{virtual_values, PublicAuction};
use common::{instances, world};

fn slates_for(auctions: &[&PublicAuction], k: usize) -> Vec<Vec<usize>> {
    auctions.iter().enumerate().map(|(b, a)| (0..k).map(|t| (b + 3 * t) % a.n()).collect()).collect()
}

fn virtual_welfare(scorer: &dyn SlateScorer, a: &PublicAuction, slate: &[usize], w: &[f64]) -> f64 {
    if slate.is_empty() {
        return 0.0;
    }
    let theta = scorer.theta(&[a], &[slate]).unwrap().remove(0);
    slate.iter().zip(&theta).map(|(&i, &t)| w[i] * t).sum()
}

#[test]
fn combined_reward_is_the_marginal_welfare() {
    let w = world(8, 3, 1);
    let inst = instances(&w, 0, 20);
    let auctions: Vec<&PublicAuction> = inst.iter().map(|x| &x.auction).collect();
    let e = Evaluator::new(&ModelConfig::default(), &mut stream_rng(1, "test.rewards", 0)).unwrap();
    let slates = slates_for(&auctions, 3);
    let weights: Vec<Vec<f64>> = auctions.iter().map(|a| virtual_values(a)).collect();
    let r = rewards(&e, &auctions, &slates, &weights).unwrap();
    let combined = r.combined(true, true);
    for (b, a) in auctions.iter().enumerate() {
        let full = virtual_welfare(&e, a, &slates[b], &weights[b]);
        for i in 0..3 {
            let reduced = virtual_welfare(&e, a, &without_slot(&slates[b], i), &weights[b]);
            assert!((combined[b][i] - (full - reduced)).abs() < 1e-9);
            let ad = slates[b][i];
            assert!((r.self_reward[b][i] - weights[b][ad] * r.theta[b][i]).abs() < 1e-15);
        }
    }
}

#[test]
fn single_slot_has_no_external_reward() {
    let w = world(6, 1, 2);
    let inst = instances(&w, 0, 10);
    let auctions: Vec<&PublicAuction> = inst.iter().map(|x| &x.auction).collect();
    let e = Evaluator::new(&ModelConfig::default(), &mut stream_rng(2, "test.rewards", 0)).unwrap();
    let slates = slates_for(&auctions, 1);
    let weights: Vec<Vec<f64>> = auctions.iter().map(|a| a.bids.clone()).collect();
    let r = rewards(&e, &auctions, &slates, &weights).unwrap();
    assert!(r.external.iter().flatten().all(|&x| x == 0.0));
}

#[test]
fn context_free_scorer_has_no_external_reward() {
    let w = world(8, 3, 3);
    let inst = instances(&w, 0, 10);
    let auctions: Vec<&PublicAuction> = inst.iter().map(|x| &x.auction).collect();
    let slates = slates_for(&auctions, 3);
    let weights: Vec<Vec<f64>> = auctions.iter().map(|a| virtual_values(a)).collect();
    let flat = PointwiseScorer { decay: 1.0 };
    let r = rewards(&flat, &auctions, &slates, &weights).unwrap();
    assert!(r.external.iter().flatten().all(|&x| x.abs() < 1e-15));

    // With position decay, removing a slot promotes later ads.
    let decayed = rewards(&PointwiseScorer { decay: 0.8 }, &auctions, &slates, &weights).unwrap();
    assert!(decayed.external.iter().flatten().any(|&x| x.abs() > 1e-6));
}

#[test]
fn switched_off_parts_drop_out() {
    let w = world(8, 3, 4);
    let inst = instances(&w, 0, 4);
    let auctions: Vec<&PublicAuction> = inst.iter().map(|x| &x.auction).collect();
    let slates = slates_for(&auctions, 3);
    let weights: Vec<Vec<f64>> = auctions.iter().map(|a| virtual_values(a)).collect();
    let r = rewards(&PointwiseScorer { decay: 0.8 }, &auctions, &slates, &weights).unwrap();
    assert_eq!(r.combined(true, false), r.self_reward);
    assert_eq!(r.combined(false, true), r.external);
    assert!(r.combined(false, false).iter().flatten().all(|&x| x == 0.0));
}

#[test]
fn mismatched_inputs_are_rejected() {
    let w = world(8, 3, 5);
    let inst = instances(&w, 0, 2);
    let auctions: Vec<&PublicAuction> = inst.iter().map(|x| &x.auction).collect();
    let slates = slates_for(&auctions[..1], 3);
    assert!(rewards(&PointwiseScorer { decay: 0.8 }, &auctions, &slates, &[vec![1.0; 8], vec![1.0; 8]]).is_err());
}
