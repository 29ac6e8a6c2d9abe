#![allow(dead_code)]

use aforge_core::{AuctionInstance, PublicAuction, World, WorldConfig};

pub fn world(n: usize, k: usize, seed: u64) -> World {
    World::new(WorldConfig { n, k, seed, ..WorldConfig::default() }).unwrap()
}

pub fn instances(world: &World, first: u64, count: usize) -> Vec<AuctionInstance> {
    world.gen_dataset(first, count).into_iter().map(|l| l.instance).collect()
}

/// The same auction with ads reordered: new ad `j` is old ad `perm[j]`.
pub fn permute(a: &PublicAuction, perm: &[usize]) -> PublicAuction {
    PublicAuction {
        user: a.user.clone(),
        features: perm.iter().map(|&i| a.features[i].clone()).collect(),
        bids: perm.iter().map(|&i| a.bids[i]).collect(),
        dists: perm.iter().map(|&i| a.dists[i]).collect(),
        pctr: perm.iter().map(|&i| a.pctr[i]).collect(),
        k: a.k,
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
