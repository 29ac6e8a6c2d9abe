use aforge_core::dataset::{read_jsonl, write_jsonl};
use aforge_core::rng::stream_rng;
use aforge_core::world::{pointwise_ctr, sample_clicks};
use aforge_core::{enumerate_allocations, PublicAuction, World, WorldConfig, DEFAULT_CAP};

fn world(seed: u64) -> World {
    World::new(WorldConfig { seed, ..WorldConfig::default() }).unwrap()
}

#[test]
fn instances_are_deterministic_and_unit_norm() {
    let cfg = WorldConfig { n: 8, k: 3, seed: 7, ..WorldConfig::default() };
    let a = World::new(cfg.clone()).unwrap().logged_auction(0);
    let b = World::new(cfg).unwrap().logged_auction(0);
    assert_eq!(a, b);
    let w = world(3);
    for rec in w.gen_dataset(0, 50) {
        let au = &rec.instance.auction;
        for x in au.features.iter().chain(std::iter::once(&au.user)) {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
        assert_eq!(au.bids, rec.instance.values);
    }
}

#[test]
fn mean_bid_of_uniform_values() {
    let w = world(4);
    let data = w.gen_dataset(0, 10_000);
    let mean = data.iter().flat_map(|r| r.instance.auction.bids.iter()).sum::<f64>() / (10_000.0 * 8.0);
    assert!((mean - 0.5).abs() < 0.01, "{mean}");
}

#[test]
fn dataset_ids_are_independent_streams() {
    let w = world(5);
    let all = w.gen_dataset(0, 8);
    let tail = w.gen_dataset(5, 3);
    assert_eq!(&all[5..], &tail[..]);
}

#[test]
fn no_externality_top_slot_is_base_quality() {
    let w = World::new(WorldConfig { competition: 0.0, k: 1, ..WorldConfig::default() }).unwrap();
    let rec = w.logged_auction(1);
    let a = &rec.instance.auction;
    let q = w.base_quality(a);
    for i in 0..a.n() {
        assert_eq!(w.true_ctr(a, &[i]).unwrap(), vec![q[i].max(1e-4)]);
    }
}

#[test]
fn no_externality_ctr_depends_only_on_own_slot() {
    let w = World::new(WorldConfig { competition: 0.0, ..WorldConfig::default() }).unwrap();
    let a = w.logged_auction(2).instance.auction;
    let x = w.true_ctr(&a, &[0, 1, 2]).unwrap();
    let y = w.true_ctr(&a, &[0, 5, 7]).unwrap();
    let z = w.true_ctr(&a, &[4, 1, 6]).unwrap();
    assert_eq!(x[0], y[0]);
    assert_eq!(x[1], z[1]);
}

#[test]
fn ctr_is_pure_bounded_and_symmetric() {
    let w = world(6);
    for rec in w.gen_dataset(0, 30) {
        let a = &rec.instance.auction;
        let mut it = enumerate_allocations(a.n(), a.k, DEFAULT_CAP).unwrap();
        while let Some(alloc) = it.next_slice() {
            let t = w.true_ctr(a, alloc).unwrap();
            assert_eq!(t, w.true_ctr(a, alloc).unwrap());
            assert!(t.iter().all(|&c| (1e-4..=1.0).contains(&c)));
        }
    }
    // Two neighbours at equal distance with identical features: swapping them
    // leaves the middle ad untouched.
    let mut a = w.logged_auction(9).instance.auction;
    a.features[2] = a.features[1].clone();
    let x = w.true_ctr(&a, &[1, 0, 2]).unwrap();
    let y = w.true_ctr(&a, &[2, 0, 1]).unwrap();
    assert_eq!(x[1], y[1]);
    assert!(w.true_ctr(&a, &[0, 0, 1]).is_err());
}

/// Independent restatement of the click model for a single ad.
fn scratch_ctr(w: &World, a: &PublicAuction, alloc: &[usize], s: usize) -> f64 {
    let cfg = w.config();
    let u = w.project_user(&a.user);
    let i = alloc[s];
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let q = 1.0 / (1.0 + (-3.0 * dot(&a.features[i], &u)).exp());
    let mut m = 1.0;
    for (t, &j) in alloc.iter().enumerate() {
        if t != s {
            let cos = dot(&a.features[i], &a.features[j])
                / (dot(&a.features[i], &a.features[i]).sqrt() * dot(&a.features[j], &a.features[j]).sqrt());
            m += cfg.competition * cos / (1.0 + (s as f64 - t as f64).abs());
        }
    }
    (q * cfg.pos_decay.powi(s as i32) * m).clamp(cfg.ctr_floor, 1.0)
}

#[test]
fn ctr_matches_scratch_formula() {
    let w = world(12);
    for rec in w.gen_dataset(0, 20) {
        let a = &rec.instance.auction;
        for alloc in [[0usize, 1, 2], [7, 3, 5], [4, 6, 0]] {
            let t = w.true_ctr(a, &alloc).unwrap();
            for s in 0..3 {
                assert!((t[s] - scratch_ctr(&w, a, &alloc, s)).abs() < 1e-14);
            }
        }
    }
}

/// Some ad earns more clicks in slot 2 than in slot 1 when each slot's
/// remaining positions are filled welfare-optimally.
#[test]
fn slot_two_can_beat_slot_one() {
    let w = world(0);
    let mut found = false;
    'outer: for rec in w.gen_dataset(0, 2000) {
        let a = &rec.instance.auction;
        for ad in 0..a.n() {
            let best_at = |slot: usize| {
                let mut it = enumerate_allocations(a.n(), a.k, DEFAULT_CAP).unwrap();
                let mut best: Option<(f64, f64)> = None;
                while let Some(alloc) = it.next_slice() {
                    if alloc[slot] != ad {
                        continue;
                    }
                    let t = w.true_ctr(a, alloc).unwrap();
                    let welfare: f64 = alloc.iter().zip(&t).map(|(&i, c)| a.bids[i] * c).sum();
                    if best.is_none_or(|(bw, _)| welfare > bw) {
                        best = Some((welfare, t[slot]));
                    }
                }
                best.unwrap().1
            };
            if best_at(1) > best_at(0) {
                found = true;
                break 'outer;
            }
        }
    }
    assert!(found);
}

#[test]
fn noiseless_prediction_is_base_quality() {
    let w = World::new(WorldConfig { pred_noise: 0.0, ..WorldConfig::default() }).unwrap();
    let rec = w.logged_auction(3);
    assert_eq!(rec.instance.auction.pctr, w.base_quality(&rec.instance.auction));
    for (s, (&ad, &p)) in rec.log.alloc.iter().zip(&rec.log.pctr).enumerate() {
        assert_eq!(p, pointwise_ctr(rec.instance.auction.pctr[ad], s, 0.8));
    }
}

#[test]
fn click_rate_concentrates() {
    let mut rng = stream_rng(1, "clicks", 0);
    let n = 100_000;
    let clicks: usize = (0..n).map(|_| sample_clicks(&[0.3], &mut rng)[0] as usize).sum();
    assert!((clicks as f64 / n as f64 - 0.3).abs() < 0.01);
}

#[test]
fn logged_slot_one_ctr_matches_truth() {
    let w = world(21);
    let n = 100_000;
    let (mut clicks, mut theta) = (0.0, 0.0);
    for rec in w.gen_dataset(0, n) {
        clicks += rec.log.clicks[0] as f64;
        theta += w.true_ctr(&rec.instance.auction, &rec.log.alloc).unwrap()[0];
    }
    let p = theta / n as f64;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    assert!((clicks / n as f64 - p).abs() < 2.0 * sigma, "{} vs {p} (σ={sigma})", clicks / n as f64);
}

#[test]
fn jsonl_round_trip_is_byte_identical() {
    let w = world(8);
    let data = w.gen_dataset(0, 25);
    let mut a = Vec::new();
    write_jsonl(&mut a, &data).unwrap();
    let back = read_jsonl(&a[..]).unwrap();
    assert_eq!(back, data);
    let mut b = Vec::new();
    write_jsonl(&mut b, &world(8).gen_dataset(0, 25)).unwrap();
    assert_eq!(a, b);

    let text = String::from_utf8(a).unwrap();
    let first = text.lines().next().unwrap();
    for key in ["\"id\"", "\"user\"", "\"ads\"", "\"features\"", "\"bid\"", "\"value\"", "\"dist\"", "\"k\"", "\"log\"", "\"alloc\"", "\"clicks\""] {
        assert!(first.contains(key), "missing {key}");
    }
    let broken = first.replace("\"k\":3", "\"k\":30");
    let err = read_jsonl(broken.as_bytes()).unwrap_err().to_string();
    assert!(err.contains("line 1"), "{err}");
}
