//! Policy-gradient generator training and augmented-Lagrangian payment
//! training.

use aforge_core::rng::stream_rng;
use aforge_core::{AuctionInstance, PublicAuction};
use aforge_neural::{AdamConfig, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::batch::{ad_weights, chunks, AdBatch};
use crate::config::{TrainConfig, Variant};
use crate::error::{CgaError, Result};
use crate::evaluator::SlateScorer;
use crate::generator::{Generator, Mode};
use crate::model::{Allocated, Cga, INFERENCE_BATCH};
use crate::rewards::rewards;

/// Mean per-auction statistics of one generator epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEpoch {
    /// Mean combined reward summed over slots.
    pub reward: f64,
    /// Mean scorer virtual welfare of the sampled slates.
    pub welfare: f64,
}

/// REINFORCE on `L_G = -mean Σ_i r_{A_i} log z_{A_i}` with rewards from a
/// frozen scorer.
pub fn train_generator(
    generator: &mut Generator,
    scorer: &dyn SlateScorer,
    auctions: &[&PublicAuction],
    variant: Variant,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<GeneratorEpoch>> {
    cfg.validate()?;
    if auctions.is_empty() {
        return Err(CgaError::InvalidInput("no auctions to train the generator on".into()));
    }
    let adam = AdamConfig::with_lr(cfg.lr);
    let mcfg = generator.config().clone();
    let mut order: Vec<usize> = (0..auctions.len()).collect();
    let mut curve = Vec::with_capacity(cfg.generator_epochs);
    for _ in 0..cfg.generator_epochs {
        order.shuffle(rng);
        let (mut reward_sum, mut welfare_sum) = (0.0, 0.0);
        for range in chunks(order.len(), cfg.batch) {
            let part: Vec<&PublicAuction> = order[range].iter().map(|&i| auctions[i]).collect();
            let batch = AdBatch::new(&part, mcfg.d_a, mcfg.d_u, variant.use_virtual_value)?;
            let mut g = Graph::new();
            let gen = generator.generate(&mut g, &batch, Mode::Sample, rng)?;
            let weights: Vec<Vec<f64>> = part.iter().map(|a| ad_weights(a, variant.use_virtual_value)).collect();
            let r = rewards(scorer, &part, &gen.allocs, &weights)?;
            let combined = r.combined(variant.use_self_reward, variant.use_external_reward);
            reward_sum += combined.iter().flatten().sum::<f64>();
            welfare_sum += r.self_reward.iter().flatten().sum::<f64>();
            let flat: Vec<f64> = combined.into_iter().flatten().collect();
            let rt = g.constant(Tensor::from_vec(part.len(), batch.k, flat));
            let weighted = g.mul(rt, gen.chosen_log_prob)?;
            let total = g.sum(weighted);
            let loss = g.scale(total, -1.0 / part.len() as f64);
            g.backward(loss, generator.store_mut())?;
            generator.store_mut().adam_step(&adam);
        }
        let m = auctions.len() as f64;
        curve.push(GeneratorEpoch { reward: reward_sum / m, welfare: welfare_sum / m });
    }
    Ok(curve)
}

/// Lagrange multipliers (one per slot) and the penalty weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub lambda: Vec<f64>,
    pub rho: f64,
}

impl TrainState {
    pub fn new(k: usize, rho: f64, lambda_init: f64) -> Self {
        Self { lambda: vec![lambda_init; k], rho }
    }

    pub fn from_config(k: usize, cfg: &TrainConfig) -> Self {
        Self::new(k, cfg.rho, cfg.lambda_init)
    }

    /// `λ_i += ρ · mean_regret_i`.
    pub fn update(&mut self, mean_regret: &[f64]) {
        for (l, r) in self.lambda.iter_mut().zip(mean_regret) {
            *l += self.rho * r;
        }
    }
}

/// Per-epoch payment training statistics, averaged over auctions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaymentEpoch {
    /// Scorer-expected revenue `Σ_i p_i Θ_i`.
    pub revenue: f64,
    /// Mean grid regret of the winner in each slot.
    pub regret: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// A misreport outcome: `None` when the deviating ad loses, otherwise the
/// payment-network input row it gets, its bid and scorer CTR.
#[derive(Clone, Debug)]
struct Deviation {
    row: Option<(Vec<f64>, f64, f64)>,
}

/// Frozen inputs of one training auction.
#[derive(Clone, Debug)]
struct Prepared {
    index: usize,
    allocated: Allocated,
    rows: Vec<Vec<f64>>,
    bids: Vec<f64>,
    values: Vec<f64>,
    /// `deviations[slot]`: one entry per non-unit grid factor.
    deviations: Vec<Vec<Deviation>>,
}

fn prepare(model: &Cga, instances: &[&AuctionInstance], grid: &[f64]) -> Result<Vec<Prepared>> {
    let auctions: Vec<&PublicAuction> = instances.iter().map(|i| &i.auction).collect();
    let truthful = model.allocate(&auctions)?;
    let factors: Vec<f64> = grid.iter().copied().filter(|&f| f != 1.0).collect();

    let mut reports = Vec::new();
    for (inst, al) in instances.iter().zip(&truthful) {
        for &ad in &al.alloc {
            for &f in &factors {
                reports.push(inst.auction.with_bid(ad, f * inst.auction.bids[ad]));
            }
        }
    }
    let mut deviated = Vec::with_capacity(reports.len());
    for range in chunks(reports.len(), INFERENCE_BATCH * 8) {
        let refs: Vec<&PublicAuction> = reports[range].iter().collect();
        deviated.extend(model.allocate(&refs)?);
    }

    let mut cursor = 0;
    let mut out = Vec::with_capacity(instances.len());
    for (index, (inst, al)) in instances.iter().zip(truthful).enumerate() {
        let mut deviations = Vec::with_capacity(al.alloc.len());
        for &ad in &al.alloc {
            let mut per_slot = Vec::with_capacity(factors.len());
            for _ in &factors {
                let report = &reports[cursor];
                let dev = &deviated[cursor];
                cursor += 1;
                let row = dev.alloc.iter().position(|&a| a == ad).map(|s| {
                    let rows = dev.payment_rows(report);
                    (rows[s].clone(), report.bids[ad], dev.theta[s])
                });
                per_slot.push(Deviation { row });
            }
            deviations.push(per_slot);
        }
        let rows = al.payment_rows(&inst.auction);
        let bids = al.alloc.iter().map(|&a| inst.auction.bids[a]).collect();
        let values = al.alloc.iter().map(|&a| inst.values[a]).collect();
        out.push(Prepared { index, allocated: al, rows, bids, values, deviations });
    }
    Ok(out)
}

/// Graph pieces of one minibatch objective.
struct Objective {
    loss: Var,
    revenue: f64,
    regret_sums: Vec<f64>,
}

/// Builds `L_P` for a minibatch. `truthful_rows` is `(k * batch) x dim`,
/// slot-major (row `s * batch + b`).
fn lagrangian(
    g: &mut Graph,
    model: &Cga,
    items: &[&Prepared],
    truthful_rows: Var,
    truthful_theta: &[Vec<f64>],
    state: &TrainState,
) -> Result<Objective> {
    let bsz = items.len();
    let k = state.lambda.len();
    let mut bids = vec![0.0; k * bsz];
    let mut theta = vec![0.0; k * bsz];
    let mut value_theta = vec![0.0; k * bsz];
    for (b, p) in items.iter().enumerate() {
        for s in 0..k {
            let r = s * bsz + b;
            bids[r] = p.bids[s];
            theta[r] = truthful_theta[b][s];
            value_theta[r] = p.values[s] * truthful_theta[b][s];
        }
    }
    let pay = model.payment.payments(g, truthful_rows, &bids)?;
    let theta_v = g.constant(Tensor::column_vector(theta.clone()));
    let expected = g.mul(pay, theta_v)?;
    let revenue = g.sum(expected);
    let vt = g.constant(Tensor::column_vector(value_theta));
    let u_true = g.sub(vt, expected)?;
    let u_true_vals = g.value(u_true).data().to_vec();

    // Every winning deviation becomes a row; losing ones have utility 0.
    let mut dev_rows = Vec::new();
    let mut dev_bids = Vec::new();
    let mut dev_theta = Vec::new();
    let mut dev_value_theta = Vec::new();
    let mut index: Vec<Vec<Vec<Option<usize>>>> = Vec::with_capacity(bsz);
    for p in items {
        let mut per_item = Vec::with_capacity(k);
        for (s, devs) in p.deviations.iter().enumerate() {
            let mut per_slot = Vec::with_capacity(devs.len());
            for d in devs {
                per_slot.push(d.row.as_ref().map(|(row, bid, th)| {
                    dev_rows.push(row.clone());
                    dev_bids.push(*bid);
                    dev_theta.push(*th);
                    dev_value_theta.push(p.values[s] * th);
                    dev_rows.len() - 1
                }));
            }
            per_item.push(per_slot);
        }
        index.push(per_item);
    }
    let zero_row = dev_rows.len();
    let u_dev = if dev_rows.is_empty() {
        g.constant(Tensor::zeros(1, 1))
    } else {
        let x = g.constant(Tensor::from_rows(&dev_rows));
        let p = model.payment.payments(g, x, &dev_bids)?;
        let th = g.constant(Tensor::column_vector(dev_theta));
        let e = g.mul(p, th)?;
        let vt = g.constant(Tensor::column_vector(dev_value_theta));
        let u = g.sub(vt, e)?;
        let zero = g.constant(Tensor::zeros(1, 1));
        g.concat_rows(&[u, zero])?
    };
    let u_dev_vals = g.value(u_dev).data().to_vec();

    // Hard max over the grid: only the best deviation carries gradient.
    let mut dev_pick = Vec::new();
    let mut true_pick = Vec::new();
    let mut slot_of = Vec::new();
    let mut regret_sums = vec![0.0; k];
    for (b, per_item) in index.iter().enumerate() {
        for (s, per_slot) in per_item.iter().enumerate() {
            let r = s * bsz + b;
            let mut best = 0.0;
            let mut arg = None;
            for d in per_slot {
                let j = d.unwrap_or(zero_row);
                let gain = u_dev_vals[j] - u_true_vals[r];
                if gain > best {
                    best = gain;
                    arg = Some(j);
                }
            }
            if let Some(j) = arg {
                dev_pick.push(j);
                true_pick.push(r);
                slot_of.push(s);
                regret_sums[s] += best;
            }
        }
    }
    let mut loss = g.neg(revenue);
    if !dev_pick.is_empty() {
        let a = g.gather_rows(u_dev, &dev_pick)?;
        let t = g.gather_rows(u_true, &true_pick)?;
        let rgt = g.sub(a, t)?;
        let mut sel = Tensor::zeros(k, dev_pick.len());
        for (c, &s) in slot_of.iter().enumerate() {
            sel.set(s, c, 1.0);
        }
        let sel = g.constant(sel);
        let per_slot = g.matmul(sel, rgt)?;
        let sq = g.mul(rgt, rgt)?;
        let per_slot_sq = g.matmul(sel, sq)?;
        let lam = g.constant(Tensor::row_vector(state.lambda.clone()));
        let linear = g.matmul(lam, per_slot)?;
        let quad = g.sum(per_slot_sq);
        let quad = g.scale(quad, state.rho / 2.0);
        loss = g.add(loss, linear)?;
        loss = g.add(loss, quad)?;
    }
    let revenue_val = g.value(revenue).item();
    let loss = g.scale(loss, 1.0 / bsz as f64);
    Ok(Objective { loss, revenue: revenue_val, regret_sums })
}

fn stack_rows(items: &[&Prepared], k: usize) -> Tensor {
    let bsz = items.len();
    let mut rows = Vec::with_capacity(k * bsz);
    for s in 0..k {
        for p in items {
            rows.push(p.rows[s].clone());
        }
    }
    Tensor::from_rows(&rows)
}

/// Minimises the augmented Lagrangian over the payment network (and, for
/// the end-to-end variant, the generator), updating the multipliers every
/// `lambda_interval` steps.
pub fn train_payment(
    model: &mut Cga,
    instances: &[&AuctionInstance],
    cfg: &TrainConfig,
    state: &mut TrainState,
    rng: &mut dyn RngCore,
) -> Result<Vec<PaymentEpoch>> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(CgaError::InvalidInput("no auctions to train the payment network on".into()));
    }
    let k = model.payment.k();
    if instances.iter().any(|i| i.k() != k) || state.lambda.len() != k {
        return Err(CgaError::InvalidInput(format!("payment network is built for k = {k}")));
    }
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut prepared = prepare(model, instances, &cfg.grid)?;
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut curve = Vec::with_capacity(cfg.payment_epochs);
    let mut window = vec![0.0; k];
    let (mut window_count, mut steps) = (0usize, 0usize);
    for epoch in 0..cfg.payment_epochs {
        if model.variant.end2end && epoch > 0 {
            prepared = prepare(model, instances, &cfg.grid)?;
        }
        order.shuffle(rng);
        let mut revenue = 0.0;
        let mut regret = vec![0.0; k];
        for range in chunks(order.len(), cfg.batch) {
            let items: Vec<&Prepared> = order[range].iter().map(|&i| &prepared[i]).collect();
            let mut g = Graph::new();
            let obj = if model.variant.end2end {
                end2end_objective(&mut g, model, instances, &items, state)?
            } else {
                let rows = g.constant(stack_rows(&items, k));
                let theta: Vec<Vec<f64>> = items.iter().map(|p| p.allocated.theta.clone()).collect();
                lagrangian(&mut g, model, &items, rows, &theta, state)?
            };
            let grads = g.gradients(obj.loss)?;
            grads.accumulate_into(model.payment.store_mut());
            model.payment.store_mut().adam_step(&adam);
            if model.variant.end2end {
                grads.accumulate_into(model.generator.store_mut());
                model.generator.store_mut().adam_step(&adam);
            }
            revenue += obj.revenue;
            for s in 0..k {
                regret[s] += obj.regret_sums[s];
                window[s] += obj.regret_sums[s];
            }
            window_count += items.len();
            steps += 1;
            if steps % cfg.lambda_interval == 0 {
                let mean: Vec<f64> = window.iter().map(|r| r / window_count as f64).collect();
                state.update(&mean);
                window.iter_mut().for_each(|w| *w = 0.0);
                window_count = 0;
            }
        }
        let m = prepared.len() as f64;
        curve.push(PaymentEpoch {
            revenue: revenue / m,
            regret: regret.iter().map(|r| r / m).collect(),
            lambda: state.lambda.clone(),
        });
    }
    Ok(curve)
}

/// End-to-end variant: the truthful branch recomputes the generator in the
/// traced graph so the Lagrangian reaches its parameters through the winner
/// embeddings and `Z`. Deviation rows come from the epoch-start snapshot and
/// are only used where the current slate still matches it.
fn end2end_objective(
    g: &mut Graph,
    model: &Cga,
    instances: &[&AuctionInstance],
    items: &[&Prepared],
    state: &TrainState,
) -> Result<Objective> {
    let k = state.lambda.len();
    let bsz = items.len();
    let part: Vec<&PublicAuction> = items.iter().map(|p| &instances[p.index].auction).collect();
    let mcfg = model.generator.config();
    let batch = AdBatch::new(&part, mcfg.d_a, mcfg.d_u, model.variant.use_virtual_value)?;
    let mut rng = stream_rng(0, "cga.greedy", 0);
    let gen = model.generator.generate(g, &batch, Mode::Greedy, &mut rng)?;
    let slates: Vec<&[usize]> = gen.allocs.iter().map(Vec::as_slice).collect();
    let theta = model.scorer.theta(&part, &slates)?;

    let mut current = Vec::with_capacity(bsz);
    let mut h_rows = Vec::with_capacity(k * bsz);
    let mut others = Vec::with_capacity(k * bsz);
    let mut theta_col = Vec::with_capacity(k * bsz);
    for s in 0..k {
        for (b, a) in part.iter().enumerate() {
            let alloc = &gen.allocs[b];
            h_rows.push(alloc[s] * bsz + b);
            others.extend(alloc.iter().enumerate().filter(|&(t, _)| t != s).map(|(_, &i)| a.bids[i]));
            theta_col.push(theta[b][s]);
        }
    }
    for (b, (p, a)) in items.iter().zip(&part).enumerate() {
        let alloc = &gen.allocs[b];
        let inst = instances[p.index];
        let deviations = if *alloc == p.allocated.alloc { p.deviations.clone() } else { vec![Vec::new(); k] };
        current.push(Prepared {
            index: p.index,
            allocated: p.allocated.clone(),
            rows: Vec::new(),
            bids: alloc.iter().map(|&i| a.bids[i]).collect(),
            values: alloc.iter().map(|&i| inst.values[i]).collect(),
            deviations,
        });
    }
    let h = g.gather_rows(gen.encoded.h, &h_rows)?;
    let z = g.exp(gen.chosen_log_prob);
    let z_cols = (0..k).map(|s| g.slice_cols(z, s, 1)).collect::<aforge_neural::Result<Vec<_>>>()?;
    let z_col = g.concat_rows(&z_cols)?;
    let th = g.constant(Tensor::column_vector(theta_col));
    let zt = g.mul(z_col, th)?;
    let mut parts = vec![h];
    if k > 1 {
        parts.push(g.constant(Tensor::from_vec(k * bsz, k - 1, others)));
    }
    parts.push(zt);
    let rows = g.concat_cols(&parts)?;
    let refs: Vec<&Prepared> = current.iter().collect();
    lagrangian(g, model, &refs, rows, &theta, state)
}
