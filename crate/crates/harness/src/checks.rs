//! Oracle self-checks: gradient integrity, the single-slot Myerson
//! reduction, monotonicity of the optimal allocation rule, the
//! revenue / virtual-welfare identity, Monte Carlo convergence of payments
//! and the structural invariants of the networks.

use aforge_cga::{AdBatch, Evaluator, Generator, Mode, ModelConfig, PaymentNet, SlateBatch};
use aforge_core::oracle::{myerson_payment_mc, PaymentSampler};
use aforge_core::rng::stream_rng;
use aforge_core::{
    monotonicity_check, optimal_allocate, psi, score, virtual_values, Allocation, AllocationRule, AuctionInstance,
    ConstantCtr, CtrModel, Mechanism, OptimalMechanism, PublicAuction, RegretConfig, ValueDistribution,
    VirtualWelfareRule, World, WorldConfig, DEFAULT_CAP,
};
use aforge_neural::{
    check_gradients, Activation, BiLstm, Graph, GruCell, Mlp, MultiHeadAttention, ParamStore, Positional, Tensor, Var,
};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{HarnessError, Result};

/// Names accepted by [`run_check`], in the order `all` runs them.
pub const CHECKS: [&str; 6] = ["gradients", "myerson", "monotonicity", "theorem2", "mc-convergence", "invariants"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

/// Overrides for the default check sizes.
#[derive(Clone, Debug, Default)]
pub struct CheckOptions {
    /// Instances, profiles or fuzz cases, depending on the check.
    pub instances: Option<usize>,
    /// Bid grid points for the monotonicity check.
    pub grid: Option<usize>,
    pub seed: u64,
}

pub fn run_check(name: &str, opts: &CheckOptions) -> Result<CheckOutcome> {
    let s = opts.seed;
    match name {
        "gradients" => gradient_integrity(opts.instances.unwrap_or(20), s),
        "myerson" => myerson_reduction(opts.instances.unwrap_or(100), 4000, s),
        "monotonicity" => monotonicity(opts.instances.unwrap_or(200), opts.grid.unwrap_or(21), s),
        "theorem2" => theorem2(opts.instances.unwrap_or(10_000), 2000, s),
        "mc-convergence" => mc_convergence(&[100, 1000, 10_000], 200, s),
        "invariants" => structural_invariants(opts.instances.unwrap_or(1000), s),
        other => Err(HarnessError::Config(format!("unknown check `{other}`; expected one of {}", CHECKS.join(", ")))),
    }
}

const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// `Σ out ⊙ w` for fixed random `w`, so every output entry carries gradient.
fn project(g: &mut Graph, out: Var, w: &Tensor) -> aforge_neural::Result<Var> {
    let w = g.constant(w.clone());
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

/// Central differences against the tape for every layer type, `seeds`
/// random initialisations each. Passes when the worst relative error stays
/// below [`GRAD_TOL`].
pub fn gradient_integrity(seeds: usize, seed: u64) -> Result<CheckOutcome> {
    let mut worst: (f64, String) = (0.0, String::new());
    let mut note = |layer: &str, err: f64| {
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, layer.to_string());
        }
    };
    for s in 0..seeds as u64 {
        let mut rng = stream_rng(seed, "check.gradients", s);

        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "mlp", &[5, 6, 3], Activation::Relu, Activation::Sigmoid, &mut rng)?;
        let (x, w) = (random_tensor(3, 5, &mut rng), random_tensor(3, 3, &mut rng));
        let r = check_gradients(&mut store, GRAD_STEP, |g, st| {
            let xv = g.constant(x.clone());
            let y = mlp.forward(g, st, xv)?;
            project(g, y, &w)
        })?;
        note("mlp", r.max_rel_error);

        for pe in [Positional::None, Positional::Sinusoidal] {
            let mut store = ParamStore::new();
            let att = MultiHeadAttention::new(&mut store, "attn", 8, 4, pe, &mut rng)?;
            let (x, w) = (random_tensor(5, 8, &mut rng), random_tensor(5, 8, &mut rng));
            let r = check_gradients(&mut store, GRAD_STEP, |g, st| {
                let xv = g.constant(x.clone());
                let y = att.forward(g, st, xv)?;
                project(g, y, &w)
            })?;
            note(if pe == Positional::None { "attention" } else { "attention+pe" }, r.max_rel_error);
        }

        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 3, 4, &mut rng)?;
        let (s0, xs, w) = (random_tensor(1, 4, &mut rng), random_tensor(3, 3, &mut rng), random_tensor(1, 4, &mut rng));
        let r = check_gradients(&mut store, GRAD_STEP, |g, st| {
            let mut state = g.constant(s0.clone());
            let xv = g.constant(xs.clone());
            for t in 0..3 {
                let xt = g.row(xv, t)?;
                state = cell.forward(g, st, state, xt)?;
            }
            project(g, state, &w)
        })?;
        note("gru", r.max_rel_error);

        let mut store = ParamStore::new();
        let bi = BiLstm::new(&mut store, "bilstm", 3, 4, &mut rng)?;
        let (x, wf, wb) = (random_tensor(4, 3, &mut rng), random_tensor(4, 4, &mut rng), random_tensor(4, 4, &mut rng));
        let r = check_gradients(&mut store, GRAD_STEP, |g, st| {
            let xv = g.constant(x.clone());
            let (hf, hb) = bi.forward(g, st, xv)?;
            let a = project(g, hf, &wf)?;
            let b = project(g, hb, &wb)?;
            g.add(a, b)
        })?;
        note("bilstm", r.max_rel_error);

        let pay = PaymentNet::new(&ModelConfig::default(), 3, &mut rng)?;
        let mut store = pay.store().clone();
        let rows = random_tensor(4, pay.input_dim(), &mut rng);
        let bids: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
        let w = random_tensor(4, 1, &mut rng);
        let r = check_gradients(&mut store, GRAD_STEP, |g, st| {
            let x = g.constant(rows.clone());
            let rates = pay.mlp().forward(g, st, x)?;
            let b = g.constant(Tensor::column_vector(bids.clone()));
            let p = g.mul(rates, b)?;
            project(g, p, &w)
        })?;
        note("payment head", r.max_rel_error);
    }
    let passed = worst.0 < GRAD_TOL;
    Ok(CheckOutcome::new(
        "gradients",
        passed,
        format!("{seeds} seeds, max relative error {:.2e} ({})", worst.0, worst.1),
    ))
}

/// An auction whose ads differ only by bid.
pub fn flat_auction(bids: &[f64], k: usize) -> PublicAuction {
    let n = bids.len();
    PublicAuction {
        user: vec![1.0],
        features: vec![vec![1.0]; n],
        bids: bids.to_vec(),
        dists: vec![ValueDistribution::standard_uniform(); n],
        pctr: vec![1.0; n],
        k,
    }
}

/// One slot, unit CTR, uniform values: optimal payments must equal the
/// second-highest bid and Ψ must stay below 1%.
pub fn myerson_reduction(instances: usize, samples: usize, seed: u64) -> Result<CheckOutcome> {
    let ctr = ConstantCtr(1.0);
    let mech = OptimalMechanism::new(ctr, samples);
    let mut insts = Vec::with_capacity(instances);
    let mut max_err = 0.0f64;
    for i in 0..instances {
        let mut rng = stream_rng(seed, "check.myerson", i as u64);
        let n = 2 + i % 4;
        let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let auction = flat_auction(&values, 1);
        let d = mech.decide(&auction, &mut rng)?;
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let winner = d.allocation.slots()[0];
        if values[winner] != sorted[0] {
            return Ok(CheckOutcome::new("myerson", false, format!("instance {i}: highest bid did not win")));
        }
        max_err = max_err.max((d.payments[0] - sorted[1]).abs());
        insts.push(AuctionInstance::new(auction, values)?);
    }
    let cfg = RegretConfig { redraws: 5, seed, ..RegretConfig::default() };
    let ic = psi(&mech, &insts, &ctr, &cfg)?;
    let passed = max_err <= 0.02 && ic.psi < 0.01;
    Ok(CheckOutcome::new(
        "myerson",
        passed,
        format!("{instances} instances, S={samples}: max |p - second price| {max_err:.4}, psi {:.4}", ic.psi),
    ))
}

/// Virtual welfare with the signs flipped: a deliberately broken rule.
pub struct ArgminRule<C>(pub C);

impl<C: CtrModel> AllocationRule for ArgminRule<C> {
    fn allocate(&self, a: &PublicAuction) -> aforge_core::Result<Allocation> {
        let neg: Vec<f64> = virtual_values(a).iter().map(|p| -p).collect();
        Ok(optimal_allocate(a, &self.0, &neg, DEFAULT_CAP)?.allocation)
    }
}

/// Each ad's CTR under the optimal rule must be nondecreasing in its own
/// bid; the argmin rule serves as a negative control and must violate it.
pub fn monotonicity(instances: usize, grid_points: usize, seed: u64) -> Result<CheckOutcome> {
    if grid_points < 2 {
        return Err(HarnessError::Config("monotonicity grid needs at least 2 points".into()));
    }
    let world = World::new(WorldConfig { n: 6, k: 3, seed, ..WorldConfig::default() })?;
    let grid: Vec<f64> = (0..grid_points).map(|j| j as f64 / (grid_points - 1) as f64).collect();
    let rule = VirtualWelfareRule { ctr: &world, cap: DEFAULT_CAP };
    let control = ArgminRule(&world);
    let (mut violations, mut control_violations) = (0usize, 0usize);
    for rec in world.gen_dataset(0, instances) {
        let a = &rec.instance.auction;
        for ad in 0..a.n() {
            violations += monotonicity_check(a, &rule, &world, ad, &grid)?.violations.len();
            control_violations += monotonicity_check(a, &control, &world, ad, &grid)?.violations.len();
        }
    }
    Ok(CheckOutcome::new(
        "monotonicity",
        violations == 0 && control_violations > 0,
        format!(
            "{instances} instances, {grid_points}-point grid: {violations} violations, argmin control {control_violations}"
        ),
    ))
}

/// Under truthful bids the optimal mechanism's expected revenue equals the
/// expected virtual welfare of its winners.
pub fn theorem2(profiles: usize, samples: usize, seed: u64) -> Result<CheckOutcome> {
    let world = World::new(WorldConfig { n: 5, k: 2, seed, ..WorldConfig::default() })?;
    let mech = OptimalMechanism::new(&world, samples);
    let (mut revenue, mut welfare) = (0.0, 0.0);
    for (i, rec) in world.gen_dataset(0, profiles).into_iter().enumerate() {
        let inst = rec.instance;
        let truthful = PublicAuction { bids: inst.values.clone(), ..inst.auction };
        let d = mech.decide(&truthful, &mut stream_rng(seed, "check.theorem2", i as u64))?;
        let out = score(d, &truthful, &world)?;
        revenue += out.revenue();
        let phi = virtual_values(&truthful);
        welfare += out.allocation.slots().iter().zip(&out.ctrs).map(|(&ad, &t)| phi[ad] * t).sum::<f64>();
    }
    let rel = (revenue - welfare).abs() / revenue;
    Ok(CheckOutcome::new(
        "theorem2",
        rel < 0.02,
        format!(
            "{profiles} profiles, S={samples}: revenue {:.5}, virtual welfare {:.5}, relative gap {rel:.4}",
            revenue / profiles as f64,
            welfare / profiles as f64
        ),
    ))
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Standard deviation of the iid Monte Carlo payment over `repeats` runs
/// at each sample count; the log-log slope must be `-0.5 ± 0.1`.
pub fn mc_convergence(sample_counts: &[usize], repeats: usize, seed: u64) -> Result<CheckOutcome> {
    let world = World::new(WorldConfig { seed, ..WorldConfig::default() })?;
    let spread = |a: &PublicAuction, ad: usize, s: usize| -> Result<f64> {
        let est = (0..repeats)
            .map(|r| {
                let mut rng = stream_rng(seed, &format!("check.mc.{s}"), r as u64);
                myerson_payment_mc(a, &world, ad, s, PaymentSampler::Iid, &mut rng)
            })
            .collect::<aforge_core::Result<Vec<f64>>>()?;
        Ok(std_dev(&est))
    };
    // The first winner whose payment is genuinely random.
    let mut target = None;
    for rec in world.gen_dataset(0, 50) {
        let a = rec.instance.auction;
        let alloc = optimal_allocate(&a, &world, &virtual_values(&a), DEFAULT_CAP)?.allocation;
        let ad = alloc.slots()[0];
        if spread(&a, ad, sample_counts[0])? > 1e-6 {
            target = Some((a, ad));
            break;
        }
    }
    let Some((auction, ad)) = target else {
        return Ok(CheckOutcome::new("mc-convergence", false, "no winner with a random payment found".into()));
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &s in sample_counts {
        xs.push((s as f64).log10());
        ys.push(spread(&auction, ad, s)?.log10());
    }
    let m = slope(&xs, &ys);
    let sds: Vec<String> = ys.iter().map(|y| format!("{:.2e}", 10f64.powf(*y))).collect();
    Ok(CheckOutcome::new(
        "mc-convergence",
        (m + 0.5).abs() <= 0.1,
        format!("S={sample_counts:?}, sd [{}], slope {m:.3}", sds.join(", ")),
    ))
}

/// A random auction with `n` ads, `k` slots and features in `[-3, 3]`.
fn random_auction(rng: &mut impl Rng, d_a: usize, d_u: usize) -> PublicAuction {
    let n = rng.random_range(2..=10);
    let k = rng.random_range(1..=n.min(4));
    PublicAuction {
        user: (0..d_u).map(|_| rng.random_range(-3.0..3.0)).collect(),
        features: (0..n).map(|_| (0..d_a).map(|_| rng.random_range(-3.0..3.0)).collect()).collect(),
        bids: (0..n).map(|_| rng.random_range(0.0..2.0)).collect(),
        dists: vec![ValueDistribution::standard_uniform(); n],
        pctr: (0..n).map(|_| rng.random_range(0.0..=1.0)).collect(),
        k,
    }
}

fn permute(a: &PublicAuction, perm: &[usize]) -> PublicAuction {
    PublicAuction {
        user: a.user.clone(),
        features: perm.iter().map(|&i| a.features[i].clone()).collect(),
        bids: perm.iter().map(|&i| a.bids[i]).collect(),
        dists: perm.iter().map(|&i| a.dists[i]).collect(),
        pctr: perm.iter().map(|&i| a.pctr[i]).collect(),
        k: a.k,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Tally of one structural property over the fuzz cases.
#[derive(Default)]
struct Tally {
    failures: usize,
    first: Option<String>,
}

impl Tally {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures += 1;
            self.first.get_or_insert_with(what);
        }
    }
}

/// Fuzzes the network invariants over `cases` random auctions and fresh
/// random weights: permutation-invariant context, permutation-equivariant
/// decoding, normalised and masked step distributions, evaluator ranges and
/// payment individual rationality.
pub fn structural_invariants(cases: usize, seed: u64) -> Result<CheckOutcome> {
    let cfg = ModelConfig::default();
    let names = ["encoder invariance", "decoder equivariance", "z normalisation", "gamma range", "theta range", "payment IR"];
    let mut tallies: Vec<Tally> = names.iter().map(|_| Tally::default()).collect();
    for case in 0..cases as u64 {
        let mut rng = stream_rng(seed, "check.invariants", case);
        let gen = Generator::new(&cfg, &mut rng)?;
        let eval = Evaluator::new(&cfg, &mut rng)?;
        let a = random_auction(&mut rng, cfg.d_a, cfg.d_u);
        let n = a.n();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let moved = permute(&a, &perm);

        let run = |auction: &PublicAuction, mode: Mode, rng: &mut dyn rand::RngCore| -> Result<_> {
            let mut g = Graph::inference();
            let batch = AdBatch::new(&[auction], cfg.d_a, cfg.d_u, true)?;
            let out = gen.generate(&mut g, &batch, mode, rng)?;
            let c = g.value(out.encoded.c).data().to_vec();
            Ok((c, out.allocs.into_iter().next().unwrap_or_default(), out.probs.into_iter().next().unwrap_or_default()))
        };
        let (c, alloc, probs) = run(&a, Mode::Greedy, &mut rng)?;
        let (c_p, alloc_p, probs_p) = run(&moved, Mode::Greedy, &mut rng)?;

        let diff = max_abs_diff(&c, &c_p);
        tallies[0].check(diff < 1e-9, || format!("case {case}: context moved by {diff:.2e}"));

        let mapped: Vec<usize> = alloc_p.iter().map(|&j| perm[j]).collect();
        let mut worst = 0.0f64;
        for (z, zp) in probs.iter().zip(&probs_p) {
            let orig: Vec<f64> = perm.iter().map(|&i| z[i]).collect();
            worst = worst.max(max_abs_diff(zp, &orig));
        }
        tallies[1].check(mapped == alloc && worst < 1e-9, || format!("case {case}: {mapped:?} vs {alloc:?}, {worst:.2e}"));

        let (_, sampled, sprobs) = run(&a, Mode::Sample, &mut rng)?;
        let mut normal = a.is_feasible(&sampled);
        for (t, z) in sprobs.iter().enumerate() {
            normal &= (z.iter().sum::<f64>() - 1.0).abs() < 1e-9 && z.iter().all(|&p| p >= 0.0);
            normal &= sampled[..t].iter().all(|&taken| z[taken] == 0.0);
        }
        tallies[2].check(normal, || format!("case {case}: step distributions {sprobs:?}"));

        let slates: [&[usize]; 2] = [&sampled, &alloc];
        let sb = SlateBatch::new(&[&a, &a], &slates, cfg.d_a, cfg.d_u, cfg.alpha_decay)?;
        let (gamma, theta) = eval.predict(&sb)?;
        let gammas: Vec<f64> = gamma.concat();
        let thetas: Vec<f64> = theta.concat();
        tallies[3].check(gammas.iter().all(|&x| x > 0.0 && x < 2.0), || format!("case {case}: gamma {gammas:?}"));
        tallies[4].check(thetas.iter().all(|&x| (0.0..=1.0).contains(&x)), || format!("case {case}: theta {thetas:?}"));

        let pay = PaymentNet::new(&cfg, a.k, &mut rng)?;
        let rows: Vec<Vec<f64>> =
            (0..a.k).map(|_| (0..pay.input_dim()).map(|_| rng.random_range(-50.0..50.0)).collect()).collect();
        let bids: Vec<f64> = (0..a.k).map(|_| rng.random_range(0.0..20.0)).collect();
        let p = pay.predict(&rows, &bids)?;
        tallies[5].check(p.iter().zip(&bids).all(|(&p, &b)| p >= 0.0 && p <= b), || format!("case {case}: {p:?} > {bids:?}"));
    }
    let failed: Vec<String> = names
        .iter()
        .zip(&tallies)
        .filter(|(_, t)| t.failures > 0)
        .map(|(n, t)| format!("{n}: {} failures, first {}", t.failures, t.first.as_deref().unwrap_or("")))
        .collect();
    let detail = if failed.is_empty() {
        format!("{cases} fuzz cases, all {} properties hold", names.len())
    } else {
        failed.join("; ")
    };
    Ok(CheckOutcome::new("invariants", failed.is_empty(), detail))
}
