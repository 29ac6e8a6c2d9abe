use aforge_neural::{
    check_gradients, Activation, Axis, BiLstm, Graph, GruCell, Mlp, MultiHeadAttention, ParamStore, Positional,
    Result, Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Projects an output onto fixed random weights so every entry matters.
fn project(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

#[test]
fn two_layer_mlp_with_twenty_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    // 3 -> 4 -> 1: 12 + 4 + 4 + 1 = 21 weights.
    let mlp = Mlp::new(&mut store, "mlp", &[3, 4, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
    let x = random_tensor(2, 3, &mut rng);
    let r = check_gradients(&mut store, H, |g, s| {
        let xv = g.constant(x.clone());
        let y = mlp.forward(g, s, xv)?;
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(r.checked >= 20);
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn layers_pass_finite_difference_checks_over_seeds() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);

        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[5, 6, 3], Activation::Relu, Activation::Sigmoid, &mut rng).unwrap();
        let x = random_tensor(3, 5, &mut rng);
        let wout = random_tensor(3, 3, &mut rng);
        let r = check_gradients(&mut store, H, |g, s| {
            let xv = g.constant(x.clone());
            let y = mlp.forward(g, s, xv)?;
            project(g, y, &wout)
        })
        .unwrap();
        assert!(r.max_rel_error < TOL, "mlp seed {seed}: {r:?}");

        for positional in [Positional::None, Positional::Sinusoidal] {
            let mut store = ParamStore::new();
            let att = MultiHeadAttention::new(&mut store, "a", 8, 4, positional, &mut rng).unwrap();
            let x = random_tensor(4, 8, &mut rng);
            let wout = random_tensor(4, 8, &mut rng);
            let r = check_gradients(&mut store, H, |g, s| {
                let xv = g.constant(x.clone());
                let y = att.forward(g, s, xv)?;
                project(g, y, &wout)
            })
            .unwrap();
            assert!(r.max_rel_error < TOL, "attention {positional:?} seed {seed}: {r:?}");
        }

        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 3, 4, &mut rng).unwrap();
        let s0 = random_tensor(1, 4, &mut rng);
        let xs = random_tensor(3, 3, &mut rng);
        let wout = random_tensor(1, 4, &mut rng);
        let r = check_gradients(&mut store, H, |g, s| {
            let mut state = g.constant(s0.clone());
            let xv = g.constant(xs.clone());
            for t in 0..3 {
                let xt = g.row(xv, t)?;
                state = cell.forward(g, s, state, xt)?;
            }
            project(g, state, &wout)
        })
        .unwrap();
        assert!(r.max_rel_error < TOL, "gru seed {seed}: {r:?}");

        let mut store = ParamStore::new();
        let bi = BiLstm::new(&mut store, "bi", 3, 4, &mut rng).unwrap();
        let x = random_tensor(3, 3, &mut rng);
        let wf = random_tensor(3, 4, &mut rng);
        let wb = random_tensor(3, 4, &mut rng);
        let r = check_gradients(&mut store, H, |g, s| {
            let xv = g.constant(x.clone());
            let (hf, hb) = bi.forward(g, s, xv)?;
            let a = project(g, hf, &wf)?;
            let b = project(g, hb, &wb)?;
            g.add(a, b)
        })
        .unwrap();
        assert!(r.max_rel_error < TOL, "bilstm seed {seed}: {r:?}");
    }
}

#[test]
fn primitive_ops_pass_finite_difference_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let a = store.add("a", random_tensor(3, 4, &mut rng)).unwrap();
    let b = store.add("b", random_tensor(4, 2, &mut rng)).unwrap();
    let row = store.add("row", random_tensor(1, 2, &mut rng)).unwrap();
    let s = store.add("s", Tensor::scalar(0.7)).unwrap();
    let pos = store.add("pos", Tensor::from_vec(2, 2, vec![0.5, 1.5, 2.0, 0.3])).unwrap();
    let w1 = random_tensor(3, 2, &mut rng);
    let w2 = random_tensor(4, 3, &mut rng);
    let mask = [false, true, false, false];

    let r = check_gradients(&mut store, H, |g, st| {
        let av = g.param(st, a);
        let bv = g.param(st, b);
        let rv = g.param(st, row);
        let sv = g.param(st, s);
        let pv = g.param(st, pos);

        let ab = g.matmul(av, bv)?;
        let ab = g.add(ab, rv)?;
        let ab = g.mul_scalar(ab, sv)?;
        let sm_rows = g.softmax(ab, Axis::Row);
        let sm_cols = g.softmax(ab, Axis::Col);
        let both = g.mul(sm_rows, sm_cols)?;
        let term1 = project(g, both, &w1)?;

        let at = g.transpose(av);
        let abt = g.matmul_t(at, at)?;
        let e = g.exp(abt);
        let logp = g.masked_log_softmax(abt, &mask)?;
        let p = g.masked_softmax(abt, &mask)?;
        let cat = g.concat_cols(&[logp, p])?;
        let sl = g.slice_cols(cat, 1, 3)?;
        let zero = g_const(g, 0.0, 4, 3);
        let sl = g.sub(sl, zero)?;
        let term2 = project(g, sl, &w2)?;

        let lg = g.log(pv);
        let cl = g.clamp(lg, -0.5, 0.5);
        let mn = g.min_with_const(cl, 0.2);
        let rep = g.repeat_rows(rv, 2)?;
        let stacked = g.concat_rows(&[mn, rep])?;
        let gathered = g.gather_rows(stacked, &[3, 0, 0, 2])?;
        let sums = g.sum_axis(gathered, Axis::Row);
        let sums_c = g.sum_axis(gathered, Axis::Col);
        let term3 = g.mean(sums);
        let term4 = g.sum(sums_c);
        let term5 = g.mean(e);
        let t = g.add(term1, term2)?;
        let t = g.add(t, term3)?;
        let t = g.add(t, term4)?;
        let t = g.add(t, term5)?;
        let t = g.add_const(t, 1.0);
        Ok(g.neg(t))
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

fn g_const(g: &mut Graph, v: f64, rows: usize, cols: usize) -> Var {
    g.constant(Tensor::full(rows, cols, v))
}

#[test]
fn forward_and_backward_are_deterministic() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut store = ParamStore::new();
        let att = MultiHeadAttention::new(&mut store, "a", 8, 4, Positional::Sinusoidal, &mut rng).unwrap();
        let x = random_tensor(6, 8, &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let y = att.forward(&mut g, &store, xv).unwrap();
        let l = g.sum(y);
        g.backward(l, &mut store).unwrap();
        let grads: Vec<f64> = store.ids().flat_map(|id| store.grad(id).data().to_vec()).collect();
        grads
    };
    let a = build();
    let b = build();
    assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(data in prop::collection::vec(-500.0f64..500.0, 1..40), cols in 1usize..8) {
        let rows = data.len() / cols;
        prop_assume!(rows > 0);
        let t = Tensor::from_vec(rows, cols, data[..rows * cols].to_vec());
        let mut g = Graph::inference();
        let x = g.constant(t);
        let s = g.softmax(x, Axis::Row);
        for r in 0..rows {
            let sum: f64 = g.value(s).row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(g.value(s).row(r).iter().all(|p| p.is_finite() && *p >= 0.0));
        }
    }

    #[test]
    fn masked_log_softmax_matches_log_of_masked_softmax(
        data in prop::collection::vec(-20.0f64..20.0, 2..10),
        seed in any::<u64>(),
    ) {
        let n = data.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        mask[rng.random_range(0..n)] = false;
        let mut g = Graph::inference();
        let x = g.constant(Tensor::row_vector(data));
        let lp = g.masked_log_softmax(x, &mask).unwrap();
        let p = g.masked_softmax(x, &mask).unwrap();
        for j in 0..n {
            let pj = g.value(p).get(0, j);
            if mask[j] {
                prop_assert_eq!(pj, 0.0);
            } else {
                prop_assert!((g.value(lp).get(0, j).exp() - pj).abs() < 1e-12);
            }
        }
    }
}
