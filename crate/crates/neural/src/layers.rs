//! Layers built from graph primitives. Each layer registers its parameters in
//! a [`ParamStore`] under a name prefix and keeps only their ids, so one store
//! can hold a whole model and be checkpointed in one piece.
//!
//! Inputs are row-major: a sequence of `n` items with `d` features is an
//! `n x d` tensor, a single vector is `1 x d`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::graph::{Axis, Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// `y = x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let w = store.add_uniform(&format!("{name}.w"), in_dim, out_dim, in_dim, rng)?;
        let b = store.add(&format!("{name}.b"), Tensor::zeros(1, out_dim))?;
        Ok(Self { w, b, in_dim, out_dim })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }
}

/// Stack of linear layers with one activation between hidden layers and a
/// separate one on the output.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
    hidden: Activation,
    output: Activation,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(NeuralError::InvalidArgument { op: "mlp", detail: "needs at least input and output dims".into() });
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, hidden, output })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            h = if i == last { self.output.apply(g, h) } else { self.hidden.apply(g, h) };
        }
        Ok(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Positional {
    None,
    Sinusoidal,
}

/// `PE(pos, 2i) = sin(pos / 10000^(2i/d))`, `PE(pos, 2i+1) = cos(...)`.
pub fn sinusoidal_encoding(len: usize, d: usize) -> Tensor {
    let mut pe = Tensor::zeros(len, d);
    for pos in 0..len {
        for j in 0..d {
            let pair = (j / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / d as f64);
            pe.set(pos, j, if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

/// Scaled dot-product multi-head self-attention with learned Q/K/V and
/// output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    dim: usize,
    positional: Positional,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        positional: Positional,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(NeuralError::InvalidArgument {
                op: "attention",
                detail: format!("model dim {dim} is not divisible by {heads} heads"),
            });
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng)?,
            out: Linear::new(store, &format!("{name}.o"), dim, dim, rng)?,
            heads,
            dim,
            positional,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (len, d) = g.shape(x);
        if d != self.dim {
            return Err(NeuralError::ShapeMismatch { op: "attention", lhs: (len, d), rhs: (len, self.dim) });
        }
        let x = match self.positional {
            Positional::None => x,
            Positional::Sinusoidal => {
                let pe = g.constant(sinusoidal_encoding(len, d));
                g.add(x, pe)?
            }
        };
        let q = self.q.forward(g, store, x)?;
        let k = self.k.forward(g, store, x)?;
        let v = self.v.forward(g, store, x)?;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let scores = g.matmul_t(qh, kh)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax(scores, Axis::Row);
            heads.push(g.matmul(weights, vh)?);
        }
        let joined = g.concat_cols(&heads)?;
        self.out.forward(g, store, joined)
    }

    /// Self-attention over `batch` independent sequences stacked
    /// position-major (row `pos * batch + b`); attention never crosses
    /// sequences. Matches [`forward`](Self::forward) on each sequence.
    pub fn forward_batched(&self, g: &mut Graph, store: &ParamStore, x: Var, batch: usize) -> Result<Var> {
        let (rows, d) = g.shape(x);
        if d != self.dim {
            return Err(NeuralError::ShapeMismatch { op: "attention", lhs: (rows, d), rhs: (rows, self.dim) });
        }
        if batch == 0 || rows % batch != 0 {
            return Err(NeuralError::InvalidArgument {
                op: "attention",
                detail: format!("{rows} rows do not split into batches of {batch}"),
            });
        }
        let len = rows / batch;
        let x = match self.positional {
            Positional::None => x,
            Positional::Sinusoidal => {
                let pe = sinusoidal_encoding(len, d);
                let mut tiled = Tensor::zeros(rows, d);
                for pos in 0..len {
                    for b in 0..batch {
                        tiled.data_mut()[(pos * batch + b) * d..(pos * batch + b + 1) * d].copy_from_slice(pe.row(pos));
                    }
                }
                let pe = g.constant(tiled);
                g.add(x, pe)?
            }
        };
        let q = self.q.forward(g, store, x)?;
        let k = self.k.forward(g, store, x)?;
        let v = self.v.forward(g, store, x)?;
        let heads = self.heads;
        let dh = d / heads;
        // group[c, h] = 1 when column c belongs to head h
        let mut group = Tensor::zeros(d, heads);
        for c in 0..d {
            group.set(c, c / dh, 1.0);
        }
        let spread = g.constant(group.transpose());
        let group = g.constant(group);
        let scale = 1.0 / (dh as f64).sqrt();

        // Key and value blocks of position j, tiled so every query row lines
        // up with the key of its own sequence.
        let mut scores = Vec::with_capacity(len);
        let mut values = Vec::with_capacity(len);
        for j in 0..len {
            let kj = g.slice_rows(k, j * batch, batch)?;
            let kt = g.concat_rows(&vec![kj; len])?;
            let vj = g.slice_rows(v, j * batch, batch)?;
            values.push(g.concat_rows(&vec![vj; len])?);
            let prod = g.mul(q, kt)?;
            let s = g.matmul(prod, group)?;
            scores.push(g.scale(s, scale));
        }
        let mut weights = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = scores.iter().map(|&s| g.slice_cols(s, h, 1)).collect::<Result<Vec<_>>>()?;
            let sh = g.concat_cols(&cols)?;
            weights.push(g.softmax(sh, Axis::Row));
        }
        let mut out = None;
        for (j, &vt) in values.iter().enumerate() {
            let cols = weights.iter().map(|&w| g.slice_cols(w, j, 1)).collect::<Result<Vec<_>>>()?;
            let wj = g.concat_cols(&cols)?;
            let wj = g.matmul(wj, spread)?;
            let term = g.mul(wj, vt)?;
            out = Some(match out {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        let joined = out.expect("sequence length is positive");
        self.out.forward(g, store, joined)
    }
}

/// `z = σ(x W_z + s U_z + b_z)`, `r = σ(x W_r + s U_r + b_r)`,
/// `h = tanh(x W_h + (r ⊙ s) U_h + b_h)`, `s' = (1 - z) ⊙ s + z ⊙ h`.
#[derive(Clone, Debug)]
pub struct GruCell {
    w: [ParamId; 3],
    u: [ParamId; 3],
    b: [ParamId; 3],
    input: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for gate in ["z", "r", "h"] {
            w.push(store.add_uniform(&format!("{name}.w_{gate}"), input, hidden, input, rng)?);
            u.push(store.add_uniform(&format!("{name}.u_{gate}"), hidden, hidden, hidden, rng)?);
            b.push(store.add(&format!("{name}.b_{gate}"), Tensor::zeros(1, hidden))?);
        }
        let arr = |v: Vec<ParamId>| [v[0], v[1], v[2]];
        Ok(Self { w: arr(w), u: arr(u), b: arr(b), input, hidden })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    fn gate(&self, g: &mut Graph, store: &ParamStore, i: usize, x: Var, s: Var) -> Result<Var> {
        let w = g.param(store, self.w[i]);
        let u = g.param(store, self.u[i]);
        let b = g.param(store, self.b[i]);
        let xw = g.matmul(x, w)?;
        let su = g.matmul(s, u)?;
        let sum = g.add(xw, su)?;
        g.add(sum, b)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, s_prev: Var, x: Var) -> Result<Var> {
        let z = self.gate(g, store, 0, x, s_prev)?;
        let z = g.sigmoid(z);
        let r = self.gate(g, store, 1, x, s_prev)?;
        let r = g.sigmoid(r);
        let rs = g.mul(r, s_prev)?;
        let h = self.gate(g, store, 2, x, rs)?;
        let h = g.tanh(h);
        // s' = s + z ⊙ (h - s)
        let diff = g.sub(h, s_prev)?;
        let step = g.mul(z, diff)?;
        g.add(s_prev, step)
    }
}

/// Single-direction LSTM with fused gates in the order input, forget, cell,
/// output.
#[derive(Clone, Debug)]
pub struct Lstm {
    w: ParamId,
    u: ParamId,
    b: ParamId,
    hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let w = store.add_uniform(&format!("{name}.w"), input, 4 * hidden, input, rng)?;
        let u = store.add_uniform(&format!("{name}.u"), hidden, 4 * hidden, hidden, rng)?;
        let mut bias = Tensor::zeros(1, 4 * hidden);
        for j in hidden..2 * hidden {
            bias.set(0, j, 1.0);
        }
        let b = store.add(&format!("{name}.b"), bias)?;
        Ok(Self { w, u, b, hidden })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Runs over the rows of `x` in the given order (reversed when
    /// `reverse`) and returns the hidden state at each input position, so row
    /// `t` of the result always corresponds to row `t` of `x`.
    pub fn run(&self, g: &mut Graph, store: &ParamStore, x: Var, reverse: bool) -> Result<Var> {
        self.run_batched(g, store, x, 1, reverse)
    }

    /// Batched [`run`](Self::run) over `batch` independent sequences stacked
    /// position-major: row `t * batch + b` is step `t` of sequence `b`.
    pub fn run_batched(&self, g: &mut Graph, store: &ParamStore, x: Var, batch: usize, reverse: bool) -> Result<Var> {
        let rows = g.shape(x).0;
        if batch == 0 || rows % batch != 0 {
            return Err(NeuralError::InvalidArgument {
                op: "lstm",
                detail: format!("{rows} rows do not split into batches of {batch}"),
            });
        }
        let len = rows / batch;
        let w = g.param(store, self.w);
        let u = g.param(store, self.u);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, w)?;
        let hd = self.hidden;
        let mut h = g.constant(Tensor::zeros(batch, hd));
        let mut c = g.constant(Tensor::zeros(batch, hd));
        let mut states = vec![h; len];
        let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
        for t in order {
            let xt = g.slice_rows(xw, t * batch, batch)?;
            let hu = g.matmul(h, u)?;
            let pre = g.add(xt, hu)?;
            let pre = g.add(pre, b)?;
            let i_gate = g.slice_cols(pre, 0, hd)?;
            let i_gate = g.sigmoid(i_gate);
            let f_gate = g.slice_cols(pre, hd, hd)?;
            let f_gate = g.sigmoid(f_gate);
            let cand = g.slice_cols(pre, 2 * hd, hd)?;
            let cand = g.tanh(cand);
            let o_gate = g.slice_cols(pre, 3 * hd, hd)?;
            let o_gate = g.sigmoid(o_gate);
            let keep = g.mul(f_gate, c)?;
            let write = g.mul(i_gate, cand)?;
            c = g.add(keep, write)?;
            let tc = g.tanh(c);
            h = g.mul(o_gate, tc)?;
            states[t] = h;
        }
        g.concat_rows(&states)
    }
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    forward: Lstm,
    backward: Lstm,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            forward: Lstm::new(store, &format!("{name}.fwd"), input, hidden, rng)?,
            backward: Lstm::new(store, &format!("{name}.bwd"), input, hidden, rng)?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    /// The same parameters with the two directions exchanged.
    pub fn swapped(&self) -> Self {
        Self { forward: self.backward.clone(), backward: self.forward.clone() }
    }

    /// Returns `(H_f, H_b)`, each `seq x hidden`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        if g.shape(x).0 == 0 {
            return Err(NeuralError::InvalidArgument { op: "bilstm", detail: "empty sequence".into() });
        }
        let hf = self.forward.run(g, store, x, false)?;
        let hb = self.backward.run(g, store, x, true)?;
        Ok((hf, hb))
    }

    /// Batched [`forward`](Self::forward) over position-major stacked rows.
    pub fn forward_batched(&self, g: &mut Graph, store: &ParamStore, x: Var, batch: usize) -> Result<(Var, Var)> {
        if g.shape(x).0 == 0 {
            return Err(NeuralError::InvalidArgument { op: "bilstm", detail: "empty sequence".into() });
        }
        let hf = self.forward.run_batched(g, store, x, batch, false)?;
        let hb = self.backward.run_batched(g, store, x, batch, true)?;
        Ok((hf, hb))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn pe_at_position_zero_alternates() {
        let pe = sinusoidal_encoding(3, 8);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((pe.get(1, 0) - 1f64.sin()).abs() < 1e-15);
        assert!((pe.get(1, 3) - (1.0 / 10000f64.powf(2.0 / 8.0)).cos()).abs() < 1e-15);
    }

    #[test]
    fn attention_rejects_indivisible_dims() {
        let mut store = ParamStore::new();
        assert!(MultiHeadAttention::new(&mut store, "a", 6, 4, Positional::None, &mut rng()).is_err());
    }

    #[test]
    fn attention_single_row_is_projected_value() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let att = MultiHeadAttention::new(&mut store, "a", 8, 4, Positional::None, &mut r).unwrap();
        let x = random_tensor(1, 8, &mut r);
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let out = att.forward(&mut g, &store, xv).unwrap();
        let v = att.v.forward(&mut g, &store, xv).unwrap();
        let expect = att.out.forward(&mut g, &store, v).unwrap();
        assert!(g.value(out).zip_map(g.value(expect), |a, b| a - b).max_abs() < 1e-12);
    }

    #[test]
    fn attention_without_positions_is_permutation_equivariant() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let att = MultiHeadAttention::new(&mut store, "a", 8, 4, Positional::None, &mut r).unwrap();
        let x = random_tensor(5, 8, &mut r);
        let perm = [3, 0, 4, 1, 2];
        let mut g = Graph::inference();
        let xv = g.constant(x);
        let px = g.gather_rows(xv, &perm).unwrap();
        let out = att.forward(&mut g, &store, xv).unwrap();
        let pout = att.forward(&mut g, &store, px).unwrap();
        let permuted = g.gather_rows(out, &perm).unwrap();
        assert!(g.value(pout).zip_map(g.value(permuted), |a, b| a - b).max_abs() < 1e-9);
    }

    #[test]
    fn sinusoidal_attention_is_order_sensitive() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let att = MultiHeadAttention::new(&mut store, "a", 8, 4, Positional::Sinusoidal, &mut r).unwrap();
        let x = random_tensor(3, 8, &mut r);
        let mut g = Graph::inference();
        let xv = g.constant(x);
        let px = g.gather_rows(xv, &[2, 1, 0]).unwrap();
        let out = att.forward(&mut g, &store, xv).unwrap();
        let pout = att.forward(&mut g, &store, px).unwrap();
        let permuted = g.gather_rows(out, &[2, 1, 0]).unwrap();
        assert!(g.value(pout).zip_map(g.value(permuted), |a, b| a - b).max_abs() > 1e-6);
    }

    fn zero_all(store: &mut ParamStore) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.value_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    #[test]
    fn gru_with_zero_params_halves_state() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 3, 4, &mut r).unwrap();
        zero_all(&mut store);
        let mut g = Graph::inference();
        let s = g.constant(Tensor::row_vector(vec![1.0, -2.0, 0.5, 4.0]));
        let x = g.constant(Tensor::row_vector(vec![0.3, 0.1, -0.7]));
        let out = cell.forward(&mut g, &store, s, x).unwrap();
        assert_eq!(g.value(out).data(), &[0.5, -1.0, 0.25, 2.0]);

        let s0 = g.constant(Tensor::zeros(1, 4));
        let out = cell.forward(&mut g, &store, s0, x).unwrap();
        assert_eq!(g.value(out).data(), &[0.0; 4]);
    }

    #[test]
    fn gru_rejects_wrong_input_width() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 3, 4, &mut r).unwrap();
        let mut g = Graph::inference();
        let s = g.constant(Tensor::zeros(1, 4));
        let x = g.constant(Tensor::zeros(1, 2));
        assert!(cell.forward(&mut g, &store, s, x).is_err());
    }

    #[test]
    fn lstm_forget_bias_is_one() {
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 2, 3, &mut rng()).unwrap();
        assert_eq!(store.value(lstm.b).data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn bilstm_single_step_and_reversal_symmetry() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let bi = BiLstm::new(&mut store, "bi", 4, 5, &mut r).unwrap();
        let x = random_tensor(4, 4, &mut r);
        let mut g = Graph::inference();
        let xv = g.constant(x);
        let (hf, hb) = bi.forward(&mut g, &store, xv).unwrap();
        let rev = g.gather_rows(xv, &[3, 2, 1, 0]).unwrap();
        let (hf_rev, hb_rev) = bi.swapped().forward(&mut g, &store, rev).unwrap();
        let hb_reordered = g.gather_rows(hb, &[3, 2, 1, 0]).unwrap();
        let hf_reordered = g.gather_rows(hf, &[3, 2, 1, 0]).unwrap();
        assert!(g.value(hf_rev).zip_map(g.value(hb_reordered), |a, b| a - b).max_abs() < 1e-12);
        assert!(g.value(hb_rev).zip_map(g.value(hf_reordered), |a, b| a - b).max_abs() < 1e-12);

        let one = g.gather_rows(xv, &[0]).unwrap();
        let (f1, b1) = bi.forward(&mut g, &store, one).unwrap();
        assert_eq!(g.shape(f1), (1, 5));
        assert_eq!(g.shape(b1), (1, 5));
        let empty = g.constant(Tensor::zeros(0, 4));
        assert!(bi.forward(&mut g, &store, empty).is_err());
    }
}
