//! Model building blocks: named parameter stores, linear layers, pre-LN
//! transformer blocks, sinusoidal embeddings, and AdamW.
//!
//! A [`ParamStore`] owns tensors by name with a per-parameter `trainable`
//! flag. Binding a parameter onto a tape ([`ParamStore::var`]) is memoized,
//! so every use of a parameter in one forward pass shares a single node and
//! therefore a single gradient buffer; frozen parameters bind as constants
//! and provably receive no gradient.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

static STORE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PRef(pub usize);

struct ParamEntry {
    name: String,
    tensor: Tensor,
    trainable: bool,
}

/// Named, flat collection of model parameters.
pub struct ParamStore {
    uid: u64,
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self { uid: STORE_COUNTER.fetch_add(1, Ordering::Relaxed), entries: Vec::new() }
    }

    /// Register a trainable parameter. Names must be unique.
    pub fn add(&mut self, name: &str, tensor: Tensor) -> PRef {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry { name: name.to_string(), tensor, trainable: true });
        PRef(self.entries.len() - 1)
    }

    pub fn get(&self, p: PRef) -> &Tensor {
        &self.entries[p.0].tensor
    }

    pub fn set(&mut self, p: PRef, t: Tensor) {
        assert_eq!(self.entries[p.0].tensor.shape(), t.shape(), "parameter shape change");
        self.entries[p.0].tensor = t;
    }

    pub fn name(&self, p: PRef) -> &str {
        &self.entries[p.0].name
    }

    pub fn find(&self, name: &str) -> Option<PRef> {
        self.entries.iter().position(|e| e.name == name).map(PRef)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn refs(&self) -> impl Iterator<Item = PRef> + '_ {
        (0..self.entries.len()).map(PRef)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, bool)> + '_ {
        self.entries.iter().map(|e| (e.name.as_str(), &e.tensor, e.trainable))
    }

    pub fn trainable(&self, p: PRef) -> bool {
        self.entries[p.0].trainable
    }

    pub fn set_trainable(&mut self, p: PRef, on: bool) {
        self.entries[p.0].trainable = on;
    }

    pub fn set_all_trainable(&mut self, on: bool) {
        for e in &mut self.entries {
            e.trainable = on;
        }
    }

    /// Total scalar count across all parameters.
    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Scalar count across trainable parameters only.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.len()).sum()
    }

    /// Sorted (name, shape) pairs of trainable parameters — used to compare
    /// trainable sets across stores.
    pub fn trainable_signature(&self) -> Vec<(String, (usize, usize))> {
        let mut sig: Vec<_> = self
            .entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| (e.name.clone(), e.tensor.shape()))
            .collect();
        sig.sort();
        sig
    }

    /// Bind a parameter onto a tape (memoized per tape). Trainable
    /// parameters become differentiable leaves; frozen ones constants.
    pub fn var(&self, tape: &mut Tape, p: PRef) -> Var {
        let e = &self.entries[p.0];
        tape.leaf_keyed((self.uid, p.0), &e.tensor, e.trainable)
    }

    /// Gradient accumulated for `p` on `tape`, if any.
    pub fn grad<'t>(&self, tape: &'t Tape, p: PRef) -> Option<&'t [f64]> {
        tape.grad_keyed((self.uid, p.0))
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    /// Clones get a fresh identity so two stores never collide in a tape's
    /// memoization table.
    fn clone(&self) -> Self {
        Self {
            uid: STORE_COUNTER.fetch_add(1, Ordering::Relaxed),
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    tensor: e.tensor.clone(),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }
}

/// Xavier-uniform initialized dense layer `y = x W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: PRef,
    pub b: PRef,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let lim = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut data = Vec::with_capacity(in_dim * out_dim);
        for _ in 0..in_dim * out_dim {
            data.push(rng.gen_range(-lim..lim));
        }
        let w = store.add(&format!("{name}.w"), Tensor::new(in_dim, out_dim, data));
        let b = store.add(&format!("{name}.b"), Tensor::zeros(1, out_dim));
        Self { w, b }
    }

    /// `x`: NxIn -> NxOut.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = store.var(tape, self.w);
        let b = store.var(tape, self.b);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

/// Pre-LN transformer block with a single attention head and a GELU MLP.
#[derive(Debug, Clone, Copy)]
pub struct TransformerBlock {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ff1: Linear,
    ff2: Linear,
    dim: usize,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        ff_mult: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.attn.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.attn.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.attn.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.attn.o"), dim, dim, rng),
            ff1: Linear::new(store, &format!("{name}.ff.in"), dim, dim * ff_mult, rng),
            ff2: Linear::new(store, &format!("{name}.ff.out"), dim * ff_mult, dim, rng),
            dim,
        }
    }

    /// `x`: TxDim tokens, full self-attention over all T tokens.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let h = tape.layer_norm(x, 1e-5);
        let q = self.q.forward(tape, store, h);
        let k = self.k.forward(tape, store, h);
        let v = self.v.forward(tape, store, h);
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt);
        let scaled = tape.mul_scalar(scores, 1.0 / (self.dim as f64).sqrt());
        let attn = tape.softmax(scaled);
        let mixed = tape.matmul(attn, v);
        let att_out = self.o.forward(tape, store, mixed);
        let x1 = tape.add(x, att_out);

        let h2 = tape.layer_norm(x1, 1e-5);
        let f1 = self.ff1.forward(tape, store, h2);
        let g = tape.gelu(f1);
        let f2 = self.ff2.forward(tape, store, g);
        tape.add(x1, f2)
    }
}

/// Classic sinusoidal embedding rows for arbitrary real positions.
pub fn sinusoid_embedding(positions: &[f64], dim: usize) -> Tensor {
    assert!(dim >= 2 && dim % 2 == 0, "sinusoid dim must be even and >= 2");
    let mut data = Vec::with_capacity(positions.len() * dim);
    for &p in positions {
        for i in 0..dim / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data.push((p * freq).sin());
            data.push((p * freq).cos());
        }
    }
    Tensor::new(positions.len(), dim, data)
}

/// Decoupled-weight-decay Adam with optional global-norm gradient clipping.
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    t: u64,
    m: HashMap<usize, Vec<f64>>,
    v: HashMap<usize, Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            clip_norm: Some(5.0),
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// Apply one update from the gradients accumulated on `tape`.
    /// Parameters without a gradient (frozen or unused) are untouched.
    pub fn step(&mut self, store: &mut ParamStore, tape: &Tape) {
        let refs: Vec<PRef> = store.refs().collect();
        let mut grads: Vec<(PRef, Vec<f64>)> = Vec::new();
        for p in refs {
            if !store.trainable(p) {
                continue;
            }
            if let Some(g) = store.grad(tape, p) {
                grads.push((p, g.to_vec()));
            }
        }
        if grads.is_empty() {
            return;
        }
        if let Some(max_norm) = self.clip_norm {
            let norm: f64 = grads
                .iter()
                .flat_map(|(_, g)| g.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                let s = max_norm / norm;
                for (_, g) in &mut grads {
                    for v in g.iter_mut() {
                        *v *= s;
                    }
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (p, g) in grads {
            let n = g.len();
            let m = self.m.entry(p.0).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(p.0).or_insert_with(|| vec![0.0; n]);
            let mut w = store.get(p).clone();
            let wd = self.weight_decay;
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let cur = w.data()[i];
                w.data_mut()[i] = cur - self.lr * (mhat / (vhat.sqrt() + self.eps) + wd * cur);
            }
            store.set(p, w);
        }
    }
}

/// Finite-difference check of a loss against every element of every
/// trainable parameter in `store`. Returns the max relative error, same
/// formula as [`crate::tape::finite_diff_check`].
pub fn finite_diff_check_store<F>(f: &F, store: &ParamStore, h: f64) -> f64
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store);
    assert_eq!(tape.value(loss).shape(), (1, 1), "loss must be scalar");
    tape.backward(loss).expect("backward on scalar loss");

    let trainable: Vec<PRef> = store.refs().filter(|&p| store.trainable(p)).collect();
    let mut max_err: f64 = 0.0;
    for &p in &trainable {
        let analytic: Vec<f64> = match store.grad(&tape, p) {
            Some(g) => g.to_vec(),
            None => vec![0.0; store.get(p).len()],
        };
        for i in 0..store.get(p).len() {
            let eval = |delta: f64| -> f64 {
                let mut pert = store.clone();
                let mut t = pert.get(p).clone();
                t.data_mut()[i] += delta;
                pert.set(p, t);
                let mut tp = Tape::inference();
                let l = f(&mut tp, &pert);
                tp.value(l).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + 1e-8);
            max_err = max_err.max(err);
        }
    }
    max_err
}

/// Learning-rate warm-up: linear ramp over the first `warmup` steps, then
/// constant. `step` is 0-based.
pub fn warmup_scale(step: usize, warmup: usize) -> f64 {
    if warmup == 0 {
        1.0
    } else {
        ((step + 1) as f64 / warmup as f64).min(1.0)
    }
}

/// Convenience: loss value must be finite or training reports divergence.
pub fn check_finite_loss(loss: f64, stage: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numerical(format!("{stage}: loss diverged to {loss}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::DEFAULT_FD_STEP;
    use rand::SeedableRng;

    #[test]
    fn linear_forward_hand_case() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, "l", 2, 2, &mut rng);
        store.set(lin.w, Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]));
        store.set(lin.b, Tensor::row(vec![10.0, 20.0]));
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::row(vec![3.0, 4.0]));
        let y = lin.forward(&mut tape, &store, x);
        assert_eq!(tape.value(y).data(), &[13.0, 28.0]);
    }

    #[test]
    fn mlp_gradients_match_finite_difference() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l1 = Linear::new(&mut store, "l1", 3, 5, &mut rng);
        let l2 = Linear::new(&mut store, "l2", 5, 2, &mut rng);
        let x = Tensor::randn(4, 3, 1.0, &mut rng);
        let y = Tensor::randn(4, 2, 1.0, &mut rng);
        let f = move |t: &mut Tape, s: &ParamStore| {
            let xv = t.constant(&x);
            let yv = t.constant(&y);
            let h = l1.forward(t, s, xv);
            let g = t.gelu(h);
            let pred = l2.forward(t, s, g);
            t.mse(pred, yv)
        };
        assert!(finite_diff_check_store(&f, &store, DEFAULT_FD_STEP) < 1e-3);
    }

    #[test]
    fn transformer_block_gradients_match_finite_difference() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let block = TransformerBlock::new(&mut store, "b", 6, 2, &mut rng);
        let x = Tensor::randn(3, 6, 1.0, &mut rng);
        let w = Tensor::randn(3, 6, 1.0, &mut rng);
        let f = move |t: &mut Tape, s: &ParamStore| {
            let xv = t.constant(&x);
            let out = block.forward(t, s, xv);
            let wv = t.constant(&w);
            let m = t.mul(out, wv);
            t.sum(m)
        };
        assert!(finite_diff_check_store(&f, &store, DEFAULT_FD_STEP) < 1e-3);
    }

    #[test]
    fn frozen_params_receive_no_gradient_and_no_update() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lin = Linear::new(&mut store, "l", 2, 2, &mut rng);
        store.set_trainable(lin.w, false);
        let before = store.get(lin.w).clone();

        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::row(vec![1.0, 2.0]));
        let y = lin.forward(&mut tape, &store, x);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert!(store.grad(&tape, lin.w).is_none());
        assert!(store.grad(&tape, lin.b).is_some());

        let mut opt = AdamW::new(0.1);
        opt.step(&mut store, &tape);
        assert_eq!(store.get(lin.w).data(), before.data());
    }

    #[test]
    fn adamw_first_step_is_signed_unit_step() {
        // With constant gradient g, bias-corrected m/sqrt(v) = sign(g), so
        // the first update is lr * sign(g) (weight decay disabled).
        let mut store = ParamStore::new();
        let p = store.add("w", Tensor::row(vec![1.0, -2.0]));
        let mut tape = Tape::new();
        let v = store.var(&mut tape, p);
        let c = tape.constant(&Tensor::row(vec![3.0, -4.0]));
        let prod = tape.mul(v, c);
        let loss = tape.sum(prod); // grad = [3, -4]
        tape.backward(loss).unwrap();

        let mut opt = AdamW::new(0.5);
        opt.weight_decay = 0.0;
        opt.clip_norm = None;
        opt.step(&mut store, &tape);
        let w = store.get(p).data();
        assert!((w[0] - (1.0 - 0.5)).abs() < 1e-6, "w0 {}", w[0]);
        assert!((w[1] - (-2.0 + 0.5)).abs() < 1e-6, "w1 {}", w[1]);
    }

    #[test]
    fn adamw_updates_are_deterministic() {
        let run = || {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let lin = Linear::new(&mut store, "l", 3, 3, &mut rng);
            let mut opt = AdamW::new(0.01);
            for step in 0..5 {
                let mut tape = Tape::new();
                let x = tape.constant(&Tensor::full(2, 3, 0.1 * (step + 1) as f64));
                let y = lin.forward(&mut tape, &store, x);
                let target = tape.constant(&Tensor::zeros(2, 3));
                let loss = tape.mse(y, target);
                tape.backward(loss).unwrap();
                opt.step(&mut store, &tape);
            }
            store.get(lin.w).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sinusoid_embedding_basic_properties() {
        let pe = sinusoid_embedding(&[0.0, 1.0, 2.0], 8);
        assert_eq!(pe.shape(), (3, 8));
        // Position 0: sin terms 0, cos terms 1.
        for i in 0..4 {
            assert_eq!(pe.at(0, 2 * i), 0.0);
            assert_eq!(pe.at(0, 2 * i + 1), 1.0);
        }
        for &v in pe.data() {
            assert!((-1.0..=1.0).contains(&v));
        }
        assert_ne!(pe.row_slice(1), pe.row_slice(2));
    }

    #[test]
    fn trainable_signature_compares_sets() {
        let mut a = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        Linear::new(&mut a, "x", 2, 3, &mut rng);
        let mut b = a.clone();
        assert_eq!(a.trainable_signature(), b.trainable_signature());
        b.set_trainable(PRef(0), false);
        assert_ne!(a.trainable_signature(), b.trainable_signature());
    }

    #[test]
    fn warmup_scale_ramps_then_saturates() {
        assert_eq!(warmup_scale(0, 4), 0.25);
        assert_eq!(warmup_scale(3, 4), 1.0);
        assert_eq!(warmup_scale(100, 4), 1.0);
        assert_eq!(warmup_scale(0, 0), 1.0);
    }
}
