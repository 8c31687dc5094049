//! Reverse-mode autodiff on an arena tape.
//!
//! Ops append nodes to a `Vec`; a [`Var`] is an index into it. Values are
//! computed eagerly on record; [`Tape::backward`] replays the arena in
//! reverse, accumulating vector-Jacobian products into each node's grad
//! buffer. Gradients accumulate across repeated `backward` calls — call
//! [`Tape::zero_grads`] (or build a fresh tape per step, the usual pattern
//! here) to reset.
//!
//! Leaves can be keyed so that model parameters bind to one node per tape
//! regardless of how many times a forward pass touches them (see
//! [`Tape::leaf_keyed`]); `nn::ParamStore` builds on that.

use crate::tensor::{gelu_grad_scalar, gelu_scalar, Tensor};
use crate::{Error, Result};
use std::collections::HashMap;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Default step size for [`finite_diff_check`].
pub const DEFAULT_FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Broadcast-add a 1xC row vector to every row.
    AddRow(Var, Var),
    MulScalar(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    LayerNorm(Var, f64),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Var, Var),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    MeanRows(Var),
    RepeatRows(Var, usize),
    TileCols(Var, usize),
    NormalizeRows(Var, f64),
    /// Style-content cross normalization: per-row stats of the first input
    /// normalize the second, scaled by gamma and added back to the first.
    CrossFuse { fc: Var, fs: Var, gamma: f64, eta: f64 },
    /// Symmetric InfoNCE over a square similarity matrix at temperature tau.
    InfoNce(Var, f64),
    /// Mean negative log-likelihood of per-row target classes.
    CrossEntropy(Var, Vec<usize>),
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

/// Recording arena. One tape per forward/backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    keyed: HashMap<(u64, usize), Var>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), keyed: HashMap::new(), grad_enabled: true }
    }

    /// A tape that records no gradient requirements: every leaf is treated
    /// as constant, so forwards are cheap and `backward` is pointless.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), keyed: HashMap::new(), grad_enabled: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, grad: None, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v`, if any was produced by `backward`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Record a leaf holding a copy of `t`.
    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        let rg = requires_grad && self.grad_enabled;
        self.push(Op::Leaf, t.clone(), rg)
    }

    /// Constant leaf (never differentiated).
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t, false)
    }

    /// Leaf memoized under `key`: the first call records the node, later
    /// calls return the same [`Var`]. This is how a parameter used in many
    /// places accumulates one gradient buffer.
    pub fn leaf_keyed(&mut self, key: (u64, usize), t: &Tensor, requires_grad: bool) -> Var {
        if let Some(&v) = self.keyed.get(&key) {
            return v;
        }
        let v = self.leaf(t, requires_grad);
        self.keyed.insert(key, v);
        v
    }

    pub fn grad_keyed(&self, key: (u64, usize)) -> Option<&[f64]> {
        self.keyed.get(&key).and_then(|&v| self.grad(v))
    }

    // ---- op recording -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b)).expect("tape matmul shapes");
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Matmul(a, b), v, rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(Op::Transpose(a), v, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b)).expect("tape add shapes");
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add(a, b), v, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b)).expect("tape sub shapes");
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Sub(a, b), v, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).mul(self.value(b)).expect("tape mul shapes");
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Mul(a, b), v, rg)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.value(a).shape();
        assert_eq!(self.value(row).shape(), (1, c), "add_row: row must be 1x{c}");
        let mut out = self.value(a).clone();
        for i in 0..r {
            for j in 0..c {
                let v = out.at(i, j) + self.value(row).at(0, j);
                out.set(i, j, v);
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(Op::AddRow(a, row), out, rg)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(Op::MulScalar(a, s), v, rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(Op::AddScalar(a), v, rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu_scalar);
        let rg = self.rg(a);
        self.push(Op::Gelu(a), v, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(Op::Exp(a), v, rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(Op::Log(a), v, rg)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(Op::Clamp(a, lo, hi), v, rg)
    }

    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a).layer_norm_rows(eps);
        let rg = self.rg(a);
        self.push(Op::LayerNorm(a, eps), v, rg)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = self.value(a).softmax_rows();
        let rg = self.rg(a);
        self.push(Op::Softmax(a), v, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::Sum(a), v, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(a);
        self.push(Op::Mean(a), v, rg)
    }

    pub fn mse(&mut self, a: Var, target: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mse(self.value(target)).expect("tape mse shapes"));
        let rg = self.rg(a) || self.rg(target);
        self.push(Op::Mse(a, target), v, rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).gather_rows(idx);
        let rg = self.rg(a);
        self.push(Op::GatherRows(a, idx.to_vec()), v, rg)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).concat_rows(self.value(b)).expect("tape concat shapes");
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::ConcatRows(a, b), v, rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_rows(start, end);
        let rg = self.rg(a);
        self.push(Op::SliceRows(a, start, end), v, rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_cols(start, end);
        let rg = self.rg(a);
        self.push(Op::SliceCols(a, start, end), v, rg)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_rows();
        let rg = self.rg(a);
        self.push(Op::MeanRows(a), v, rg)
    }

    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let v = self.value(a).repeat_rows(times);
        let rg = self.rg(a);
        self.push(Op::RepeatRows(a, times), v, rg)
    }

    pub fn tile_cols(&mut self, a: Var, new_cols: usize) -> Var {
        let v = self.value(a).tile_cols(new_cols);
        let rg = self.rg(a);
        self.push(Op::TileCols(a, new_cols), v, rg)
    }

    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a).normalize_rows(eps);
        let rg = self.rg(a);
        self.push(Op::NormalizeRows(a, eps), v, rg)
    }

    /// `out = fc + gamma * (fs - mu_c) / sqrt(var_c + eta)`, with `mu_c`,
    /// `var_c` the per-row mean/biased variance of `fc`. At `gamma == 0`
    /// the output is `fc` bit-exactly (no arithmetic is applied), which the
    /// sampling path relies on for exact no-style reproduction.
    pub fn cross_fuse(&mut self, fc: Var, fs: Var, gamma: f64, eta: f64) -> Var {
        let v = crate::fusion::fuse_raw(self.value(fc), self.value(fs), gamma, eta)
            .expect("tape cross_fuse shapes");
        let rg = self.rg(fc) || self.rg(fs);
        self.push(Op::CrossFuse { fc, fs, gamma, eta }, v, rg)
    }

    /// Symmetric contrastive loss over a BxB similarity matrix: mean over
    /// rows and columns of the negative log-probability of the diagonal at
    /// temperature `tau`. A 1x1 matrix yields exactly 0.
    pub fn info_nce(&mut self, sim: Var, tau: f64) -> Var {
        let s = self.value(sim);
        assert_eq!(s.rows(), s.cols(), "info_nce: similarity matrix must be square");
        assert!(tau > 0.0, "info_nce: tau must be positive");
        let v = Tensor::scalar(info_nce_value(s, tau));
        let rg = self.rg(sim);
        self.push(Op::InfoNce(sim, tau), v, rg)
    }

    /// Mean cross-entropy of row-wise softmax against integer targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len(), "cross_entropy: one target per row");
        let p = l.softmax_rows();
        let mut loss = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            assert!(y < l.cols(), "cross_entropy: target out of range");
            loss -= p.at(r, y).max(1e-300).ln();
        }
        let v = Tensor::scalar(loss / targets.len() as f64);
        let rg = self.rg(logits);
        self.push(Op::CrossEntropy(logits, targets.to_vec()), v, rg)
    }

    // ---- backward ------------------------------------------------------

    fn accum(&mut self, v: Var, g: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(buf) => {
                for (b, x) in buf.iter_mut().zip(&g) {
                    *b += x;
                }
            }
            None => node.grad = Some(g),
        }
    }

    /// Reverse sweep from a scalar loss. Propagates through per-call flow
    /// buffers, then folds them into each node's persistent grad, so
    /// repeated calls accumulate gradients without re-propagating earlier
    /// seeds.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.rg(loss) {
            // Loss does not depend on any differentiable leaf; nothing to do.
            return Ok(());
        }
        let mut flow: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        flow[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || flow[i].is_none() {
                continue;
            }
            let g = flow[i].as_ref().unwrap().clone();
            let op = self.nodes[i].op.clone();
            for (var, grad) in self.vjp(i, &op, &g) {
                if !self.rg(var) {
                    continue;
                }
                match &mut flow[var.0] {
                    Some(buf) => {
                        for (b, x) in buf.iter_mut().zip(&grad) {
                            *b += x;
                        }
                    }
                    slot => *slot = Some(grad),
                }
            }
        }
        for (i, f) in flow.into_iter().enumerate() {
            if let Some(g) = f {
                self.accum(Var(i), g);
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` under upstream gradient `g`.
    fn vjp(&self, i: usize, op: &Op, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let out = &self.nodes[i].value;
        let mut res: Vec<(Var, Vec<f64>)> = Vec::new();
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let gt = Tensor::new(out.rows(), out.cols(), g.to_vec());
                if self.rg(*a) {
                    let da = gt.matmul(&bv.transpose()).unwrap();
                    res.push((*a, da.data().to_vec()));
                }
                if self.rg(*b) {
                    let db = av.transpose().matmul(&gt).unwrap();
                    res.push((*b, db.data().to_vec()));
                }
            }
            Op::Transpose(a) => {
                if self.rg(*a) {
                    let gt = Tensor::new(out.rows(), out.cols(), g.to_vec());
                    res.push((*a, gt.transpose().data().to_vec()));
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    res.push((*a, g.to_vec()));
                }
                if self.rg(*b) {
                    res.push((*b, g.to_vec()));
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    res.push((*a, g.to_vec()));
                }
                if self.rg(*b) {
                    res.push((*b, g.iter().map(|x| -x).collect()));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let bv = self.value(*b).data();
                    res.push((*a, g.iter().zip(bv).map(|(x, y)| x * y).collect()));
                }
                if self.rg(*b) {
                    let av = self.value(*a).data();
                    res.push((*b, g.iter().zip(av).map(|(x, y)| x * y).collect()));
                }
            }
            Op::AddRow(a, row) => {
                let (r, c) = out.shape();
                if self.rg(*a) {
                    res.push((*a, g.to_vec()));
                }
                if self.rg(*row) {
                    let mut dr = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            dr[j] += g[i * c + j];
                        }
                    }
                    res.push((*row, dr));
                }
            }
            Op::MulScalar(a, s) => {
                if self.rg(*a) {
                    res.push((*a, g.iter().map(|x| x * s).collect()));
                }
            }
            Op::AddScalar(a) => {
                if self.rg(*a) {
                    res.push((*a, g.to_vec()));
                }
            }
            Op::Gelu(a) => {
                if self.rg(*a) {
                    let xv = self.value(*a).data();
                    res.push((
                        *a,
                        g.iter().zip(xv).map(|(x, &v)| x * gelu_grad_scalar(v)).collect(),
                    ));
                }
            }
            Op::Exp(a) => {
                if self.rg(*a) {
                    res.push((*a, g.iter().zip(out.data()).map(|(x, y)| x * y).collect()));
                }
            }
            Op::Log(a) => {
                if self.rg(*a) {
                    let xv = self.value(*a).data();
                    res.push((*a, g.iter().zip(xv).map(|(x, v)| x / v).collect()));
                }
            }
            Op::Clamp(a, lo, hi) => {
                if self.rg(*a) {
                    let xv = self.value(*a).data();
                    res.push((
                        *a,
                        g.iter()
                            .zip(xv)
                            .map(|(x, &v)| if v >= *lo && v <= *hi { *x } else { 0.0 })
                            .collect(),
                    ));
                }
            }
            Op::LayerNorm(a, eps) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    let (r, c) = x.shape();
                    let d = c as f64;
                    let mut dx = vec![0.0; r * c];
                    for row in 0..r {
                        let xr = x.row_slice(row);
                        let yr = out.row_slice(row);
                        let gr = &g[row * c..(row + 1) * c];
                        let mu = xr.iter().sum::<f64>() / d;
                        let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
                        let s = (var + eps).sqrt();
                        let gmean = gr.iter().sum::<f64>() / d;
                        let gymean =
                            gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d;
                        for j in 0..c {
                            dx[row * c + j] = (gr[j] - gmean - yr[j] * gymean) / s;
                        }
                    }
                    res.push((*a, dx));
                }
            }
            Op::Softmax(a) => {
                if self.rg(*a) {
                    let (r, c) = out.shape();
                    let mut dx = vec![0.0; r * c];
                    for row in 0..r {
                        let yr = out.row_slice(row);
                        let gr = &g[row * c..(row + 1) * c];
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            dx[row * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    res.push((*a, dx));
                }
            }
            Op::Sum(a) => {
                if self.rg(*a) {
                    let n = self.value(*a).len();
                    res.push((*a, vec![g[0]; n]));
                }
            }
            Op::Mean(a) => {
                if self.rg(*a) {
                    let n = self.value(*a).len();
                    res.push((*a, vec![g[0] / n as f64; n]));
                }
            }
            Op::Mse(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let n = av.len() as f64;
                if self.rg(*a) {
                    res.push((
                        *a,
                        av.iter().zip(bv).map(|(&x, &y)| g[0] * 2.0 * (x - y) / n).collect(),
                    ));
                }
                if self.rg(*b) {
                    res.push((
                        *b,
                        av.iter().zip(bv).map(|(&x, &y)| -g[0] * 2.0 * (x - y) / n).collect(),
                    ));
                }
            }
            Op::GatherRows(a, idx) => {
                if self.rg(*a) {
                    let src = self.value(*a);
                    let c = src.cols();
                    let mut dx = vec![0.0; src.len()];
                    for (m, &r) in idx.iter().enumerate() {
                        for j in 0..c {
                            dx[r * c + j] += g[m * c + j];
                        }
                    }
                    res.push((*a, dx));
                }
            }
            Op::ConcatRows(a, b) => {
                let na = self.value(*a).len();
                if self.rg(*a) {
                    res.push((*a, g[..na].to_vec()));
                }
                if self.rg(*b) {
                    res.push((*b, g[na..].to_vec()));
                }
            }
            Op::SliceRows(a, start, _end) => {
                if self.rg(*a) {
                    let src = self.value(*a);
                    let c = src.cols();
                    let mut dx = vec![0.0; src.len()];
                    dx[start * c..start * c + g.len()].copy_from_slice(g);
                    res.push((*a, dx));
                }
            }
            Op::SliceCols(a, start, end) => {
                if self.rg(*a) {
                    let src = self.value(*a);
                    let (r, c) = src.shape();
                    let w = end - start;
                    let mut dx = vec![0.0; r * c];
                    for row in 0..r {
                        for j in 0..w {
                            dx[row * c + start + j] = g[row * w + j];
                        }
                    }
                    res.push((*a, dx));
                }
            }
            Op::MeanRows(a) => {
                if self.rg(*a) {
                    let (r, c) = self.value(*a).shape();
                    let mut dx = vec![0.0; r * c];
                    for row in 0..r {
                        for j in 0..c {
                            dx[row * c + j] = g[j] / r as f64;
                        }
                    }
                    res.push((*a, dx));
                }
            }
            Op::RepeatRows(a, times) => {
                if self.rg(*a) {
                    let n = self.value(*a).len();
                    let mut dx = vec![0.0; n];
                    for t in 0..*times {
                        for j in 0..n {
                            dx[j] += g[t * n + j];
                        }
                    }
                    res.push((*a, dx));
                }
            }
            Op::TileCols(a, new_cols) => {
                if self.rg(*a) {
                    let (r, c) = self.value(*a).shape();
                    let mut dx = vec![0.0; r * c];
                    for row in 0..r {
                        for k in 0..*new_cols {
                            dx[row * c + k % c] += g[row * new_cols + k];
                        }
                    }
                    res.push((*a, dx));
                }
            }
            Op::NormalizeRows(a, eps) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    let (r, c) = x.shape();
                    let mut dx = vec![0.0; r * c];
                    for row in 0..r {
                        let xr = x.row_slice(row);
                        let yr = out.row_slice(row);
                        let gr = &g[row * c..(row + 1) * c];
                        let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if n > *eps {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for j in 0..c {
                                dx[row * c + j] = (gr[j] - yr[j] * dot) / n;
                            }
                        } else {
                            // Forward was the identity on this row.
                            dx[row * c..(row + 1) * c].copy_from_slice(gr);
                        }
                    }
                    res.push((*a, dx));
                }
            }
            Op::CrossFuse { fc, fs, gamma, eta } => {
                let fcv = self.value(*fc);
                let fsv = self.value(*fs);
                let (r, c) = fcv.shape();
                let d = c as f64;
                if *gamma == 0.0 {
                    // Forward was `fc` verbatim; style had no influence.
                    if self.rg(*fc) {
                        res.push((*fc, g.to_vec()));
                    }
                    if self.rg(*fs) {
                        res.push((*fs, vec![0.0; fsv.len()]));
                    }
                } else {
                    let mut dfc = vec![0.0; r * c];
                    let mut dfs = vec![0.0; r * c];
                    for row in 0..r {
                        let fcr = fcv.row_slice(row);
                        let fsr = fsv.row_slice(row);
                        let gr = &g[row * c..(row + 1) * c];
                        let mu = fcr.iter().sum::<f64>() / d;
                        let var = fcr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
                        let s = (var + eta).sqrt();
                        let gsum: f64 = gr.iter().sum();
                        let gdot: f64 =
                            gr.iter().zip(fsr).map(|(&gj, &fj)| gj * (fj - mu)).sum();
                        for j in 0..c {
                            dfs[row * c + j] = gamma * gr[j] / s;
                            dfc[row * c + j] = gr[j]
                                - gamma * gsum / (d * s)
                                - gamma * (fcr[j] - mu) * gdot / (d * s * s * s);
                        }
                    }
                    if self.rg(*fc) {
                        res.push((*fc, dfc));
                    }
                    if self.rg(*fs) {
                        res.push((*fs, dfs));
                    }
                }
            }
            Op::InfoNce(sim, tau) => {
                if self.rg(*sim) {
                    let s = self.value(*sim);
                    let b = s.rows();
                    let scaled = s.scale(1.0 / tau);
                    let p_row = scaled.softmax_rows();
                    let p_col = scaled.transpose().softmax_rows().transpose();
                    let coef = g[0] / (2.0 * b as f64 * tau);
                    let mut dx = vec![0.0; b * b];
                    for i in 0..b {
                        for j in 0..b {
                            let delta = if i == j { 1.0 } else { 0.0 };
                            dx[i * b + j] = coef
                                * ((p_row.at(i, j) - delta) + (p_col.at(i, j) - delta));
                        }
                    }
                    res.push((*sim, dx));
                }
            }
            Op::CrossEntropy(logits, targets) => {
                if self.rg(*logits) {
                    let l = self.value(*logits);
                    let (r, c) = l.shape();
                    let p = l.softmax_rows();
                    let coef = g[0] / r as f64;
                    let mut dx = vec![0.0; r * c];
                    for (row, &y) in targets.iter().enumerate() {
                        for j in 0..c {
                            let delta = if j == y { 1.0 } else { 0.0 };
                            dx[row * c + j] = coef * (p.at(row, j) - delta);
                        }
                    }
                    res.push((*logits, dx));
                }
            }
        }
        res
    }
}

/// Symmetric InfoNCE value of a square similarity matrix (forward only).
pub fn info_nce_value(sim: &Tensor, tau: f64) -> f64 {
    let b = sim.rows();
    let scaled = sim.scale(1.0 / tau);
    let p_row = scaled.softmax_rows();
    let p_col = scaled.transpose().softmax_rows();
    let mut loss = 0.0;
    for i in 0..b {
        loss -= p_row.at(i, i).max(1e-300).ln();
        loss -= p_col.at(i, i).max(1e-300).ln();
    }
    loss / (2.0 * b as f64)
}

/// Max relative disagreement between the tape gradient of `f` at `x` and a
/// central finite difference with step `h`:
/// `max over elements of |analytic - numeric| / (|analytic| + 1e-8)`.
pub fn finite_diff_check<F>(f: &F, x: &Tensor, h: f64) -> f64
where
    F: Fn(&mut Tape, Var) -> Var,
{
    assert!(h > 0.0, "finite_diff_check: h must be positive");
    let mut tape = Tape::new();
    let vx = tape.leaf(x, true);
    let loss = f(&mut tape, vx);
    assert_eq!(tape.value(loss).shape(), (1, 1), "finite_diff_check: f must be scalar");
    tape.backward(loss).expect("backward on scalar loss");
    let analytic: Vec<f64> = match tape.grad(vx) {
        Some(gr) => gr.to_vec(),
        None => vec![0.0; x.len()],
    };

    let eval = |pt: &Tensor| -> f64 {
        let mut t = Tape::inference();
        let v = t.leaf(pt, false);
        let l = f(&mut t, v);
        t.value(l).item()
    };

    let mut max_err: f64 = 0.0;
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + h;
        let fp = eval(&xp);
        xp.data_mut()[i] = orig - h;
        let fm = eval(&xp);
        xp.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + 1e-8);
        max_err = max_err.max(err);
    }
    max_err
}
