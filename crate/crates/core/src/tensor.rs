//! Dense row-major 2-D tensors and the numeric kernels behind the tape ops.
//!
//! Everything in the pipeline is rank 2: scalars are 1x1, vectors are 1xN.
//! Data is `f64` internally (file formats quantize to `f32` at the I/O
//! boundary). Kernels are plain loops; at desk scale (matrices up to a few
//! hundred on a side) this is plenty and keeps results bit-reproducible.

use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// GELU used throughout (tanh approximation).
pub fn gelu_scalar(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Derivative of [`gelu_scalar`].
pub fn gelu_grad_scalar(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044_715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044_715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    /// Build from explicit data. Panics if `data.len() != rows * cols`
    /// (that is a programming error, not a runtime condition).
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length != rows*cols");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn full(rows: usize, cols: usize, v: f64) -> Self {
        Self::new(rows, cols, vec![v; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(1, 1, vec![v])
    }

    /// Row vector (1xN).
    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(1, n, data)
    }

    /// Stack blocks vertically; all blocks must agree on column count.
    pub fn vcat(blocks: &[Tensor]) -> Self {
        assert!(!blocks.is_empty(), "vcat needs at least one block");
        let cols = blocks[0].cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for b in blocks {
            assert_eq!(b.cols(), cols, "vcat: column mismatch");
            data.extend_from_slice(b.data());
            rows += b.rows();
        }
        Self::new(rows, cols, data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "from_rows needs at least one row");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// I.i.d. normal entries with the given standard deviation.
    pub fn randn(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(std * crate::tensor::sample_standard_normal(rng));
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix product. Errors when inner dimensions disagree.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "matmul: ({}x{}) * ({}x{})",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = vec![0.0; self.rows * rhs.cols];
        // ikj order so the inner loop walks both `rhs` and `out` contiguously.
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rrow = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let orow = &mut out[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor::new(self.rows, rhs.cols, out))
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Tensor::new(self.cols, self.rows, out)
    }

    fn zip_same_shape(&self, rhs: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(Error::Dimension(format!(
                "{op}: ({}x{}) vs ({}x{})",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::new(self.rows, self.cols, data))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(rhs, "sub", |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(rhs, "mul", |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Mean squared error against a same-shape target.
    pub fn mse(&self, target: &Tensor) -> Result<f64> {
        if self.shape() != target.shape() {
            return Err(Error::Dimension(format!(
                "mse: ({}x{}) vs ({}x{})",
                self.rows, self.cols, target.rows, target.cols
            )));
        }
        let n = self.data.len() as f64;
        Ok(self
            .data
            .iter()
            .zip(&target.data)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&self) -> Tensor {
        let mut out = self.data.clone();
        for r in 0..self.rows {
            let row = &mut out[r * self.cols..(r + 1) * self.cols];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        Tensor::new(self.rows, self.cols, out)
    }

    /// Per-row normalization to zero mean / unit variance over the feature
    /// axis (no learned scale or shift).
    pub fn layer_norm_rows(&self, eps: f64) -> Tensor {
        let mut out = self.data.clone();
        let d = self.cols as f64;
        for r in 0..self.rows {
            let row = &mut out[r * self.cols..(r + 1) * self.cols];
            let mu = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mu) * inv;
            }
        }
        Tensor::new(self.rows, self.cols, out)
    }

    /// Rows scaled to unit Euclidean norm. Zero rows are left untouched.
    pub fn normalize_rows(&self, eps: f64) -> Tensor {
        let mut out = self.data.clone();
        for r in 0..self.rows {
            let row = &mut out[r * self.cols..(r + 1) * self.cols];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > eps {
                for v in row.iter_mut() {
                    *v /= n;
                }
            }
        }
        Tensor::new(self.rows, self.cols, out)
    }

    /// Column means as a 1xC row vector.
    pub fn mean_rows(&self) -> Tensor {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c] += self.data[r * self.cols + c];
            }
        }
        let n = self.rows as f64;
        for v in &mut out {
            *v /= n;
        }
        Tensor::new(1, self.cols, out)
    }

    /// Vertical stack of selected rows.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            assert!(i < self.rows, "gather_rows index out of range");
            data.extend_from_slice(self.row_slice(i));
        }
        Tensor::new(idx.len(), self.cols, data)
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        assert!(start <= end && end <= self.rows, "slice_rows out of range");
        Tensor::new(
            end - start,
            self.cols,
            self.data[start * self.cols..end * self.cols].to_vec(),
        )
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor {
        assert!(start <= end && end <= self.cols, "slice_cols out of range");
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for r in 0..self.rows {
            data.extend_from_slice(&self.data[r * self.cols + start..r * self.cols + end]);
        }
        Tensor::new(self.rows, end - start, data)
    }

    pub fn concat_rows(&self, below: &Tensor) -> Result<Tensor> {
        if self.cols != below.cols {
            return Err(Error::Dimension(format!(
                "concat_rows: {} vs {} cols",
                self.cols, below.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&below.data);
        Ok(Tensor::new(self.rows + below.rows, self.cols, data))
    }

    /// Repeat the whole tensor `times` times along the row axis.
    pub fn repeat_rows(&self, times: usize) -> Tensor {
        let mut data = Vec::with_capacity(self.data.len() * times);
        for _ in 0..times {
            data.extend_from_slice(&self.data);
        }
        Tensor::new(self.rows * times, self.cols, data)
    }

    /// Widen to `new_cols` by cyclically repeating columns:
    /// `out[r][c] = self[r][c % cols]`. Used to feed narrow style features
    /// into a wider channel without introducing learned weights.
    pub fn tile_cols(&self, new_cols: usize) -> Tensor {
        assert!(new_cols >= self.cols, "tile_cols cannot shrink");
        let mut data = Vec::with_capacity(self.rows * new_cols);
        for r in 0..self.rows {
            let row = self.row_slice(r);
            for c in 0..new_cols {
                data.push(row[c % self.cols]);
            }
        }
        Tensor::new(self.rows, new_cols, data)
    }
}

/// Standard normal draw via Box-Muller (two uniforms -> one normal; the
/// second value is discarded to keep draw counts predictable).
pub fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Euclidean distance between two equal-length slices.
pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity; zero vectors yield 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
