//! Parameter-free style-content cross normalization.
//!
//! Style features are normalized by the *content* features' per-token
//! statistics and added back onto the content stream, scaled by `gamma`:
//!
//! ```text
//! mu_i    = mean_j  Fc[i][j]
//! var_i   = mean_j (Fc[i][j] - mu_i)^2        (biased)
//! out[i]  = Fc[i] + gamma * (Fs[i] - mu_i) / sqrt(var_i + eta)
//! ```
//!
//! The operation owns no learnable parameters; stylization strength is the
//! single config scalar `gamma` (0 disables it bit-exactly). The denoiser
//! applies this once, mid-stack, after its `hook_block`-th transformer
//! block. Differentiation lives in the tape op `Tape::cross_fuse`.

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Number of learnable parameters owned by the fusion mechanism.
pub const LEARNABLE_PARAMS: usize = 0;

/// Knobs for the fusion step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Scale of the normalized style perturbation (0 disables stylization).
    pub gamma: f64,
    /// Stability constant under the square root.
    pub eta: f64,
    /// Apply fusion after this denoiser block (1-based).
    pub hook_block: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { gamma: 0.6, eta: 1e-5, hook_block: 2 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("fusion gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("fusion eta must be > 0, got {}", self.eta)));
        }
        if self.hook_block == 0 {
            return Err(Error::Config("fusion hook_block must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-token first and second moments of a content feature block.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentStats {
    /// Mean of each row across the feature dimension.
    pub mu: Vec<f64>,
    /// Biased variance of each row across the feature dimension.
    pub sigma2: Vec<f64>,
}

/// Row-wise mean and biased variance of `fc` over its feature dimension.
pub fn content_stats(fc: &Tensor) -> ContentStats {
    let (n, d) = fc.shape();
    assert!(d >= 1, "content_stats needs at least one feature column");
    let mut mu = Vec::with_capacity(n);
    let mut sigma2 = Vec::with_capacity(n);
    for r in 0..n {
        let row = fc.row_slice(r);
        let m = row.iter().sum::<f64>() / d as f64;
        let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / d as f64;
        mu.push(m);
        sigma2.push(v);
    }
    ContentStats { mu, sigma2 }
}

/// Normalize style features by content statistics, per token row.
pub fn cross_normalize(fs: &Tensor, stats: &ContentStats, eta: f64) -> Result<Tensor> {
    if fs.rows() != stats.mu.len() {
        return Err(Error::Dimension(format!(
            "cross_normalize: {} style rows vs {} stat rows",
            fs.rows(),
            stats.mu.len()
        )));
    }
    let (n, d) = fs.shape();
    let mut out = fs.clone();
    for r in 0..n {
        let inv = 1.0 / (stats.sigma2[r] + eta).sqrt();
        let mu = stats.mu[r];
        for c in 0..d {
            out.set(r, c, (fs.at(r, c) - mu) * inv);
        }
    }
    Ok(out)
}

/// Same-shape fusion used by both the plain path and the tape op. At
/// `gamma == 0` the content block is returned verbatim so no-style sampling
/// reproduces the unstylized output bit for bit.
pub fn fuse_raw(fc: &Tensor, fs: &Tensor, gamma: f64, eta: f64) -> Result<Tensor> {
    if fc.shape() != fs.shape() {
        return Err(Error::Dimension(format!(
            "fuse: content {:?} vs style {:?}",
            fc.shape(),
            fs.shape()
        )));
    }
    if gamma == 0.0 {
        return Ok(fc.clone());
    }
    let stats = content_stats(fc);
    let normalized = cross_normalize(fs, &stats, eta)?;
    fc.add(&normalized.scale(gamma))
}

/// Fuse style features into content features. A single style row (1xD) is
/// broadcast across all content tokens; otherwise shapes must match.
pub fn fuse(fc: &Tensor, fs: &Tensor, cfg: &FusionConfig) -> Result<Tensor> {
    cfg.validate()?;
    if fs.rows() == 1 && fc.rows() > 1 {
        let tiled = fs.repeat_rows(fc.rows());
        fuse_raw(fc, &tiled, cfg.gamma, cfg.eta)
    } else {
        fuse_raw(fc, fs, cfg.gamma, cfg.eta)
    }
}
