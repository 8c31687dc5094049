//! Multi-modal style alignment: a frozen deterministic embedder standing
//! in for a pre-aligned joint text/image/audio space, a single trainable
//! projection into the pooled motion-feature space, a symmetric
//! contrastive loss, and a cosine retrieval index with weighted style
//! interpolation.

use crate::nn::{check_finite_loss, AdamW, Linear, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{mix_seed, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Joint-space embedding width.
pub const EMBED_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Text,
    Image,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Image, Modality::Audio];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Audio => "audio",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Vocabulary(format!("unknown modality '{s}'")))
    }
}

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

fn unit_from_seed(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Tensor::randn(1, dim, 1.0, &mut rng);
    let norm = t.data().iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    t.data().iter().map(|v| v / norm).collect()
}

/// Frozen deterministic stand-in for a pre-aligned multi-modal encoder.
///
/// Every word gets a hash-seeded base direction; each modality tilts the
/// base by a fixed small angle along a modality-specific direction, so
/// embeddings of the same word across modalities stay highly similar
/// while distinct words are near-orthogonal at this width.
#[derive(Debug, Clone, Default)]
pub struct ModalityEmbedder;

const TILT_RAD: f64 = 12.0 * std::f64::consts::PI / 180.0;

impl ModalityEmbedder {
    pub fn new() -> Self {
        Self
    }

    pub fn embed(&self, modality: Modality, word: &str) -> Tensor {
        let word = word.trim().to_lowercase();
        let base = unit_from_seed(mix_seed(&[fnv1a64(&word), 0x62617365]), EMBED_DIM);
        let raw = unit_from_seed(
            mix_seed(&[fnv1a64(&word), fnv1a64(modality.as_str()), 0x74696c74]),
            EMBED_DIM,
        );
        // Gram-Schmidt the tilt direction against the base.
        let dot: f64 = base.iter().zip(&raw).map(|(a, b)| a * b).sum();
        let mut ortho: Vec<f64> = raw.iter().zip(&base).map(|(r, b)| r - dot * b).collect();
        let norm = ortho.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        ortho.iter_mut().for_each(|v| *v /= norm);
        let (c, s) = (TILT_RAD.cos(), TILT_RAD.sin());
        let data: Vec<f64> = base.iter().zip(&ortho).map(|(b, o)| c * b + s * o).collect();
        Tensor::new(1, EMBED_DIM, data)
    }

    /// Hash over the style-vocabulary embedding table; the freeze guarantee
    /// is checked by comparing this before and after training.
    pub fn table_hash(&self) -> u64 {
        let mut parts = Vec::new();
        for style in crate::motion::StyleLabel::ALL {
            for modality in Modality::ALL {
                let e = self.embed(modality, style.word());
                for v in e.data() {
                    parts.push(v.to_bits());
                }
            }
        }
        mix_seed(&parts)
    }
}

/// Single trainable linear map from the joint space into the pooled
/// motion-feature space.
pub struct Projection {
    pub store: ParamStore,
    lin: Linear,
    out_dim: usize,
}

impl Projection {
    pub fn new(out_dim: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x70726f6a]));
        let lin = Linear::new(&mut store, "proj", EMBED_DIM, out_dim, &mut rng);
        Self { store, lin, out_dim }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn project_on_tape(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        self.lin.forward(tape, store, x)
    }

    pub fn project(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != EMBED_DIM {
            return Err(Error::Dimension(format!(
                "projection input has {} cols, want {EMBED_DIM}",
                x.cols()
            )));
        }
        let mut tape = Tape::inference();
        let v = tape.constant(x);
        let out = self.project_on_tape(&mut tape, &self.store, v);
        Ok(tape.value(out).clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::save_params(&self.store, &format!("out_dim={}\n", self.out_dim), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, _) = crate::io::read_params_raw(path)?;
        let mut out_dim = None;
        for line in meta.lines() {
            if let Some(v) = line.strip_prefix("out_dim=") {
                out_dim = Some(v.parse().map_err(|e: std::num::ParseIntError| {
                    Error::Format(format!("projection meta: {e}"))
                })?);
            }
        }
        let out_dim = out_dim.ok_or_else(|| Error::Format("projection meta missing out_dim".into()))?;
        let mut p = Self::new(out_dim, 0);
        crate::io::load_params_into(&mut p.store, path)?;
        Ok(p)
    }
}

/// Symmetric contrastive loss between two equally sized batches; rows are
/// L2-normalized before the similarity product.
pub fn align_loss_on_tape(tape: &mut Tape, ft: Var, fs: Var, tau0: f64) -> Result<Var> {
    let (bt, _) = tape.value(ft).shape();
    let (bs, _) = tape.value(fs).shape();
    if bt == 0 || bs == 0 {
        return Err(Error::Contract("contrastive batch must be non-empty".into()));
    }
    if bt != bs {
        return Err(Error::Dimension(format!("batch sizes differ: {bt} vs {bs}")));
    }
    if tau0 <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {tau0}")));
    }
    let ftn = tape.normalize_rows(ft, 1e-12);
    let fsn = tape.normalize_rows(fs, 1e-12);
    let fst = tape.transpose(fsn);
    let sim = tape.matmul(ftn, fst);
    Ok(tape.info_nce(sim, tau0))
}

pub fn align_loss(ft: &Tensor, fs: &Tensor, tau0: f64) -> Result<f64> {
    let mut tape = Tape::inference();
    let a = tape.constant(ft);
    let b = tape.constant(fs);
    let l = align_loss_on_tape(&mut tape, a, b, tau0)?;
    Ok(tape.value(l).item())
}

#[derive(Debug, Clone, Copy)]
pub struct AlignConfig {
    pub tau0: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { tau0: 0.07, epochs: 60, lr: 5e-3, seed: 23 }
    }
}

/// One (pooled motion feature, style word, source id) training record.
#[derive(Debug, Clone)]
pub struct AlignPair {
    pub feature: Tensor,
    pub style_idx: usize,
    pub motion_id: String,
}

/// Fit the projection so text embeddings land next to their style's pooled
/// motion features. Batches are stratified (one item per style) so every
/// off-diagonal entry is a true negative. Returns per-epoch mean losses.
pub fn train_alignment(
    pairs: &[AlignPair],
    embedder: &ModalityEmbedder,
    cfg: &AlignConfig,
) -> Result<(Projection, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::Contract("no alignment pairs".into()));
    }
    if cfg.tau0 <= 0.0 {
        return Err(Error::Config("tau0 must be positive".into()));
    }
    let dim = pairs[0].feature.cols();
    let styles = crate::motion::StyleLabel::ALL;
    let mut buckets: Vec<Vec<&AlignPair>> = vec![Vec::new(); styles.len()];
    for p in pairs {
        if p.feature.shape() != (1, dim) {
            return Err(Error::Dimension("alignment features must share one row shape".into()));
        }
        // The contrastive loss clamps probabilities before the log, which
        // would silently absorb a NaN input; reject bad features up front.
        if p.feature.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite feature for '{}'", p.motion_id)));
        }
        buckets[p.style_idx].push(p);
    }
    let present: Vec<usize> = (0..styles.len()).filter(|&s| !buckets[s].is_empty()).collect();
    if present.len() < 2 {
        return Err(Error::Contract("need at least two styles to contrast".into()));
    }
    let rounds = buckets.iter().map(|b| b.len()).max().unwrap();

    let mut proj = Projection::new(dim, cfg.seed);
    let mut opt = AdamW::new(cfg.lr);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x65706f63, epoch as u64]));
        let mut acc = 0.0;
        for _ in 0..rounds {
            let mut text_rows = Vec::with_capacity(present.len());
            let mut feat_rows = Vec::with_capacity(present.len());
            for &s in &present {
                let pick = &buckets[s][rng.gen_range(0..buckets[s].len())];
                text_rows.push(embedder.embed(Modality::Text, styles[s].word()));
                feat_rows.push(pick.feature.clone());
            }
            let ft_raw = Tensor::vcat(&text_rows);
            let fs_raw = Tensor::vcat(&feat_rows);
            let mut tape = Tape::new();
            let ftv = tape.constant(&ft_raw);
            let fsv = tape.constant(&fs_raw);
            let projected = proj.project_on_tape(&mut tape, &proj.store, ftv);
            let loss = align_loss_on_tape(&mut tape, projected, fsv, cfg.tau0)?;
            tape.backward(loss)?;
            opt.step(&mut proj.store, &tape);
            acc += check_finite_loss(tape.value(loss).item(), &format!("alignment epoch {epoch}"))?;
        }
        epoch_losses.push(acc / rounds as f64);
    }
    Ok((proj, epoch_losses))
}

/// One retrievable record: a unit-normalized pooled motion feature with
/// its provenance.
#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub style_idx: usize,
    pub motion_id: String,
    pub vector: Tensor,
}

#[derive(Debug, Clone)]
pub struct AlignmentIndex {
    entries: Vec<IndexEntry>,
}

/// A ranked retrieval hit.
#[derive(Debug, Clone)]
pub struct Retrieved {
    pub entry: usize,
    pub style_idx: usize,
    pub motion_id: String,
    pub similarity: f64,
}

impl AlignmentIndex {
    pub fn build(records: Vec<(Tensor, usize, String)>) -> Result<Self> {
        let mut entries = Vec::with_capacity(records.len());
        for (feature, style_idx, motion_id) in records {
            if feature.rows() != 1 {
                return Err(Error::Dimension("index features must be single rows".into()));
            }
            if style_idx >= crate::motion::StyleLabel::ALL.len() {
                return Err(Error::Vocabulary(format!("style index {style_idx} out of range")));
            }
            let norm = feature.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::Numerical(format!("zero-norm feature for '{motion_id}'")));
            }
            let vector = feature.scale(1.0 / norm);
            entries.push(IndexEntry { style_idx, motion_id, vector });
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, i: usize) -> &IndexEntry {
        &self.entries[i]
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            let norm = e.vector.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Numerical(format!(
                    "index vector for '{}' has norm {norm}",
                    e.motion_id
                )));
            }
        }
        Ok(())
    }

    /// Top-k by cosine against an already-projected query vector. Ties keep
    /// insertion order; k beyond the index size returns everything ranked.
    pub fn retrieve_vector(&self, query: &Tensor, k: usize) -> Result<Vec<Retrieved>> {
        if self.entries.is_empty() {
            return Err(Error::Contract("retrieval from an empty index".into()));
        }
        if k == 0 {
            return Err(Error::Contract("retrieval needs k >= 1".into()));
        }
        let dim = self.entries[0].vector.cols();
        if query.shape() != (1, dim) {
            return Err(Error::Dimension(format!(
                "query shape {:?}, want (1, {dim})",
                query.shape()
            )));
        }
        let qnorm = query.data().iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let mut scored: Vec<(usize, f64)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let dot: f64 = e.vector.data().iter().zip(query.data()).map(|(a, b)| a * b).sum();
                (i, dot / qnorm)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        scored.truncate(k.min(self.entries.len()));
        Ok(scored
            .into_iter()
            .map(|(i, similarity)| Retrieved {
                entry: i,
                style_idx: self.entries[i].style_idx,
                motion_id: self.entries[i].motion_id.clone(),
                similarity,
            })
            .collect())
    }

    /// Top-k for a modality query routed through the frozen embedder and
    /// the trained projection.
    pub fn retrieve(
        &self,
        embedder: &ModalityEmbedder,
        proj: &Projection,
        modality: Modality,
        word: &str,
        k: usize,
    ) -> Result<Vec<Retrieved>> {
        let q = proj.project(&embedder.embed(modality, word))?;
        self.retrieve_vector(&q, k)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Contract("refusing to save an empty index".into()));
        }
        let mut store = ParamStore::new();
        let rows: Vec<Tensor> = self.entries.iter().map(|e| e.vector.clone()).collect();
        let p = store.add("index.vectors", Tensor::vcat(&rows));
        store.set_trainable(p, false);
        let mut meta = String::new();
        for e in &self.entries {
            meta.push_str(&format!("entry={},{}\n", e.style_idx, e.motion_id));
        }
        crate::io::save_params(&store, &meta, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, tensors) = crate::io::read_params_raw(path)?;
        let vectors = tensors
            .into_iter()
            .find(|(name, _, _)| name == "index.vectors")
            .map(|(_, t, _)| t)
            .ok_or_else(|| Error::Format("index file missing vector table".into()))?;
        let mut labels = Vec::new();
        for line in meta.lines() {
            if let Some(rest) = line.strip_prefix("entry=") {
                let (s, id) = rest
                    .split_once(',')
                    .ok_or_else(|| Error::Format(format!("bad index entry line '{line}'")))?;
                let style_idx: usize = s
                    .parse()
                    .map_err(|e: std::num::ParseIntError| Error::Format(format!("index entry: {e}")))?;
                labels.push((style_idx, id.to_string()));
            }
        }
        if labels.len() != vectors.rows() {
            return Err(Error::Format(format!(
                "index has {} label lines but {} vectors",
                labels.len(),
                vectors.rows()
            )));
        }
        let entries = labels
            .into_iter()
            .enumerate()
            .map(|(i, (style_idx, motion_id))| IndexEntry {
                style_idx,
                motion_id,
                vector: Tensor::new(1, vectors.cols(), vectors.row_slice(i).to_vec()),
            })
            .collect();
        let idx = Self { entries };
        idx.validate()?;
        Ok(idx)
    }
}

/// Weighted blend of top-1 retrievals: weights are normalized to sum 1 and
/// the retrieved unit vectors are summed; the result feeds the fusion hook
/// as a pooled style feature.
pub fn interpolate_styles(
    index: &AlignmentIndex,
    embedder: &ModalityEmbedder,
    proj: &Projection,
    queries: &[(Modality, String)],
    weights: &[f64],
) -> Result<Tensor> {
    if queries.is_empty() {
        return Err(Error::Contract("interpolation needs at least one query".into()));
    }
    if queries.len() != weights.len() {
        return Err(Error::Contract(format!(
            "{} queries but {} weights",
            queries.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| *w < 0.0) {
        return Err(Error::Contract("interpolation weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Contract("interpolation weights sum to zero".into()));
    }
    let dim = proj.out_dim();
    let mut out = Tensor::zeros(1, dim);
    for ((modality, word), w) in queries.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let top = index.retrieve(embedder, proj, *modality, word, 1)?;
        let v = &index.entry(top[0].entry).vector;
        for (o, x) in out.data_mut().iter_mut().zip(v.data()) {
            *o += (w / total) * x;
        }
    }
    Ok(out)
}
