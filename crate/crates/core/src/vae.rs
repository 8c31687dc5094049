//! Sequence VAE: frames -> n latent tokens -> frames, trained in two
//! stages (plain corpus first, full styled corpus second); its encoder
//! half is then reused as the style encoder. Inputs are standardized
//! per channel with frozen stats kept alongside the weights.

use crate::motion::{MotionSequence, FEATURE_DIM, MAX_FRAMES, MIN_FRAMES};
use crate::nn::{check_finite_loss, sinusoid_embedding, warmup_scale, AdamW, Linear, ParamStore, PRef, TransformerBlock};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{mix_seed, Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, Clone, Copy)]
pub struct VaeConfig {
    /// Latent token count n.
    pub latent_tokens: usize,
    /// Latent dim d per token.
    pub latent_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub ff_mult: usize,
    /// KL weight.
    pub beta: f64,
    /// Linear warm-up steps for the KL weight.
    pub warmup: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_tokens: 2,
            latent_dim: 32,
            hidden: 64,
            blocks: 2,
            ff_mult: 2,
            beta: 1e-4,
            warmup: 200,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_tokens == 0 || self.latent_dim == 0 || self.hidden == 0 || self.blocks == 0 {
            return Err(Error::Config("vae dims must all be positive".into()));
        }
        if self.hidden % 2 != 0 {
            return Err(Error::Config("vae hidden width must be even (sinusoid positions)".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::Config(format!("vae beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }

    fn meta(&self) -> String {
        format!(
            "latent_tokens={}\nlatent_dim={}\nhidden={}\nblocks={}\nff_mult={}\nbeta={}\nwarmup={}\n",
            self.latent_tokens, self.latent_dim, self.hidden, self.blocks, self.ff_mult, self.beta, self.warmup
        )
    }

    fn from_meta(meta: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in meta.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            let bad = |e: std::num::ParseIntError| Error::Format(format!("vae meta {k}: {e}"));
            match k {
                "latent_tokens" => cfg.latent_tokens = v.parse().map_err(bad)?,
                "latent_dim" => cfg.latent_dim = v.parse().map_err(bad)?,
                "hidden" => cfg.hidden = v.parse().map_err(bad)?,
                "blocks" => cfg.blocks = v.parse().map_err(bad)?,
                "ff_mult" => cfg.ff_mult = v.parse().map_err(bad)?,
                "beta" => cfg.beta = v.parse().map_err(|e: std::num::ParseFloatError| Error::Format(format!("vae meta beta: {e}")))?,
                "warmup" => cfg.warmup = v.parse().map_err(bad)?,
                _ => {}
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-channel standardization stats, stored as frozen tensors so they
/// travel inside checkpoints.
fn fit_scaler(seqs: &[&MotionSequence]) -> (Tensor, Tensor) {
    assert!(!seqs.is_empty(), "scaler needs data");
    let mut mean = vec![0.0; FEATURE_DIM];
    let mut count = 0usize;
    for m in seqs {
        for t in 0..m.num_frames() {
            for (acc, v) in mean.iter_mut().zip(m.frame(t)) {
                *acc += v;
            }
            count += 1;
        }
    }
    for v in &mut mean {
        *v /= count as f64;
    }
    let mut var = vec![0.0; FEATURE_DIM];
    for m in seqs {
        for t in 0..m.num_frames() {
            for (acc, (v, mu)) in var.iter_mut().zip(m.frame(t).iter().zip(&mean)) {
                let d = v - mu;
                *acc += d * d;
            }
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / count as f64).sqrt().max(1e-3)).collect();
    (Tensor::new(1, FEATURE_DIM, mean), Tensor::new(1, FEATURE_DIM, std))
}

/// Encoder side: input projection, learned query tokens prepended to the
/// frame tokens, `blocks` attention blocks, projection of the query rows
/// to mean ‖ log-variance.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub in_proj: Linear,
    pub queries: PRef,
    pub blocks: Vec<TransformerBlock>,
    pub out: Linear,
}

fn build_encoder(store: &mut ParamStore, cfg: &VaeConfig, rng: &mut ChaCha8Rng) -> EncoderParams {
    let in_proj = Linear::new(store, "enc.in", FEATURE_DIM, cfg.hidden, rng);
    let queries = store.add("enc.queries", Tensor::randn(cfg.latent_tokens, cfg.hidden, 0.02, rng));
    let blocks = (0..cfg.blocks)
        .map(|i| TransformerBlock::new(store, &format!("enc.block{i}"), cfg.hidden, cfg.ff_mult, rng))
        .collect();
    let out = Linear::new(store, "enc.out", cfg.hidden, 2 * cfg.latent_dim, rng);
    EncoderParams { in_proj, queries, blocks, out }
}

fn encode_on_tape(
    enc: &EncoderParams,
    cfg: &VaeConfig,
    tape: &mut Tape,
    store: &ParamStore,
    frames_std: &Tensor,
) -> (Var, Var) {
    let n = cfg.latent_tokens;
    let x = tape.constant(frames_std);
    let h = enc.in_proj.forward(tape, store, x);
    let positions: Vec<f64> = (0..frames_std.rows()).map(|t| t as f64).collect();
    let pos = tape.constant(&sinusoid_embedding(&positions, cfg.hidden));
    let h = tape.add(h, pos);
    let q = store.var(tape, enc.queries);
    let mut seq = tape.concat_rows(q, h);
    for b in &enc.blocks {
        seq = b.forward(tape, store, seq);
    }
    let tok = tape.slice_rows(seq, 0, n);
    let out = enc.out.forward(tape, store, tok);
    let mean = tape.slice_cols(out, 0, cfg.latent_dim);
    let logvar_raw = tape.slice_cols(out, cfg.latent_dim, 2 * cfg.latent_dim);
    let logvar = tape.clamp(logvar_raw, -10.0, 10.0);
    (mean, logvar)
}

/// Decoder side: latent projection plus learned transform of sinusoid
/// frame queries, `blocks` attention blocks, projection back to features.
#[derive(Debug, Clone)]
struct DecoderParams {
    latent_proj: Linear,
    pos_proj: Linear,
    blocks: Vec<TransformerBlock>,
    out: Linear,
}

fn build_decoder(store: &mut ParamStore, cfg: &VaeConfig, rng: &mut ChaCha8Rng) -> DecoderParams {
    let latent_proj = Linear::new(store, "dec.in", cfg.latent_dim, cfg.hidden, rng);
    let pos_proj = Linear::new(store, "dec.pos", cfg.hidden, cfg.hidden, rng);
    let blocks = (0..cfg.blocks)
        .map(|i| TransformerBlock::new(store, &format!("dec.block{i}"), cfg.hidden, cfg.ff_mult, rng))
        .collect();
    let out = Linear::new(store, "dec.out", cfg.hidden, FEATURE_DIM, rng);
    DecoderParams { latent_proj, pos_proj, blocks, out }
}

pub struct VaeModel {
    pub cfg: VaeConfig,
    pub store: ParamStore,
    pub enc: EncoderParams,
    dec: DecoderParams,
    scaler_mean: PRef,
    scaler_std: PRef,
}

impl VaeModel {
    pub fn new(cfg: VaeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let scaler_mean = store.add("scaler.mean", Tensor::zeros(1, FEATURE_DIM));
        let scaler_std = store.add("scaler.std", Tensor::full(1, FEATURE_DIM, 1.0));
        store.set_trainable(scaler_mean, false);
        store.set_trainable(scaler_std, false);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x76616531]));
        let enc = build_encoder(&mut store, &cfg, &mut rng);
        let dec = build_decoder(&mut store, &cfg, &mut rng);
        Ok(Self { cfg, store, enc, dec, scaler_mean, scaler_std })
    }

    pub fn set_scaler(&mut self, seqs: &[&MotionSequence]) {
        let (mean, std) = fit_scaler(seqs);
        self.store.set(self.scaler_mean, mean);
        self.store.set(self.scaler_std, std);
    }

    pub fn standardize(&self, frames: &Tensor) -> Tensor {
        let mean = self.store.get(self.scaler_mean);
        let std = self.store.get(self.scaler_std);
        let mut out = frames.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out.set(r, c, (frames.at(r, c) - mean.at(0, c)) / std.at(0, c));
            }
        }
        out
    }

    pub fn unstandardize(&self, frames_std: &Tensor) -> Tensor {
        let mean = self.store.get(self.scaler_mean);
        let std = self.store.get(self.scaler_std);
        let mut out = frames_std.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out.set(r, c, frames_std.at(r, c) * std.at(0, c) + mean.at(0, c));
            }
        }
        out
    }

    fn check_frames(num_frames: usize) -> Result<()> {
        if !(MIN_FRAMES..=MAX_FRAMES).contains(&num_frames) {
            return Err(Error::Contract(format!(
                "frame count {num_frames} outside [{MIN_FRAMES}, {MAX_FRAMES}]"
            )));
        }
        Ok(())
    }

    /// Posterior (mean, log-variance), each n x d. Deterministic.
    pub fn posterior(&self, m: &MotionSequence) -> Result<(Tensor, Tensor)> {
        Self::check_frames(m.num_frames())?;
        let std = self.standardize(&m.feature_matrix());
        let mut tape = Tape::inference();
        let (mean, logvar) = encode_on_tape(&self.enc, &self.cfg, &mut tape, &self.store, &std);
        Ok((tape.value(mean).clone(), tape.value(logvar).clone()))
    }

    pub fn encode_mean(&self, m: &MotionSequence) -> Result<Tensor> {
        Ok(self.posterior(m)?.0)
    }

    pub fn encode_std_on_tape(&self, tape: &mut Tape, frames_std: &Tensor) -> (Var, Var) {
        encode_on_tape(&self.enc, &self.cfg, tape, &self.store, frames_std)
    }

    /// Decode n x d latent tokens into `num_frames` standardized feature rows.
    pub fn decode_on_tape(&self, tape: &mut Tape, z: Var, num_frames: usize) -> Var {
        self.decode_with_store(tape, &self.store, z, num_frames)
    }

    fn decode_with_store(&self, tape: &mut Tape, store: &ParamStore, z: Var, num_frames: usize) -> Var {
        let n = self.cfg.latent_tokens;
        let h = self.dec.latent_proj.forward(tape, store, z);
        let positions: Vec<f64> = (0..num_frames).map(|t| t as f64).collect();
        let pos = tape.constant(&sinusoid_embedding(&positions, self.cfg.hidden));
        let fq = self.dec.pos_proj.forward(tape, store, pos);
        let mut seq = tape.concat_rows(h, fq);
        for b in &self.dec.blocks {
            seq = b.forward(tape, store, seq);
        }
        let frames = tape.slice_rows(seq, n, n + num_frames);
        self.dec.out.forward(tape, store, frames)
    }

    /// Decode latents to a raw feature matrix (unstandardized).
    pub fn decode_features(&self, z: &Tensor, num_frames: usize) -> Result<Tensor> {
        Self::check_frames(num_frames)?;
        if z.shape() != (self.cfg.latent_tokens, self.cfg.latent_dim) {
            return Err(Error::Dimension(format!(
                "latent shape {:?}, want {:?}",
                z.shape(),
                (self.cfg.latent_tokens, self.cfg.latent_dim)
            )));
        }
        let mut tape = Tape::inference();
        let zv = tape.constant(z);
        let out = self.decode_on_tape(&mut tape, zv, num_frames);
        Ok(self.unstandardize(tape.value(out)))
    }

    pub fn decode_motion(
        &self,
        z: &Tensor,
        num_frames: usize,
        content: String,
        style: String,
    ) -> Result<MotionSequence> {
        let raw = self.decode_features(z, num_frames)?;
        MotionSequence::from_raw_features(&raw, content, style, crate::motion::FPS)
    }

    /// Reconstruction + beta * KL on the tape; `eps` is the fixed
    /// reparameterization draw (zeros give the posterior mean).
    pub fn loss_on_tape(&self, tape: &mut Tape, m: &MotionSequence, beta_eff: f64, eps: &Tensor) -> Var {
        self.loss_with_store(tape, &self.store, m, beta_eff, eps)
    }

    /// Same loss against an external store with identical layout — the
    /// route finite-difference checks need (the checker owns the store).
    pub fn loss_with_store(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        m: &MotionSequence,
        beta_eff: f64,
        eps: &Tensor,
    ) -> Var {
        let frames_std = self.standardize(&m.feature_matrix());
        let (mean, logvar) = encode_on_tape(&self.enc, &self.cfg, tape, store, &frames_std);
        let z = reparameterize(tape, mean, logvar, eps);
        let recon = self.decode_with_store(tape, store, z, m.num_frames());
        let target = tape.constant(&frames_std);
        let mse = tape.mse(recon, target);
        let kl = kl_on_tape(tape, mean, logvar);
        let kl_w = tape.mul_scalar(kl, beta_eff);
        tape.add(mse, kl_w)
    }

    pub fn loss(&self, m: &MotionSequence, beta_eff: f64, eps: &Tensor) -> f64 {
        let mut tape = Tape::inference();
        let l = self.loss_on_tape(&mut tape, m, beta_eff, eps);
        tape.value(l).item()
    }

    /// Raw-space mean squared reconstruction error from the posterior mean.
    pub fn reconstruction_mse(&self, m: &MotionSequence) -> Result<f64> {
        let (mean, _) = self.posterior(m)?;
        let rec = self.decode_features(&mean, m.num_frames())?;
        rec.mse(&m.feature_matrix())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::save_params(&self.store, &self.cfg.meta(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, _) = crate::io::read_params_raw(path)?;
        let mut model = Self::new(VaeConfig::from_meta(&meta)?, 0)?;
        crate::io::load_params_into(&mut model.store, path)?;
        Ok(model)
    }
}

/// z = mean + exp(logvar / 2) * eps with a constant noise draw.
pub fn reparameterize(tape: &mut Tape, mean: Var, logvar: Var, eps: &Tensor) -> Var {
    let half = tape.mul_scalar(logvar, 0.5);
    let sigma = tape.exp(half);
    let e = tape.constant(eps);
    let scaled = tape.mul(sigma, e);
    tape.add(mean, scaled)
}

/// KL(q ‖ N(0, I)) as the mean over elements of (mu^2 + e^lv - 1 - lv) / 2.
pub fn kl_on_tape(tape: &mut Tape, mean: Var, logvar: Var) -> Var {
    let mu2 = tape.mul(mean, mean);
    let elv = tape.exp(logvar);
    let a = tape.add(mu2, elv);
    let b = tape.add_scalar(a, -1.0);
    let c = tape.sub(b, logvar);
    let m = tape.mean(c);
    tape.mul_scalar(m, 0.5)
}

pub fn kl_closed_form(mean: &Tensor, logvar: &Tensor) -> f64 {
    assert_eq!(mean.shape(), logvar.shape());
    let mut acc = 0.0;
    for (mu, lv) in mean.data().iter().zip(logvar.data()) {
        acc += 0.5 * (mu * mu + lv.exp() - 1.0 - lv);
    }
    acc / mean.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainStrategy {
    /// Stage 1 on the plain corpus, stage 2 on the styled corpus.
    Both,
    /// Stage 1 only (ablation arm).
    ContentOnly,
    /// Stage 2 only, from fresh weights (ablation arm).
    StyleOnly,
}

impl PretrainStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Self::Both),
            "content_only" => Ok(Self::ContentOnly),
            "style_only" => Ok(Self::StyleOnly),
            other => Err(Error::Config(format!("unknown pretrain strategy '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Both => "both",
            Self::ContentOnly => "content_only",
            Self::StyleOnly => "style_only",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VaeTrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self { stage1_epochs: 40, stage2_epochs: 12, batch: 4, lr: 1e-3, seed: 11 }
    }
}

/// One epoch over `data` in a shuffled order; returns the mean loss.
fn run_epoch(
    model: &mut VaeModel,
    opt: &mut AdamW,
    data: &[&MotionSequence],
    batch: usize,
    epoch_rng: &mut ChaCha8Rng,
    global_step: &mut usize,
) -> f64 {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(epoch_rng);
    let mut total = 0.0;
    let mut batches = 0.0;
    for chunk in order.chunks(batch) {
        let mut tape = Tape::new();
        let mut acc: Option<Var> = None;
        let beta_eff = model.cfg.beta * warmup_scale(*global_step, model.cfg.warmup);
        for &i in chunk {
            let m = data[i];
            let eps = Tensor::randn(model.cfg.latent_tokens, model.cfg.latent_dim, 1.0, epoch_rng);
            let l = model.loss_on_tape(&mut tape, m, beta_eff, &eps);
            acc = Some(match acc {
                None => l,
                Some(a) => tape.add(a, l),
            });
        }
        let loss = tape.mul_scalar(acc.expect("non-empty batch"), 1.0 / chunk.len() as f64);
        tape.backward(loss).expect("vae loss is scalar");
        opt.step(&mut model.store, &tape);
        total += tape.value(loss).item();
        batches += 1.0;
        *global_step += 1;
    }
    total / batches
}

/// Two-stage pre-training. On divergence the last finished epoch's weights
/// are saved to `rescue_path` (when given) and a numerical error returned.
pub fn pretrain(
    cfg: VaeConfig,
    tcfg: VaeTrainConfig,
    strategy: PretrainStrategy,
    content_corpus: &[&MotionSequence],
    style_corpus: &[&MotionSequence],
    rescue_path: Option<&Path>,
) -> Result<(VaeModel, Vec<String>)> {
    if content_corpus.is_empty() || style_corpus.is_empty() {
        return Err(Error::Contract("pretraining needs both corpora non-empty".into()));
    }
    let mut model = VaeModel::new(cfg, tcfg.seed)?;
    model.set_scaler(style_corpus);
    let mut opt = AdamW::new(tcfg.lr);
    let mut log = Vec::new();
    let mut global_step = 0usize;

    let stages: Vec<(&str, &[&MotionSequence], usize)> = match strategy {
        PretrainStrategy::Both => vec![
            ("stage1", content_corpus, tcfg.stage1_epochs),
            ("stage2", style_corpus, tcfg.stage2_epochs),
        ],
        PretrainStrategy::ContentOnly => vec![("stage1", content_corpus, tcfg.stage1_epochs)],
        PretrainStrategy::StyleOnly => vec![("stage2", style_corpus, tcfg.stage2_epochs)],
    };
    for (stage_idx, (stage, data, epochs)) in stages.into_iter().enumerate() {
        for epoch in 0..epochs {
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(&[tcfg.seed, stage_idx as u64, epoch as u64]));
            let mean_loss = run_epoch(&mut model, &mut opt, data, tcfg.batch.max(1), &mut rng, &mut global_step);
            if let Err(e) = check_finite_loss(mean_loss, &format!("vae {stage} epoch {epoch}")) {
                if let Some(p) = rescue_path {
                    model.save(p)?;
                }
                return Err(e);
            }
            log.push(format!("{stage} epoch {epoch} loss {mean_loss:.6}"));
        }
    }
    Ok((model, log))
}

/// Continue training an existing model on `data` with a fresh optimizer.
/// `stage_idx` tags the epoch RNG streams so separately invoked stages
/// never share draws.
pub fn fine_tune(
    model: &mut VaeModel,
    data: &[&MotionSequence],
    epochs: usize,
    tcfg: &VaeTrainConfig,
    stage_idx: usize,
    stage: &str,
    rescue_path: Option<&Path>,
) -> Result<Vec<String>> {
    if data.is_empty() {
        return Err(Error::Contract("fine-tuning needs a non-empty corpus".into()));
    }
    let mut opt = AdamW::new(tcfg.lr);
    let mut log = Vec::new();
    let mut global_step = 0usize;
    for epoch in 0..epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(&[tcfg.seed, stage_idx as u64, epoch as u64]));
        let mean_loss =
            run_epoch(model, &mut opt, data, tcfg.batch.max(1), &mut rng, &mut global_step);
        if let Err(e) = check_finite_loss(mean_loss, &format!("vae {stage} epoch {epoch}")) {
            if let Some(p) = rescue_path {
                model.save(p)?;
            }
            return Err(e);
        }
        log.push(format!("{stage} epoch {epoch} loss {mean_loss:.6}"));
    }
    Ok(log)
}

/// Encoder-only model with frozen standardization stats; emits token-form
/// (n x d) and pooled (1 x d) style features. Carries no decoder weights.
pub struct StyleEncoder {
    pub cfg: VaeConfig,
    pub store: ParamStore,
    pub enc: EncoderParams,
    scaler_mean: PRef,
    scaler_std: PRef,
}

impl StyleEncoder {
    fn fresh(cfg: VaeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let scaler_mean = store.add("scaler.mean", Tensor::zeros(1, FEATURE_DIM));
        let scaler_std = store.add("scaler.std", Tensor::full(1, FEATURE_DIM, 1.0));
        store.set_trainable(scaler_mean, false);
        store.set_trainable(scaler_std, false);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x73747965]));
        let enc = build_encoder(&mut store, &cfg, &mut rng);
        Ok(Self { cfg, store, enc, scaler_mean, scaler_std })
    }

    /// Copy the encoder half (plus scaler stats) out of a trained VAE.
    pub fn from_vae(vae: &VaeModel) -> Self {
        let mut se = Self::fresh(vae.cfg, 0).expect("config already validated");
        for p in se.store.refs().collect::<Vec<_>>() {
            let name = se.store.name(p).to_string();
            let src = vae.store.find(&name).expect("encoder names match");
            se.store.set(p, vae.store.get(src).clone());
        }
        se
    }

    pub fn standardize(&self, frames: &Tensor) -> Tensor {
        let mean = self.store.get(self.scaler_mean);
        let std = self.store.get(self.scaler_std);
        let mut out = frames.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out.set(r, c, (frames.at(r, c) - mean.at(0, c)) / std.at(0, c));
            }
        }
        out
    }

    /// Token-form features: posterior mean, n x d, on the tape so training
    /// can flow gradients into the encoder.
    pub fn tokens_on_tape(&self, tape: &mut Tape, m: &MotionSequence) -> Var {
        self.tokens_with_store(tape, &self.store, m)
    }

    /// Same, against an external parameter store (gradient checks perturb
    /// a copy of the store while reusing this encoder's layout).
    pub fn tokens_with_store(&self, tape: &mut Tape, store: &ParamStore, m: &MotionSequence) -> Var {
        let std = self.standardize(&m.feature_matrix());
        let (mean, _) = encode_on_tape(&self.enc, &self.cfg, tape, store, &std);
        mean
    }

    /// Pooled features: mean over latent tokens, 1 x d.
    pub fn pooled_on_tape(&self, tape: &mut Tape, m: &MotionSequence) -> Var {
        let tok = self.tokens_on_tape(tape, m);
        tape.mean_rows(tok)
    }

    pub fn pooled_with_store(&self, tape: &mut Tape, store: &ParamStore, m: &MotionSequence) -> Var {
        let tok = self.tokens_with_store(tape, store, m);
        tape.mean_rows(tok)
    }

    pub fn encode_tokens(&self, m: &MotionSequence) -> Result<Tensor> {
        VaeModel::check_frames(m.num_frames())?;
        let mut tape = Tape::inference();
        let v = self.tokens_on_tape(&mut tape, m);
        Ok(tape.value(v).clone())
    }

    pub fn encode_pooled(&self, m: &MotionSequence) -> Result<Tensor> {
        VaeModel::check_frames(m.num_frames())?;
        let mut tape = Tape::inference();
        let v = self.pooled_on_tape(&mut tape, m);
        Ok(tape.value(v).clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::save_params(&self.store, &self.cfg.meta(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, _) = crate::io::read_params_raw(path)?;
        let mut se = Self::fresh(VaeConfig::from_meta(&meta)?, 0)?;
        crate::io::load_params_into(&mut se.store, path)?;
        Ok(se)
    }
}

impl Clone for StyleEncoder {
    fn clone(&self) -> Self {
        let mut se = Self::fresh(self.cfg, 0).expect("config already validated");
        for p in se.store.refs().collect::<Vec<_>>() {
            let name = se.store.name(p).to_string();
            let src = self.store.find(&name).expect("same layout");
            se.store.set(p, self.store.get(src).clone());
            se.store.set_trainable(p, self.store.trainable(src));
        }
        se
    }
}
