//! Conditional latent diffusion: linear noise schedule, a small
//! transformer denoiser with a content-condition token and a single
//! parameter-free style-injection hook, ε-prediction training in two
//! phases (content, then style-encoder-only), and a deterministic
//! DDIM sampler with classifier-free guidance.

use crate::fusion::FusionConfig;
use crate::motion::{ContentLabel, MotionSequence};
use crate::nn::{check_finite_loss, sinusoid_embedding, AdamW, Linear, ParamStore, PRef, TransformerBlock};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vae::{StyleEncoder, VaeModel};
use crate::{mix_seed, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Embedding-table row used when the content condition is dropped.
pub const NULL_COND: usize = 4;
const COND_VOCAB: usize = NULL_COND + 1;

#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps < 2 {
            return Err(Error::Config(format!("need at least 2 timesteps, got {timesteps}")));
        }
        let mut betas = Vec::with_capacity(timesteps);
        for t in 0..timesteps {
            let frac = t as f64 / (timesteps - 1) as f64;
            betas.push(beta_start + (beta_end - beta_start) * frac);
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(timesteps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bar.push(acc);
        }
        let s = Self { betas, alphas, alpha_bar };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.iter().any(|b| !(0.0 < *b && *b < 1.0)) {
            return Err(Error::Config("betas must lie strictly in (0,1)".into()));
        }
        for w in self.alpha_bar.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::Config("alpha_bar must be strictly decreasing".into()));
            }
        }
        Ok(())
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }
}

/// z_t = sqrt(alpha_bar[t]) z0 + sqrt(1 - alpha_bar[t]) noise.
pub fn forward_diffuse(
    sched: &DiffusionSchedule,
    z0: &Tensor,
    t: usize,
    noise: &Tensor,
) -> Result<Tensor> {
    if t >= sched.timesteps() {
        return Err(Error::Contract(format!(
            "timestep {t} out of range 0..{}",
            sched.timesteps()
        )));
    }
    if z0.shape() != noise.shape() {
        return Err(Error::Dimension(format!(
            "noise shape {:?} does not match latent {:?}",
            noise.shape(),
            z0.shape()
        )));
    }
    let ab = sched.alpha_bar[t];
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = z0.clone();
    for (o, (z, e)) in out.data_mut().iter_mut().zip(z0.data().iter().zip(noise.data())) {
        *o = sa * z + sn * e;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct DenoiserConfig {
    pub latent_tokens: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub ff_mult: usize,
    /// Style features are injected once, after this block (1-based).
    pub hook_block: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { latent_tokens: 2, latent_dim: 32, hidden: 64, blocks: 4, ff_mult: 2, hook_block: 2 }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_tokens == 0 || self.latent_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("denoiser dims must be positive".into()));
        }
        if self.hidden % 2 != 0 {
            return Err(Error::Config("denoiser hidden width must be even".into()));
        }
        if !(1 <= self.hook_block && self.hook_block <= self.blocks) {
            return Err(Error::Config(format!(
                "hook block {} outside 1..={}",
                self.hook_block, self.blocks
            )));
        }
        Ok(())
    }

    fn meta(&self) -> String {
        format!(
            "latent_tokens={}\nlatent_dim={}\nhidden={}\nblocks={}\nff_mult={}\nhook_block={}\n",
            self.latent_tokens, self.latent_dim, self.hidden, self.blocks, self.ff_mult, self.hook_block
        )
    }

    fn from_meta(meta: &str) -> Result<(Self, Option<(usize, f64, f64)>)> {
        let mut cfg = Self::default();
        let (mut t, mut b0, mut b1) = (None, None, None);
        for line in meta.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            let ierr = |e: std::num::ParseIntError| Error::Format(format!("denoiser meta {k}: {e}"));
            let ferr = |e: std::num::ParseFloatError| Error::Format(format!("denoiser meta {k}: {e}"));
            match k {
                "latent_tokens" => cfg.latent_tokens = v.parse().map_err(ierr)?,
                "latent_dim" => cfg.latent_dim = v.parse().map_err(ierr)?,
                "hidden" => cfg.hidden = v.parse().map_err(ierr)?,
                "blocks" => cfg.blocks = v.parse().map_err(ierr)?,
                "ff_mult" => cfg.ff_mult = v.parse().map_err(ierr)?,
                "hook_block" => cfg.hook_block = v.parse().map_err(ierr)?,
                "timesteps" => t = Some(v.parse().map_err(ierr)?),
                "beta_start" => b0 = Some(v.parse().map_err(ferr)?),
                "beta_end" => b1 = Some(v.parse().map_err(ferr)?),
                _ => {}
            }
        }
        cfg.validate()?;
        let sched = match (t, b0, b1) {
            (Some(t), Some(b0), Some(b1)) => Some((t, b0, b1)),
            _ => None,
        };
        Ok((cfg, sched))
    }
}

/// Style features prepared for the hook: token-form n x d or pooled 1 x d,
/// both width-matched to the denoiser by cyclic column tiling.
pub enum StyleCond {
    None,
    Tokens(Tensor),
    Pooled(Tensor),
}

pub struct Denoiser {
    pub cfg: DenoiserConfig,
    pub store: ParamStore,
    time_in: Linear,
    time_out: Linear,
    cond_embed: PRef,
    in_proj: Linear,
    latent_pos: PRef,
    blocks: Vec<TransformerBlock>,
    out_proj: Linear,
    latent_mean: PRef,
    latent_std: PRef,
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x64656e6f]));
        let time_in = Linear::new(&mut store, "time.in", cfg.hidden, cfg.hidden, &mut rng);
        let time_out = Linear::new(&mut store, "time.out", cfg.hidden, cfg.hidden, &mut rng);
        let cond_embed = store.add("cond.embed", Tensor::randn(COND_VOCAB, cfg.hidden, 0.02, &mut rng));
        let in_proj = Linear::new(&mut store, "lat.in", cfg.latent_dim, cfg.hidden, &mut rng);
        let latent_pos = store.add("lat.pos", Tensor::randn(cfg.latent_tokens, cfg.hidden, 0.02, &mut rng));
        let blocks = (0..cfg.blocks)
            .map(|i| TransformerBlock::new(&mut store, &format!("block{i}"), cfg.hidden, cfg.ff_mult, &mut rng))
            .collect();
        let out_proj = Linear::new(&mut store, "out", cfg.hidden, cfg.latent_dim, &mut rng);
        let latent_mean = store.add("latent.mean", Tensor::zeros(cfg.latent_tokens, cfg.latent_dim));
        let latent_std = store.add("latent.std", Tensor::full(cfg.latent_tokens, cfg.latent_dim, 1.0));
        store.set_trainable(latent_mean, false);
        store.set_trainable(latent_std, false);
        Ok(Self {
            cfg,
            store,
            time_in,
            time_out,
            cond_embed,
            in_proj,
            latent_pos,
            blocks,
            out_proj,
            latent_mean,
            latent_std,
        })
    }

    pub fn set_latent_stats(&mut self, latents: &[Tensor]) {
        assert!(!latents.is_empty());
        let (n, d) = (self.cfg.latent_tokens, self.cfg.latent_dim);
        let mut mean = Tensor::zeros(n, d);
        for z in latents {
            for (m, v) in mean.data_mut().iter_mut().zip(z.data()) {
                *m += v;
            }
        }
        mean.data_mut().iter_mut().for_each(|m| *m /= latents.len() as f64);
        let mut var = Tensor::zeros(n, d);
        for z in latents {
            for ((s, v), m) in var.data_mut().iter_mut().zip(z.data()).zip(mean.data()) {
                let dlt = v - m;
                *s += dlt * dlt;
            }
        }
        let std_data: Vec<f64> =
            var.data().iter().map(|v| (v / latents.len() as f64).sqrt().max(1e-6)).collect();
        self.store.set(self.latent_mean, mean);
        self.store.set(self.latent_std, Tensor::new(n, d, std_data));
    }

    pub fn standardize_latent(&self, z: &Tensor) -> Tensor {
        let mean = self.store.get(self.latent_mean);
        let std = self.store.get(self.latent_std);
        let mut out = z.clone();
        for (o, (m, s)) in out.data_mut().iter_mut().zip(mean.data().iter().zip(std.data())) {
            *o = (*o - m) / s;
        }
        out
    }

    pub fn unstandardize_latent(&self, z: &Tensor) -> Tensor {
        let mean = self.store.get(self.latent_mean);
        let std = self.store.get(self.latent_std);
        let mut out = z.clone();
        for (o, (m, s)) in out.data_mut().iter_mut().zip(mean.data().iter().zip(std.data())) {
            *o = *o * s + m;
        }
        out
    }

    /// Width-match style features for the hook: rows are L2-normalized (the
    /// retrieval index serves unit vectors, so training must see the same
    /// scale), pooled rows are repeated per token, then columns are tiled
    /// cyclically from d up to the hidden width.
    pub fn prep_style_hook(&self, tape: &mut Tape, style: Var) -> Result<Var> {
        let (rows, cols) = tape.value(style).shape();
        if cols != self.cfg.latent_dim {
            return Err(Error::Dimension(format!(
                "style features have {cols} cols, want {}",
                self.cfg.latent_dim
            )));
        }
        let unit = tape.normalize_rows(style, 1e-12);
        let per_token = if rows == self.cfg.latent_tokens {
            unit
        } else if rows == 1 {
            tape.repeat_rows(unit, self.cfg.latent_tokens)
        } else {
            return Err(Error::Dimension(format!(
                "style features have {rows} rows, want 1 or {}",
                self.cfg.latent_tokens
            )));
        };
        Ok(tape.tile_cols(per_token, self.cfg.hidden))
    }

    /// Predict ε for one latent. `style_hook` is the pre-tiled n x hidden
    /// feature block; with it absent (or γ = 0) the output is exactly the
    /// content-conditional prediction.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z_t: &Tensor,
        t: usize,
        cond_idx: usize,
        style_hook: Option<Var>,
        fusion: &FusionConfig,
    ) -> Result<Var> {
        let (n, d) = (self.cfg.latent_tokens, self.cfg.latent_dim);
        if z_t.shape() != (n, d) {
            return Err(Error::Dimension(format!("latent shape {:?}, want {:?}", z_t.shape(), (n, d))));
        }
        if cond_idx >= COND_VOCAB {
            return Err(Error::Vocabulary(format!("condition index {cond_idx} out of range")));
        }
        let temb = tape.constant(&sinusoid_embedding(&[t as f64], self.cfg.hidden));
        let th = self.time_in.forward(tape, store, temb);
        let tg = tape.gelu(th);
        let time_tok = self.time_out.forward(tape, store, tg);

        let embed = store.var(tape, self.cond_embed);
        let cond_tok = tape.gather_rows(embed, &[cond_idx]);

        let zv = tape.constant(z_t);
        let zh = self.in_proj.forward(tape, store, zv);
        let pos = store.var(tape, self.latent_pos);
        let lat = tape.add(zh, pos);

        let head = tape.concat_rows(time_tok, cond_tok);
        let mut seq = tape.concat_rows(head, lat);
        for (i, b) in self.blocks.iter().enumerate() {
            seq = b.forward(tape, store, seq);
            if i + 1 == self.cfg.hook_block {
                if let Some(style) = style_hook {
                    let head_rows = tape.slice_rows(seq, 0, 2);
                    let lat_rows = tape.slice_rows(seq, 2, 2 + n);
                    let fused = tape.cross_fuse(lat_rows, style, fusion.gamma, fusion.eta);
                    seq = tape.concat_rows(head_rows, fused);
                }
            }
        }
        let lat_out = tape.slice_rows(seq, 2, 2 + n);
        Ok(self.out_proj.forward(tape, store, lat_out))
    }

    /// Plain (off-tape) ε prediction for sampling.
    pub fn predict_eps(
        &self,
        z_t: &Tensor,
        t: usize,
        cond_idx: usize,
        style: &StyleCond,
        fusion: &FusionConfig,
    ) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let hook = match style {
            StyleCond::None => None,
            StyleCond::Tokens(f) | StyleCond::Pooled(f) => {
                let v = tape.constant(f);
                Some(self.prep_style_hook(&mut tape, v)?)
            }
        };
        let out = self.forward_on_tape(&mut tape, &self.store, z_t, t, cond_idx, hook, fusion)?;
        Ok(tape.value(out).clone())
    }

    pub fn save(&self, sched: &DiffusionSchedule, beta_start: f64, beta_end: f64, path: &Path) -> Result<()> {
        let meta = format!(
            "{}timesteps={}\nbeta_start={}\nbeta_end={}\n",
            self.cfg.meta(),
            sched.timesteps(),
            beta_start,
            beta_end
        );
        crate::io::save_params(&self.store, &meta, path)
    }

    pub fn load(path: &Path) -> Result<(Self, DiffusionSchedule)> {
        let (meta, _) = crate::io::read_params_raw(path)?;
        let (cfg, sched_params) = DenoiserConfig::from_meta(&meta)?;
        let (t, b0, b1) = sched_params
            .ok_or_else(|| Error::Format("denoiser checkpoint missing schedule params".into()))?;
        let mut den = Self::new(cfg, 0)?;
        crate::io::load_params_into(&mut den.store, path)?;
        Ok((den, DiffusionSchedule::linear(t, b0, b1)?))
    }
}

/// One training example: a standardized latent plus its labels. `pool_pos`
/// locates the source clip inside its style bucket so reference pairing
/// can avoid picking the clip itself.
#[derive(Debug, Clone)]
pub struct BatchItem<'a> {
    pub z0: &'a Tensor,
    pub content_idx: usize,
    pub style_idx: usize,
    pub pool_pos: usize,
}

pub enum TrainMode<'a> {
    ContentOnly,
    /// Denoiser training with the fusion hook engaged half the time on
    /// constant style features, so the blocks after the hook learn to read
    /// injected style statistics. The style encoder gets no gradients.
    StyledFrozen {
        style_encoder: &'a StyleEncoder,
        pools: &'a [Vec<&'a MotionSequence>],
        fusion: FusionConfig,
    },
    Stylized {
        style_encoder: &'a StyleEncoder,
        style_store: &'a ParamStore,
        pools: &'a [Vec<&'a MotionSequence>],
        fusion: FusionConfig,
    },
}

/// Same-style different-clip reference pick shared by the styled modes.
fn pick_reference<'a>(
    pools: &'a [Vec<&'a MotionSequence>],
    item: &BatchItem,
    rng: &mut ChaCha8Rng,
) -> Result<&'a MotionSequence> {
    let pool = &pools[item.style_idx];
    if pool.is_empty() {
        return Err(Error::Contract(format!("no reference clips for style {}", item.style_idx)));
    }
    let mut pick = rng.gen_range(0..pool.len());
    if pick == item.pool_pos && pool.len() > 1 {
        pick = (pick + 1) % pool.len();
    }
    Ok(pool[pick])
}

/// ε-prediction MSE over a batch. Timestep, noise and condition-dropout
/// draws come from a stream that does not depend on the mode, so a
/// stylized step at γ = 0 reproduces the content-only loss bit for bit.
pub fn train_step(
    den: &Denoiser,
    den_store: &ParamStore,
    sched: &DiffusionSchedule,
    batch: &[BatchItem],
    mode: &TrainMode,
    cond_dropout: f64,
    step_seed: u64,
    tape: &mut Tape,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Contract("empty training batch".into()));
    }
    let (n, d) = (den.cfg.latent_tokens, den.cfg.latent_dim);
    let mut rng_main = ChaCha8Rng::seed_from_u64(mix_seed(&[step_seed, 0x4d41494e]));
    let mut rng_style = ChaCha8Rng::seed_from_u64(mix_seed(&[step_seed, 0x5354594c]));
    let mut acc: Option<Var> = None;
    for item in batch {
        let t = rng_main.gen_range(0..sched.timesteps());
        let eps = Tensor::randn(n, d, 1.0, &mut rng_main);
        let drop: f64 = rng_main.gen();
        let cond_idx = if drop < cond_dropout { NULL_COND } else { item.content_idx };
        let z_t = forward_diffuse(sched, item.z0, t, &eps)?;

        let hook = match mode {
            TrainMode::ContentOnly => None,
            TrainMode::StyledFrozen { style_encoder, pools, .. } => {
                // Engage the hook on a coin flip so the no-style path stays
                // trained; features enter as constants (no encoder grads).
                if rng_style.gen::<f64>() < 0.5 {
                    let reference = pick_reference(pools, item, &mut rng_style)?;
                    let pooled: bool = rng_style.gen::<f64>() < 0.5;
                    let feat = if pooled {
                        style_encoder.encode_pooled(reference)?
                    } else {
                        style_encoder.encode_tokens(reference)?
                    };
                    let feat = tape.constant(&feat);
                    Some(den.prep_style_hook(tape, feat)?)
                } else {
                    None
                }
            }
            TrainMode::Stylized { style_encoder, style_store, pools, .. } => {
                let reference = pick_reference(pools, item, &mut rng_style)?;
                let pooled: bool = rng_style.gen::<f64>() < 0.5;
                let feat = if pooled {
                    style_encoder.pooled_with_store(tape, style_store, reference)
                } else {
                    style_encoder.tokens_with_store(tape, style_store, reference)
                };
                Some(den.prep_style_hook(tape, feat)?)
            }
        };
        let fusion = match mode {
            TrainMode::ContentOnly => FusionConfig::default(),
            TrainMode::StyledFrozen { fusion, .. } | TrainMode::Stylized { fusion, .. } => *fusion,
        };
        let pred = den.forward_on_tape(tape, den_store, &z_t, t, cond_idx, hook, &fusion)?;
        let target = tape.constant(&eps);
        let l = tape.mse(pred, target);
        acc = Some(match acc {
            None => l,
            Some(a) => tape.add(a, l),
        });
    }
    Ok(tape.mul_scalar(acc.expect("non-empty batch"), 1.0 / batch.len() as f64))
}

#[derive(Debug, Clone, Copy)]
pub struct DiffusionTrainConfig {
    pub content_steps: usize,
    pub stylized_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub style_lr: f64,
    pub cond_dropout: f64,
    pub seed: u64,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        Self {
            content_steps: 2000,
            stylized_steps: 800,
            batch: 16,
            lr: 2e-3,
            style_lr: 5e-4,
            cond_dropout: 0.1,
            seed: 17,
        }
    }
}

pub struct TrainData {
    /// Standardized latents plus (content, style, position-in-style-bucket).
    pub items: Vec<(Tensor, usize, usize, usize)>,
}

/// Encode the corpus into standardized latents and fit the scaler on the
/// way; also returns per-style bucket positions used for reference pairing.
pub fn prepare_latents(den: &mut Denoiser, vae: &VaeModel, seqs: &[(&MotionSequence, usize, usize)]) -> Result<TrainData> {
    let raw: Vec<Tensor> = {
        let encoded = crate::parallel::par_map(seqs, |(m, _, _)| vae.encode_mean(m));
        let mut out = Vec::with_capacity(encoded.len());
        for e in encoded {
            out.push(e?);
        }
        out
    };
    den.set_latent_stats(&raw);
    let mut bucket_counts = vec![0usize; crate::motion::StyleLabel::ALL.len()];
    let mut items = Vec::with_capacity(raw.len());
    for (z, (_, content_idx, style_idx)) in raw.into_iter().zip(seqs) {
        let pos = bucket_counts[*style_idx];
        bucket_counts[*style_idx] += 1;
        items.push((den.standardize_latent(&z), *content_idx, *style_idx, pos));
    }
    Ok(TrainData { items })
}

fn draw_batch<'a>(data: &'a TrainData, batch: usize, rng: &mut ChaCha8Rng) -> Vec<BatchItem<'a>> {
    (0..batch)
        .map(|_| {
            let i = rng.gen_range(0..data.items.len());
            let (z0, c, s, p) = &data.items[i];
            BatchItem { z0, content_idx: *c, style_idx: *s, pool_pos: *p }
        })
        .collect()
}

/// Phase 1: fit denoiser + content embedding on ε-prediction. When a
/// style context is given, the fusion hook is exercised on frozen-encoder
/// features so later blocks learn to read injected style statistics.
pub fn train_content(
    den: &mut Denoiser,
    sched: &DiffusionSchedule,
    data: &TrainData,
    style: Option<(&StyleEncoder, &[Vec<&MotionSequence>], FusionConfig)>,
    tcfg: &DiffusionTrainConfig,
) -> Result<Vec<String>> {
    let mut opt = AdamW::new(tcfg.lr);
    let mut log = Vec::new();
    let mut running = 0.0;
    for step in 0..tcfg.content_steps {
        let mut rng_batch = ChaCha8Rng::seed_from_u64(mix_seed(&[tcfg.seed, 0x62617463, step as u64]));
        let batch = draw_batch(data, tcfg.batch, &mut rng_batch);
        let mut tape = Tape::new();
        let mode = match style {
            None => TrainMode::ContentOnly,
            Some((se, pools, fusion)) => TrainMode::StyledFrozen { style_encoder: se, pools, fusion },
        };
        let loss = train_step(
            den,
            &den.store,
            sched,
            &batch,
            &mode,
            tcfg.cond_dropout,
            mix_seed(&[tcfg.seed, 0x636f6e74, step as u64]),
            &mut tape,
        )?;
        tape.backward(loss)?;
        opt.step(&mut den.store, &tape);
        let v = check_finite_loss(tape.value(loss).item(), &format!("diffusion content step {step}"))?;
        running += v;
        if (step + 1) % 100 == 0 {
            log.push(format!("content step {} loss {:.6}", step + 1, running / 100.0));
            running = 0.0;
        }
    }
    Ok(log)
}

/// Phase 2: freeze the denoiser, tune only the style encoder through the
/// fusion hook.
pub fn train_stylized(
    den: &mut Denoiser,
    se: &mut StyleEncoder,
    sched: &DiffusionSchedule,
    data: &TrainData,
    pools: &[Vec<&MotionSequence>],
    fusion: FusionConfig,
    tcfg: &DiffusionTrainConfig,
) -> Result<Vec<String>> {
    den.store.set_all_trainable(false);
    let mut opt = AdamW::new(tcfg.style_lr);
    let mut log = Vec::new();
    let mut running = 0.0;
    for step in 0..tcfg.stylized_steps {
        let mut rng_batch = ChaCha8Rng::seed_from_u64(mix_seed(&[tcfg.seed, 0x62617463, step as u64]));
        let batch = draw_batch(data, tcfg.batch, &mut rng_batch);
        let mut tape = Tape::new();
        let mode = TrainMode::Stylized {
            style_encoder: se,
            style_store: &se.store,
            pools,
            fusion,
        };
        let loss = train_step(
            den,
            &den.store,
            sched,
            &batch,
            &mode,
            tcfg.cond_dropout,
            mix_seed(&[tcfg.seed, 0x7374796c, step as u64]),
            &mut tape,
        )?;
        tape.backward(loss)?;
        opt.step(&mut se.store, &tape);
        let v = check_finite_loss(tape.value(loss).item(), &format!("diffusion stylized step {step}"))?;
        running += v;
        if (step + 1) % 100 == 0 {
            log.push(format!("stylized step {} loss {:.6}", step + 1, running / 100.0));
            running = 0.0;
        }
    }
    Ok(log)
}

/// Small latent-space style classifier for optional classifier guidance.
pub struct StyleGuidance {
    pub store: ParamStore,
    l1: Linear,
    l2: Linear,
    n: usize,
    d: usize,
}

impl StyleGuidance {
    pub fn new(latent_tokens: usize, latent_dim: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x67756964]));
        let input = latent_tokens * latent_dim;
        let l1 = Linear::new(&mut store, "g1", input, 32, &mut rng);
        let l2 = Linear::new(&mut store, "g2", 32, crate::motion::StyleLabel::ALL.len(), &mut rng);
        Self { store, l1, l2, n: latent_tokens, d: latent_dim }
    }

    fn logits_on_tape(&self, tape: &mut Tape, z_flat: Var) -> Var {
        let h = self.l1.forward(tape, &self.store, z_flat);
        let g = tape.gelu(h);
        self.l2.forward(tape, &self.store, g)
    }

    /// Fit on standardized latents (flattened) with style labels.
    pub fn fit(&mut self, latents: &[(Tensor, usize)], steps: usize, lr: f64) -> Result<()> {
        let rows: Vec<f64> = latents.iter().flat_map(|(z, _)| z.data().to_vec()).collect();
        let x = Tensor::new(latents.len(), self.n * self.d, rows);
        let y: Vec<usize> = latents.iter().map(|(_, s)| *s).collect();
        let mut opt = AdamW::new(lr);
        for step in 0..steps {
            let mut tape = Tape::new();
            let xv = tape.constant(&x);
            let logits = self.logits_on_tape(&mut tape, xv);
            let loss = tape.cross_entropy(logits, &y);
            tape.backward(loss)?;
            opt.step(&mut self.store, &tape);
            check_finite_loss(tape.value(loss).item(), &format!("guidance step {step}"))?;
        }
        Ok(())
    }

    /// ∇_z log p(style | z) for a flattened latent.
    pub fn log_prob_grad(&self, z: &Tensor, style_idx: usize) -> Result<Tensor> {
        let flat = Tensor::new(1, self.n * self.d, z.data().to_vec());
        let mut tape = Tape::new();
        let zv = tape.leaf(&flat, true);
        let logits = self.logits_on_tape(&mut tape, zv);
        let nll = tape.cross_entropy(logits, &[style_idx]);
        tape.backward(nll)?;
        let g = tape.grad(zv).expect("leaf gradient");
        // log p = -nll, so flip the sign.
        Ok(Tensor::new(z.rows(), z.cols(), g.iter().map(|v| -v).collect()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::save_params(&self.store, &format!("latent_tokens={}\nlatent_dim={}\n", self.n, self.d), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, _) = crate::io::read_params_raw(path)?;
        let (mut n, mut d) = (2, 32);
        for line in meta.lines() {
            if let Some((k, v)) = line.split_once('=') {
                let parsed = v
                    .parse()
                    .map_err(|e: std::num::ParseIntError| Error::Format(format!("guidance meta {k}: {e}")))?;
                match k {
                    "latent_tokens" => n = parsed,
                    "latent_dim" => d = parsed,
                    _ => {}
                }
            }
        }
        let mut g = Self::new(n, d, 0);
        crate::io::load_params_into(&mut g.store, path)?;
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SampleParams {
    /// DDIM step count (must not exceed the schedule length).
    pub steps: usize,
    pub w_cfg: f64,
    pub w_cls: f64,
    pub gamma: f64,
    pub eta: f64,
    pub seed: u64,
}

impl Default for SampleParams {
    fn default() -> Self {
        Self { steps: 50, w_cfg: 2.5, w_cls: 1.0, gamma: 0.6, eta: 1e-5, seed: 0 }
    }
}

/// Deterministic DDIM sampling in standardized latent space with
/// classifier-free guidance: ε̂ = ε_uncond + w·(ε_cond − ε_uncond).
/// The style hook, when present, is active inside both branches.
pub fn sample_latent(
    den: &Denoiser,
    sched: &DiffusionSchedule,
    content_idx: usize,
    style: &StyleCond,
    params: &SampleParams,
    guidance: Option<(&StyleGuidance, usize)>,
) -> Result<Tensor> {
    if params.steps == 0 || params.steps > sched.timesteps() {
        return Err(Error::Config(format!(
            "sample steps {} outside 1..={}",
            params.steps,
            sched.timesteps()
        )));
    }
    let (n, d) = (den.cfg.latent_tokens, den.cfg.latent_dim);
    let fusion = FusionConfig { gamma: params.gamma, eta: params.eta, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[params.seed, 0x73616d70]));
    let mut z = Tensor::randn(n, d, 1.0, &mut rng);

    let ts: Vec<usize> =
        (0..params.steps).map(|i| i * sched.timesteps() / params.steps).collect();
    for k in (0..params.steps).rev() {
        let t = ts[k];
        let ab_t = sched.alpha_bar[t];
        let ab_prev = if k > 0 { sched.alpha_bar[ts[k - 1]] } else { 1.0 };

        // Joint guidance: the unconditional branch drops both the content
        // token and the style hook, so w_cfg amplifies the full condition.
        let eps_u = den.predict_eps(&z, t, NULL_COND, &StyleCond::None, &fusion)?;
        let eps_c = den.predict_eps(&z, t, content_idx, style, &fusion)?;
        let mut eps_hat = eps_u.clone();
        for (o, (u, c)) in eps_hat.data_mut().iter_mut().zip(eps_u.data().iter().zip(eps_c.data())) {
            *o = u + params.w_cfg * (c - u);
        }

        let (sa, sn) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
        let mut z0_pred = z.clone();
        for (o, (zt, e)) in z0_pred.data_mut().iter_mut().zip(z.data().iter().zip(eps_hat.data())) {
            *o = (zt - sn * e) / sa;
        }
        // γ = 0 switches off all styling, classifier guidance included,
        // so the no-style path stays exactly reproducible.
        if params.w_cls != 0.0 && params.gamma != 0.0 {
            if let Some((g, style_idx)) = guidance {
                let grad = g.log_prob_grad(&z0_pred, style_idx)?;
                for (e, gv) in eps_hat.data_mut().iter_mut().zip(grad.data()) {
                    *e -= params.w_cls * sn * gv;
                }
                for (o, (zt, e)) in
                    z0_pred.data_mut().iter_mut().zip(z.data().iter().zip(eps_hat.data()))
                {
                    *o = (zt - sn * e) / sa;
                }
            }
        }

        let (pa, pn) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        for (o, (z0p, e)) in z.data_mut().iter_mut().zip(z0_pred.data().iter().zip(eps_hat.data())) {
            *o = pa * z0p + pn * e;
        }
    }
    Ok(z)
}

/// Full path: sample a latent, un-standardize, decode through the VAE.
#[allow(clippy::too_many_arguments)]
pub fn sample_motion(
    den: &Denoiser,
    sched: &DiffusionSchedule,
    vae: &VaeModel,
    content: ContentLabel,
    style: &StyleCond,
    style_name: &str,
    num_frames: usize,
    params: &SampleParams,
    guidance: Option<(&StyleGuidance, usize)>,
) -> Result<MotionSequence> {
    let z = sample_latent(den, sched, content.index(), style, params, guidance)?;
    let z_raw = den.unstandardize_latent(&z);
    vae.decode_motion(&z_raw, num_frames, content.text().to_string(), style_name.to_string())
}
