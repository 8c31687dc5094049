//! Staged pipeline: resolved run configuration, artifact plumbing between
//! training stages, stylized sampling with provenance, evaluation report,
//! and the γ ablation sweep. Every stage derives its RNG streams from the
//! single master seed and writes its resolved config next to its outputs.

use crate::align::{
    interpolate_styles, train_alignment, AlignConfig, AlignPair, AlignmentIndex, Modality,
    ModalityEmbedder, Projection,
};
use crate::corpus::{build_corpus, load_corpus, write_corpus, Corpus, CorpusConfig};
use crate::diffusion::{
    prepare_latents, sample_motion, train_content, train_stylized, Denoiser, DenoiserConfig,
    DiffusionSchedule, DiffusionTrainConfig, SampleParams, StyleCond, StyleGuidance,
};
use crate::fusion::FusionConfig;
use crate::metrics::{
    diversity, fid, mm_dist, param_report, render_param_report, r_precision_top3, sra, Classifier,
    ClassifierConfig, FeatureExtractor, GaussianFit,
};
use crate::motion::{foot_skate_frames, ContentLabel, MotionSequence, StyleLabel};
use crate::tensor::Tensor;
use crate::vae::{fine_tune, pretrain, PretrainStrategy, StyleEncoder, VaeConfig, VaeModel, VaeTrainConfig};
use crate::{mix_seed, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};

/// Fully resolved run configuration. Flat `section.key = value` text with
/// `#` comments; unknown keys are rejected.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,

    pub corpus_samples_per_cell: usize,
    pub corpus_min_frames: usize,
    pub corpus_max_frames: usize,
    pub corpus_train_frac: f64,

    pub vae_latent_tokens: usize,
    pub vae_latent_dim: usize,
    pub vae_hidden: usize,
    pub vae_blocks: usize,
    pub vae_ff_mult: usize,
    pub vae_beta: f64,
    pub vae_warmup: usize,
    pub vae_stage1_epochs: usize,
    pub vae_stage2_epochs: usize,
    pub vae_batch: usize,
    pub vae_lr: f64,
    pub vae_pretrain: PretrainStrategy,

    pub diffusion_timesteps: usize,
    pub diffusion_beta_start: f64,
    pub diffusion_beta_end: f64,
    pub diffusion_hidden: usize,
    pub diffusion_blocks: usize,
    pub diffusion_ff_mult: usize,
    pub diffusion_hook_block: usize,
    pub diffusion_content_steps: usize,
    pub diffusion_stylized_steps: usize,
    pub diffusion_batch: usize,
    pub diffusion_style_batch: usize,
    pub diffusion_lr: f64,
    pub diffusion_style_lr: f64,
    pub diffusion_cond_dropout: f64,

    pub fusion_gamma: f64,
    pub fusion_eta: f64,

    pub align_tau0: f64,
    pub align_epochs: usize,
    pub align_lr: f64,

    pub classifier_hidden: usize,
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
    pub classifier_guidance_steps: usize,

    pub sample_steps: usize,
    pub sample_w_cfg: f64,
    pub sample_w_cls: f64,
    pub sample_frames: usize,

    pub eval_per_pair: usize,
    pub eval_ablate_per_pair: usize,
    pub eval_diversity_pairs: usize,
    pub eval_rprecision_pool: usize,
    pub eval_gamma_grid: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            corpus_samples_per_cell: 16,
            corpus_min_frames: 48,
            corpus_max_frames: 72,
            corpus_train_frac: 0.8,
            vae_latent_tokens: 2,
            vae_latent_dim: 32,
            vae_hidden: 64,
            vae_blocks: 2,
            vae_ff_mult: 2,
            vae_beta: 1e-4,
            vae_warmup: 200,
            vae_stage1_epochs: 30,
            vae_stage2_epochs: 10,
            vae_batch: 4,
            vae_lr: 1e-3,
            vae_pretrain: PretrainStrategy::Both,
            diffusion_timesteps: 100,
            diffusion_beta_start: 1e-4,
            diffusion_beta_end: 0.2,
            diffusion_hidden: 64,
            diffusion_blocks: 4,
            diffusion_ff_mult: 2,
            diffusion_hook_block: 2,
            diffusion_content_steps: 2000,
            diffusion_stylized_steps: 700,
            diffusion_batch: 16,
            diffusion_style_batch: 8,
            diffusion_lr: 2e-3,
            diffusion_style_lr: 5e-4,
            diffusion_cond_dropout: 0.1,
            fusion_gamma: 0.6,
            fusion_eta: 1e-5,
            align_tau0: 0.07,
            align_epochs: 60,
            align_lr: 5e-3,
            classifier_hidden: 32,
            classifier_epochs: 200,
            classifier_lr: 5e-3,
            classifier_guidance_steps: 200,
            sample_steps: 50,
            sample_w_cfg: 2.5,
            sample_w_cls: 1.0,
            sample_frames: 60,
            eval_per_pair: 4,
            eval_ablate_per_pair: 2,
            eval_diversity_pairs: 32,
            eval_rprecision_pool: 32,
            eval_gamma_grid: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2],
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("bad value '{v}' for {key}: {e}")))
}

fn parse_grid(key: &str, v: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in v.split(',') {
        let p = part.trim();
        if p.is_empty() {
            continue;
        }
        out.push(parse_num::<f64>(key, p)?);
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse_num(key, v)?,
            "corpus.samples_per_cell" => self.corpus_samples_per_cell = parse_num(key, v)?,
            "corpus.min_frames" => self.corpus_min_frames = parse_num(key, v)?,
            "corpus.max_frames" => self.corpus_max_frames = parse_num(key, v)?,
            "corpus.train_frac" => self.corpus_train_frac = parse_num(key, v)?,
            "vae.latent_tokens" => self.vae_latent_tokens = parse_num(key, v)?,
            "vae.latent_dim" => self.vae_latent_dim = parse_num(key, v)?,
            "vae.hidden" => self.vae_hidden = parse_num(key, v)?,
            "vae.blocks" => self.vae_blocks = parse_num(key, v)?,
            "vae.ff_mult" => self.vae_ff_mult = parse_num(key, v)?,
            "vae.beta" => self.vae_beta = parse_num(key, v)?,
            "vae.warmup" => self.vae_warmup = parse_num(key, v)?,
            "vae.stage1_epochs" => self.vae_stage1_epochs = parse_num(key, v)?,
            "vae.stage2_epochs" => self.vae_stage2_epochs = parse_num(key, v)?,
            "vae.batch" => self.vae_batch = parse_num(key, v)?,
            "vae.lr" => self.vae_lr = parse_num(key, v)?,
            "vae.pretrain" => self.vae_pretrain = PretrainStrategy::parse(v)?,
            "diffusion.timesteps" => self.diffusion_timesteps = parse_num(key, v)?,
            "diffusion.beta_start" => self.diffusion_beta_start = parse_num(key, v)?,
            "diffusion.beta_end" => self.diffusion_beta_end = parse_num(key, v)?,
            "diffusion.hidden" => self.diffusion_hidden = parse_num(key, v)?,
            "diffusion.blocks" => self.diffusion_blocks = parse_num(key, v)?,
            "diffusion.ff_mult" => self.diffusion_ff_mult = parse_num(key, v)?,
            "diffusion.hook_block" => self.diffusion_hook_block = parse_num(key, v)?,
            "diffusion.content_steps" => self.diffusion_content_steps = parse_num(key, v)?,
            "diffusion.stylized_steps" => self.diffusion_stylized_steps = parse_num(key, v)?,
            "diffusion.batch" => self.diffusion_batch = parse_num(key, v)?,
            "diffusion.style_batch" => self.diffusion_style_batch = parse_num(key, v)?,
            "diffusion.lr" => self.diffusion_lr = parse_num(key, v)?,
            "diffusion.style_lr" => self.diffusion_style_lr = parse_num(key, v)?,
            "diffusion.cond_dropout" => self.diffusion_cond_dropout = parse_num(key, v)?,
            "fusion.gamma" => self.fusion_gamma = parse_num(key, v)?,
            "fusion.eta" => self.fusion_eta = parse_num(key, v)?,
            "align.tau0" => self.align_tau0 = parse_num(key, v)?,
            "align.epochs" => self.align_epochs = parse_num(key, v)?,
            "align.lr" => self.align_lr = parse_num(key, v)?,
            "classifier.hidden" => self.classifier_hidden = parse_num(key, v)?,
            "classifier.epochs" => self.classifier_epochs = parse_num(key, v)?,
            "classifier.lr" => self.classifier_lr = parse_num(key, v)?,
            "classifier.guidance_steps" => self.classifier_guidance_steps = parse_num(key, v)?,
            "sample.steps" => self.sample_steps = parse_num(key, v)?,
            "sample.w_cfg" => self.sample_w_cfg = parse_num(key, v)?,
            "sample.w_cls" => self.sample_w_cls = parse_num(key, v)?,
            "sample.frames" => self.sample_frames = parse_num(key, v)?,
            "eval.per_pair" => self.eval_per_pair = parse_num(key, v)?,
            "eval.ablate_per_pair" => self.eval_ablate_per_pair = parse_num(key, v)?,
            "eval.diversity_pairs" => self.eval_diversity_pairs = parse_num(key, v)?,
            "eval.rprecision_pool" => self.eval_rprecision_pool = parse_num(key, v)?,
            "eval.gamma_grid" => self.eval_gamma_grid = parse_grid(key, v)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical resolved form; parsing it back reproduces this config.
    pub fn render(&self) -> String {
        let grid: Vec<String> = self.eval_gamma_grid.iter().map(|g| g.to_string()).collect();
        format!(
            "seed = {}\n\
             corpus.samples_per_cell = {}\ncorpus.min_frames = {}\ncorpus.max_frames = {}\ncorpus.train_frac = {}\n\
             vae.latent_tokens = {}\nvae.latent_dim = {}\nvae.hidden = {}\nvae.blocks = {}\nvae.ff_mult = {}\n\
             vae.beta = {}\nvae.warmup = {}\nvae.stage1_epochs = {}\nvae.stage2_epochs = {}\nvae.batch = {}\nvae.lr = {}\nvae.pretrain = {}\n\
             diffusion.timesteps = {}\ndiffusion.beta_start = {}\ndiffusion.beta_end = {}\ndiffusion.hidden = {}\ndiffusion.blocks = {}\n\
             diffusion.ff_mult = {}\ndiffusion.hook_block = {}\ndiffusion.content_steps = {}\ndiffusion.stylized_steps = {}\n\
             diffusion.batch = {}\ndiffusion.style_batch = {}\ndiffusion.lr = {}\ndiffusion.style_lr = {}\ndiffusion.cond_dropout = {}\n\
             fusion.gamma = {}\nfusion.eta = {}\n\
             align.tau0 = {}\nalign.epochs = {}\nalign.lr = {}\n\
             classifier.hidden = {}\nclassifier.epochs = {}\nclassifier.lr = {}\nclassifier.guidance_steps = {}\n\
             sample.steps = {}\nsample.w_cfg = {}\nsample.w_cls = {}\nsample.frames = {}\n\
             eval.per_pair = {}\neval.ablate_per_pair = {}\neval.diversity_pairs = {}\neval.rprecision_pool = {}\neval.gamma_grid = {}\n",
            self.seed,
            self.corpus_samples_per_cell,
            self.corpus_min_frames,
            self.corpus_max_frames,
            self.corpus_train_frac,
            self.vae_latent_tokens,
            self.vae_latent_dim,
            self.vae_hidden,
            self.vae_blocks,
            self.vae_ff_mult,
            self.vae_beta,
            self.vae_warmup,
            self.vae_stage1_epochs,
            self.vae_stage2_epochs,
            self.vae_batch,
            self.vae_lr,
            self.vae_pretrain.as_str(),
            self.diffusion_timesteps,
            self.diffusion_beta_start,
            self.diffusion_beta_end,
            self.diffusion_hidden,
            self.diffusion_blocks,
            self.diffusion_ff_mult,
            self.diffusion_hook_block,
            self.diffusion_content_steps,
            self.diffusion_stylized_steps,
            self.diffusion_batch,
            self.diffusion_style_batch,
            self.diffusion_lr,
            self.diffusion_style_lr,
            self.diffusion_cond_dropout,
            self.fusion_gamma,
            self.fusion_eta,
            self.align_tau0,
            self.align_epochs,
            self.align_lr,
            self.classifier_hidden,
            self.classifier_epochs,
            self.classifier_lr,
            self.classifier_guidance_steps,
            self.sample_steps,
            self.sample_w_cfg,
            self.sample_w_cls,
            self.sample_frames,
            self.eval_per_pair,
            self.eval_ablate_per_pair,
            self.eval_diversity_pairs,
            self.eval_rprecision_pool,
            grid.join(","),
        )
    }

    fn corpus_cfg(&self) -> CorpusConfig {
        CorpusConfig {
            samples_per_cell: self.corpus_samples_per_cell,
            min_frames: self.corpus_min_frames,
            max_frames: self.corpus_max_frames,
            train_frac: self.corpus_train_frac,
            master_seed: mix_seed(&[self.seed, 0x636f7270]),
        }
    }

    fn vae_cfg(&self) -> VaeConfig {
        VaeConfig {
            latent_tokens: self.vae_latent_tokens,
            latent_dim: self.vae_latent_dim,
            hidden: self.vae_hidden,
            blocks: self.vae_blocks,
            ff_mult: self.vae_ff_mult,
            beta: self.vae_beta,
            warmup: self.vae_warmup,
        }
    }

    fn vae_tcfg(&self) -> VaeTrainConfig {
        VaeTrainConfig {
            stage1_epochs: self.vae_stage1_epochs,
            stage2_epochs: self.vae_stage2_epochs,
            batch: self.vae_batch,
            lr: self.vae_lr,
            seed: mix_seed(&[self.seed, 0x766165]),
        }
    }

    fn denoiser_cfg(&self) -> DenoiserConfig {
        DenoiserConfig {
            latent_tokens: self.vae_latent_tokens,
            latent_dim: self.vae_latent_dim,
            hidden: self.diffusion_hidden,
            blocks: self.diffusion_blocks,
            ff_mult: self.diffusion_ff_mult,
            hook_block: self.diffusion_hook_block,
        }
    }

    fn fusion_cfg(&self) -> FusionConfig {
        FusionConfig {
            gamma: self.fusion_gamma,
            eta: self.fusion_eta,
            hook_block: self.diffusion_hook_block,
        }
    }

    fn sample_params(&self, gamma: f64, seed: u64) -> SampleParams {
        SampleParams {
            steps: self.sample_steps,
            w_cfg: self.sample_w_cfg,
            w_cls: self.sample_w_cls,
            gamma,
            eta: self.fusion_eta,
            seed,
        }
    }
}

pub mod artifacts {
    pub const DATA_DIR: &str = "data";
    pub const VAE_STAGE1: &str = "vae_stage1.ckpt";
    pub const VAE: &str = "vae.ckpt";
    pub const STYLE_ENCODER: &str = "style_encoder.ckpt";
    pub const STYLE_ENCODER_TUNED: &str = "style_encoder_tuned.ckpt";
    pub const DIFFUSION: &str = "diffusion.ckpt";
    pub const PROJECTION: &str = "projection.ckpt";
    pub const INDEX: &str = "index.ckpt";
    pub const JUDGE: &str = "judge.ckpt";
    pub const CONTENT_CLF: &str = "content_clf.ckpt";
    pub const GUIDANCE: &str = "guidance.ckpt";
    pub const REPORT: &str = "report.txt";
    pub const METRICS_CSV: &str = "metrics.csv";
    pub const GAMMA_SWEEP: &str = "gamma_sweep.csv";
    pub const PARAMS_CSV: &str = "params.csv";
}

fn require(out: &Path, file: &str, name: &str) -> Result<PathBuf> {
    let p = out.join(file);
    if !p.exists() {
        return Err(Error::MissingDependency(format!(
            "{name} (expected {}; run the producing stage first)",
            p.display()
        )));
    }
    Ok(p)
}

fn load_data(out: &Path) -> Result<Corpus> {
    let dir = out.join(artifacts::DATA_DIR);
    if !dir.join("manifest.tsv").exists() {
        return Err(Error::MissingDependency(format!(
            "corpus (expected {}; run gen-data first)",
            dir.display()
        )));
    }
    load_corpus(&dir)
}

/// Write the stage log and the resolved config next to the outputs.
fn finish_stage(out: &Path, stage: &str, cfg: &RunConfig, log: &[String]) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(format!("{stage}.config")), cfg.render())?;
    let mut text = log.join("\n");
    text.push('\n');
    fs::write(out.join(format!("{stage}.log")), text)?;
    Ok(())
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let corpus = build_corpus(&cfg.corpus_cfg())?;
    fs::create_dir_all(out)?;
    write_corpus(&corpus, &out.join(artifacts::DATA_DIR))?;
    let log = vec![
        format!("generated {} motions", corpus.records.len()),
        format!("train split {} / test split {}", corpus.train().len(), corpus.test().len()),
    ];
    finish_stage(out, "gen-data", cfg, &log)?;
    Ok(log)
}

/// Stage 1: fit the motion autoencoder on the neutral-style slice of the
/// training split (the "content" corpus).
pub fn train_vae(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let corpus = load_data(out)?;
    let train = corpus.train();
    let content: Vec<&MotionSequence> = train
        .iter()
        .filter(|r| r.style() == StyleLabel::Neutral)
        .map(|r| &r.motion)
        .collect();
    let style: Vec<&MotionSequence> = train.iter().map(|r| &r.motion).collect();
    // Stage 1 is skipped entirely for the style-only ablation: the
    // checkpoint then holds fresh weights plus the fitted input scaler.
    let mut tcfg = cfg.vae_tcfg();
    if matches!(cfg.vae_pretrain, PretrainStrategy::StyleOnly) {
        tcfg.stage1_epochs = 0;
    }
    let rescue = out.join("vae_stage1.rescue.ckpt");
    let (model, mut log) =
        pretrain(cfg.vae_cfg(), tcfg, PretrainStrategy::ContentOnly, &content, &style, Some(&rescue))?;
    model.save(&out.join(artifacts::VAE_STAGE1))?;
    log.push(format!("content corpus size {}", content.len()));
    finish_stage(out, "train-vae", cfg, &log)?;
    Ok(log)
}

/// Stage 2: fine-tune the autoencoder on the full styled training split
/// and split off the style encoder. The fine-tuned model is the pipeline
/// autoencoder from here on.
pub fn train_style_encoder(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let corpus = load_data(out)?;
    let stage1 = require(out, artifacts::VAE_STAGE1, "stage-1 autoencoder")?;
    let mut model = VaeModel::load(&stage1)?;
    let train = corpus.train();
    let style: Vec<&MotionSequence> = train.iter().map(|r| &r.motion).collect();
    let mut log = Vec::new();
    if !matches!(cfg.vae_pretrain, PretrainStrategy::ContentOnly) {
        let rescue = out.join("vae.rescue.ckpt");
        log = fine_tune(&mut model, &style, cfg.vae_stage2_epochs, &cfg.vae_tcfg(), 1, "stage2", Some(&rescue))?;
    } else {
        log.push("stage 2 skipped (content-only pretraining arm)".into());
    }
    model.save(&out.join(artifacts::VAE))?;
    let se = StyleEncoder::from_vae(&model);
    se.save(&out.join(artifacts::STYLE_ENCODER))?;
    log.push(format!("styled corpus size {}", style.len()));
    finish_stage(out, "train-style-encoder", cfg, &log)?;
    Ok(log)
}

/// Phase 1 fits the denoiser on content conditions; phase 2 freezes it and
/// tunes only the style encoder through the parameter-free fusion hook.
pub fn train_diffusion(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let corpus = load_data(out)?;
    let vae = VaeModel::load(&require(out, artifacts::VAE, "vae")?)?;
    let mut se = StyleEncoder::load(&require(out, artifacts::STYLE_ENCODER, "style encoder")?)?;

    let sched = DiffusionSchedule::linear(
        cfg.diffusion_timesteps,
        cfg.diffusion_beta_start,
        cfg.diffusion_beta_end,
    )?;
    let seed = mix_seed(&[cfg.seed, 0x64696666]);
    let mut den = Denoiser::new(cfg.denoiser_cfg(), seed)?;

    let train = corpus.train();
    let seqs: Vec<(&MotionSequence, usize, usize)> = train
        .iter()
        .map(|r| (&r.motion, r.content().index(), r.style().index()))
        .collect();
    let data = prepare_latents(&mut den, &vae, &seqs)?;

    let mut pools: Vec<Vec<&MotionSequence>> = vec![Vec::new(); StyleLabel::ALL.len()];
    for r in &train {
        pools[r.style().index()].push(&r.motion);
    }

    let tcfg = DiffusionTrainConfig {
        content_steps: cfg.diffusion_content_steps,
        stylized_steps: cfg.diffusion_stylized_steps,
        batch: cfg.diffusion_batch,
        lr: cfg.diffusion_lr,
        style_lr: cfg.diffusion_style_lr,
        cond_dropout: cfg.diffusion_cond_dropout,
        seed,
    };
    let mut log = train_content(&mut den, &sched, &data, Some((&se, &pools, cfg.fusion_cfg())), &tcfg)?;

    let style_tcfg = DiffusionTrainConfig { batch: cfg.diffusion_style_batch, ..tcfg };
    log.extend(train_stylized(&mut den, &mut se, &sched, &data, &pools, cfg.fusion_cfg(), &style_tcfg)?);

    den.save(&sched, cfg.diffusion_beta_start, cfg.diffusion_beta_end, &out.join(artifacts::DIFFUSION))?;
    se.save(&out.join(artifacts::STYLE_ENCODER_TUNED))?;
    log.push(format!("latents {} / styles {}", data.items.len(), pools.iter().filter(|p| !p.is_empty()).count()));
    finish_stage(out, "train-diffusion", cfg, &log)?;
    Ok(log)
}

/// Align frozen text/stub embeddings with the tuned style encoder's pooled
/// features and build the retrieval index over the training split.
pub fn train_align(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let corpus = load_data(out)?;
    let se = StyleEncoder::load(&require(out, artifacts::STYLE_ENCODER_TUNED, "tuned style encoder")?)?;
    let embedder = ModalityEmbedder::new();

    let train = corpus.train();
    let feats = crate::parallel::par_map(&train, |r| se.encode_pooled(&r.motion));
    let mut pairs = Vec::with_capacity(train.len());
    for (r, f) in train.iter().zip(feats) {
        pairs.push(AlignPair { feature: f?, style_idx: r.style().index(), motion_id: r.id.clone() });
    }

    let acfg = AlignConfig {
        tau0: cfg.align_tau0,
        epochs: cfg.align_epochs,
        lr: cfg.align_lr,
        seed: mix_seed(&[cfg.seed, 0x616c6967]),
    };
    let hash_before = embedder.table_hash();
    let (proj, losses) = train_alignment(&pairs, &embedder, &acfg)?;
    if embedder.table_hash() != hash_before {
        return Err(Error::Numerical("frozen embedder changed during alignment".into()));
    }

    let index = AlignmentIndex::build(
        pairs.iter().map(|p| (p.feature.clone(), p.style_idx, p.motion_id.clone())).collect(),
    )?;
    index.validate()?;
    proj.save(&out.join(artifacts::PROJECTION))?;
    index.save(&out.join(artifacts::INDEX))?;

    let mut log = vec![
        format!("alignment pairs {}", pairs.len()),
        format!("first epoch loss {:.6}", losses.first().unwrap_or(&f64::NAN)),
        format!("last epoch loss {:.6}", losses.last().unwrap_or(&f64::NAN)),
    ];
    // Top-1 label retrieval over the style vocabulary, per modality.
    for m in Modality::ALL {
        let mut hits = 0;
        for style in StyleLabel::ALL {
            let top = index.retrieve(&embedder, &proj, m, style.word(), 1)?;
            if top[0].style_idx == style.index() {
                hits += 1;
            }
        }
        log.push(format!(
            "top-1 retrieval ({}) {}/{}",
            m.as_str(),
            hits,
            StyleLabel::ALL.len()
        ));
    }
    finish_stage(out, "train-align", cfg, &log)?;
    Ok(log)
}

/// Train the style judge and the content prober on the held-out test split
/// (disjoint from everything the generator saw) and calibrate them on real
/// training motions. A latent style classifier for optional guidance is
/// fitted when the diffusion checkpoint is present.
pub fn train_classifier(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let corpus = load_data(out)?;
    let se = StyleEncoder::load(&require(out, artifacts::STYLE_ENCODER_TUNED, "tuned style encoder")?)?;
    let fx = FeatureExtractor::new(se);

    let test = corpus.test();
    let train = corpus.train();
    let test_feats = fx.extract_batch(&test.iter().map(|r| &r.motion).collect::<Vec<_>>())?;
    let train_feats = fx.extract_batch(&train.iter().map(|r| &r.motion).collect::<Vec<_>>())?;
    let test_styles: Vec<usize> = test.iter().map(|r| r.style().index()).collect();
    let train_styles: Vec<usize> = train.iter().map(|r| r.style().index()).collect();
    let test_contents: Vec<usize> = test.iter().map(|r| r.content().index()).collect();
    let train_contents: Vec<usize> = train.iter().map(|r| r.content().index()).collect();

    let ccfg = ClassifierConfig {
        hidden: cfg.classifier_hidden,
        epochs: cfg.classifier_epochs,
        lr: cfg.classifier_lr,
        seed: mix_seed(&[cfg.seed, 0x6a756467]),
    };
    let mut judge = Classifier::new(fx.dim(), StyleLabel::ALL.len(), &ccfg);
    judge.fit(&test_feats, &test_styles, &ccfg)?;
    let calibration = judge.accuracy(&train_feats, &train_styles);
    if calibration < 0.95 {
        return Err(Error::Numerical(format!(
            "style judge calibration {:.2}% below the required 95%",
            100.0 * calibration
        )));
    }

    let ccfg2 = ClassifierConfig { seed: mix_seed(&[cfg.seed, 0x636f6e6a]), ..ccfg };
    let mut content_clf = Classifier::new(fx.dim(), ContentLabel::ALL.len(), &ccfg2);
    content_clf.fit(&test_feats, &test_contents, &ccfg2)?;
    let content_calibration = content_clf.accuracy(&train_feats, &train_contents);

    judge.save(&out.join(artifacts::JUDGE))?;
    content_clf.save(&out.join(artifacts::CONTENT_CLF))?;
    let mut log = vec![
        format!("judge trained on {} held-out motions", test.len()),
        format!("judge calibration on real training motions {:.2}%", 100.0 * calibration),
        format!("content calibration on real training motions {:.2}%", 100.0 * content_calibration),
    ];

    if out.join(artifacts::DIFFUSION).exists() {
        let (den, _) = Denoiser::load(&out.join(artifacts::DIFFUSION))?;
        let vae = VaeModel::load(&require(out, artifacts::VAE, "vae")?)?;
        let latents = crate::parallel::par_map(&train, |r| {
            vae.encode_mean(&r.motion).map(|z| den.standardize_latent(&z))
        });
        let mut labelled = Vec::with_capacity(train.len());
        for (r, z) in train.iter().zip(latents) {
            labelled.push((z?, r.style().index()));
        }
        let mut guidance = StyleGuidance::new(
            cfg.vae_latent_tokens,
            cfg.vae_latent_dim,
            mix_seed(&[cfg.seed, 0x67756964]),
        );
        guidance.fit(&labelled, cfg.classifier_guidance_steps, cfg.classifier_lr)?;
        guidance.save(&out.join(artifacts::GUIDANCE))?;
        log.push("latent guidance classifier fitted".into());
    } else {
        log.push("latent guidance classifier skipped (no diffusion checkpoint)".into());
    }
    finish_stage(out, "train-classifier", cfg, &log)?;
    Ok(log)
}

/// Everything sampling needs, loaded from stage artifacts.
struct GenStack {
    vae: VaeModel,
    se: StyleEncoder,
    den: Denoiser,
    sched: DiffusionSchedule,
    proj: Projection,
    index: AlignmentIndex,
    embedder: ModalityEmbedder,
    guidance: Option<StyleGuidance>,
}

impl GenStack {
    fn load(out: &Path) -> Result<Self> {
        let vae = VaeModel::load(&require(out, artifacts::VAE, "vae")?)?;
        let se = StyleEncoder::load(&require(out, artifacts::STYLE_ENCODER_TUNED, "tuned style encoder")?)?;
        let (den, sched) = Denoiser::load(&require(out, artifacts::DIFFUSION, "diffusion model")?)?;
        let proj = Projection::load(&require(out, artifacts::PROJECTION, "alignment projection")?)?;
        let index = AlignmentIndex::load(&require(out, artifacts::INDEX, "retrieval index")?)?;
        let guidance = if out.join(artifacts::GUIDANCE).exists() {
            Some(StyleGuidance::load(&out.join(artifacts::GUIDANCE))?)
        } else {
            None
        };
        Ok(Self { vae, se, den, sched, proj, index, embedder: ModalityEmbedder::new(), guidance })
    }

    fn sample(
        &self,
        cfg: &RunConfig,
        content: ContentLabel,
        style: &StyleCond,
        style_name: &str,
        style_idx: Option<usize>,
        gamma: f64,
        frames: usize,
        seed: u64,
    ) -> Result<MotionSequence> {
        let params = SampleParams { gamma, ..cfg.sample_params(gamma, seed) };
        let guidance = match (&self.guidance, style_idx) {
            (Some(g), Some(s)) if params.w_cls != 0.0 => Some((g, s)),
            _ => None,
        };
        sample_motion(
            &self.den,
            &self.sched,
            &self.vae,
            content,
            style,
            style_name,
            frames,
            &params,
            guidance,
        )
    }
}

/// Deterministic per-sample frame count inside the corpus range.
fn draw_frames(cfg: &RunConfig, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x6672616d]));
    rng.gen_range(cfg.corpus_min_frames..=cfg.corpus_max_frames)
}

/// Generate `per_pair` motions for every (content, style) pair, guided by
/// top-1 retrieval of the style word. Returns motions plus target labels.
fn generate_eval_set(
    cfg: &RunConfig,
    stack: &GenStack,
    gamma: f64,
    per_pair: usize,
    seed_tag: u64,
) -> Result<Vec<(MotionSequence, usize, usize)>> {
    let mut specs = Vec::new();
    for content in ContentLabel::ALL {
        for style in StyleLabel::ALL {
            let top = stack.index.retrieve(&stack.embedder, &stack.proj, Modality::Text, style.word(), 1)?;
            let vector = stack.index.entry(top[0].entry).vector.clone();
            for k in 0..per_pair {
                let seed = mix_seed(&[cfg.seed, seed_tag, content.index() as u64, style.index() as u64, k as u64]);
                specs.push((content, style, vector.clone(), seed));
            }
        }
    }
    let generated = crate::parallel::par_map(&specs, |(content, style, vector, seed)| {
        let frames = draw_frames(cfg, *seed);
        stack
            .sample(
                cfg,
                *content,
                &StyleCond::Pooled(vector.clone()),
                style.word(),
                Some(style.index()),
                gamma,
                frames,
                *seed,
            )
            .map(|m| (m, content.index(), style.index()))
    });
    let mut out = Vec::with_capacity(generated.len());
    for g in generated {
        out.push(g?);
    }
    Ok(out)
}

/// Numeric results of an evaluation run. Accuracy-like fields are
/// percentages in [0, 100].
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub judge_calibration: f64,
    pub content_calibration: f64,
    pub sra: f64,
    pub content_accuracy: f64,
    pub fid: f64,
    pub mm_dist: f64,
    pub r_precision: f64,
    pub diversity_generated: f64,
    pub diversity_real: f64,
    pub foot_skate_generated: f64,
    pub foot_skate_real: f64,
    pub samples: usize,
    pub log: Vec<String>,
}

/// Full evaluation: judge calibration, stylization accuracy, distribution
/// metrics, and the parameter account. Writes the report and a CSV row.
pub fn evaluate(cfg: &RunConfig, out: &Path) -> Result<EvalSummary> {
    let corpus = load_data(out)?;
    let stack = GenStack::load(out)?;
    let judge = Classifier::load(&require(out, artifacts::JUDGE, "style judge")?)?;
    let content_clf = Classifier::load(&require(out, artifacts::CONTENT_CLF, "content classifier")?)?;
    let fx = FeatureExtractor::new(stack.se.clone());

    // Calibration on real motions the judge never saw.
    let train = corpus.train();
    let test = corpus.test();
    let train_feats = fx.extract_batch(&train.iter().map(|r| &r.motion).collect::<Vec<_>>())?;
    let judge_cal = judge.accuracy(&train_feats, &train.iter().map(|r| r.style().index()).collect::<Vec<_>>());
    let content_cal =
        content_clf.accuracy(&train_feats, &train.iter().map(|r| r.content().index()).collect::<Vec<_>>());

    let generated = generate_eval_set(cfg, &stack, cfg.fusion_gamma, cfg.eval_per_pair, 0x6576616c)?;
    let gen_refs: Vec<(&MotionSequence, usize)> =
        generated.iter().map(|(m, _, s)| (m, *s)).collect();
    let sra_pct = sra(&fx, &judge, &gen_refs)?;

    let gen_feats = fx.extract_batch(&generated.iter().map(|(m, _, _)| m).collect::<Vec<_>>())?;
    let content_pred = content_clf.predict(&gen_feats);
    let content_hits = content_pred
        .iter()
        .zip(&generated)
        .filter(|(p, (_, c, _))| *p == c)
        .count();
    let content_pct = 100.0 * content_hits as f64 / generated.len() as f64;

    let test_feats = fx.extract_batch(&test.iter().map(|r| &r.motion).collect::<Vec<_>>())?;
    let fid_value = fid(&GaussianFit::fit(&test_feats)?, &GaussianFit::fit(&gen_feats)?)?;

    // Joint-space metrics: projected text features against motion features.
    let content_text_rows: Vec<Tensor> = generated
        .iter()
        .map(|(_, c, _)| stack.proj.project(&stack.embedder.embed(Modality::Text, ContentLabel::ALL[*c].text())))
        .collect::<Result<_>>()?;
    let mm = mm_dist(&Tensor::vcat(&content_text_rows), &gen_feats)?;
    let style_text_rows: Vec<Tensor> = generated
        .iter()
        .map(|(_, _, s)| stack.proj.project(&stack.embedder.embed(Modality::Text, StyleLabel::ALL[*s].word())))
        .collect::<Result<_>>()?;
    let rprec = r_precision_top3(
        &Tensor::vcat(&style_text_rows),
        &gen_feats,
        cfg.eval_rprecision_pool,
        mix_seed(&[cfg.seed, 0x72707263]),
    )?;

    let div_gen = diversity(&gen_feats, cfg.eval_diversity_pairs, mix_seed(&[cfg.seed, 0x64697631]))?;
    let div_real = diversity(&test_feats, cfg.eval_diversity_pairs, mix_seed(&[cfg.seed, 0x64697632]))?;

    let skate = |ms: &[&MotionSequence]| -> f64 {
        let vals: Vec<f64> = ms
            .iter()
            .map(|m| foot_skate_frames(m, crate::motion::CONTACT_HEIGHT, crate::motion::SKATE_SPEED))
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let skate_gen = skate(&generated.iter().map(|(m, _, _)| m).collect::<Vec<_>>());
    let skate_real = skate(&test.iter().map(|r| &r.motion).collect::<Vec<_>>());

    let rows = param_report(&[
        ("vae", &stack.vae.store),
        ("style_encoder", &stack.se.store),
        ("denoiser", &stack.den.store),
        ("projection", &stack.proj.store),
        ("judge", &judge.store),
        ("content_classifier", &content_clf.store),
    ]);

    let report = format!(
        "[calibration]\njudge_accuracy_real = {:.2}\ncontent_accuracy_real = {:.2}\n\n\
         [generation]\nsamples = {}\nper_pair = {}\ngamma = {}\nw_cfg = {}\nsteps = {}\n\n\
         [metrics]\nsra = {:.2}\ncontent_accuracy = {:.2}\nfid = {:.4}\nmm_dist = {:.4}\n\
         r_precision_top3 = {:.4}\ndiversity_generated = {:.4}\ndiversity_real = {:.4}\n\
         foot_skate_generated = {:.4}\nfoot_skate_real = {:.4}\n\n[parameters]\n{}",
        100.0 * judge_cal,
        100.0 * content_cal,
        generated.len(),
        cfg.eval_per_pair,
        cfg.fusion_gamma,
        cfg.sample_w_cfg,
        cfg.sample_steps,
        sra_pct,
        content_pct,
        fid_value,
        mm,
        rprec,
        div_gen,
        div_real,
        skate_gen,
        skate_real,
        render_param_report(&rows),
    );
    fs::write(out.join(artifacts::REPORT), &report)?;
    fs::write(
        out.join(artifacts::METRICS_CSV),
        format!(
            "sra,content_accuracy,fid,mm_dist,r_precision_top3,diversity,foot_skate,judge_calibration\n\
             {sra_pct:.4},{content_pct:.4},{fid_value:.6},{mm:.6},{rprec:.6},{div_gen:.6},{skate_gen:.6},{:.4}\n",
            100.0 * judge_cal
        ),
    )?;
    fs::write(out.join(artifacts::PARAMS_CSV), render_param_report(&rows))?;

    let log = vec![
        format!("judge calibration {:.2}%", 100.0 * judge_cal),
        format!("sra {sra_pct:.2}%"),
        format!("content accuracy {content_pct:.2}%"),
        format!("fid {fid_value:.4}"),
        format!("generated {} motions", generated.len()),
    ];
    finish_stage(out, "evaluate", cfg, &log)?;
    Ok(EvalSummary {
        judge_calibration: 100.0 * judge_cal,
        content_calibration: 100.0 * content_cal,
        sra: sra_pct,
        content_accuracy: content_pct,
        fid: fid_value,
        mm_dist: mm,
        r_precision: rprec,
        diversity_generated: div_gen,
        diversity_real: div_real,
        foot_skate_generated: skate_gen,
        foot_skate_real: skate_real,
        samples: generated.len(),
        log,
    })
}

/// One grid point of the fusion-strength sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub gamma: f64,
    pub sra: f64,
    pub fid: f64,
}

/// γ sweep: same seeds at every grid point, so the γ = 0 row is exactly
/// the unstyled baseline. Emits one CSV row per grid value.
pub fn ablate_gamma(cfg: &RunConfig, out: &Path, grid: &[f64]) -> Result<(Vec<SweepRow>, Vec<String>)> {
    if grid.is_empty() {
        return Err(Error::Config("gamma grid is empty".into()));
    }
    let corpus = load_data(out)?;
    let stack = GenStack::load(out)?;
    let judge = Classifier::load(&require(out, artifacts::JUDGE, "style judge")?)?;
    let fx = FeatureExtractor::new(stack.se.clone());
    let test = corpus.test();
    let test_feats = fx.extract_batch(&test.iter().map(|r| &r.motion).collect::<Vec<_>>())?;
    let real_fit = GaussianFit::fit(&test_feats)?;

    let mut csv = String::from("gamma,sra,fid\n");
    let mut log = Vec::new();
    let mut rows = Vec::with_capacity(grid.len());
    for &gamma in grid {
        let generated = generate_eval_set(cfg, &stack, gamma, cfg.eval_ablate_per_pair, 0x61626c61)?;
        let gen_refs: Vec<(&MotionSequence, usize)> =
            generated.iter().map(|(m, _, s)| (m, *s)).collect();
        let sra_pct = sra(&fx, &judge, &gen_refs)?;
        let gen_feats = fx.extract_batch(&generated.iter().map(|(m, _, _)| m).collect::<Vec<_>>())?;
        let fid_value = fid(&real_fit, &GaussianFit::fit(&gen_feats)?)?;
        csv.push_str(&format!("{gamma},{sra_pct:.4},{fid_value:.6}\n"));
        log.push(format!("gamma {gamma}: sra {sra_pct:.2}% fid {fid_value:.4}"));
        rows.push(SweepRow { gamma, sra: sra_pct, fid: fid_value });
    }
    fs::write(out.join(artifacts::GAMMA_SWEEP), &csv)?;
    finish_stage(out, "ablate-gamma", cfg, &log)?;
    Ok((rows, log))
}

/// How the style condition of a stylize run was produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StyleSource {
    /// Encode a motion file directly, bypassing retrieval.
    MotionFile(String),
    /// Retrieve by word through a stub modality.
    Query(Modality, String),
}

#[derive(Debug, Clone)]
pub struct StylizeRequest {
    pub content: String,
    pub source: StyleSource,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    pub frames: Option<usize>,
    pub output: Option<String>,
}

fn parse_content(s: &str) -> Result<ContentLabel> {
    ContentLabel::from_text(s)
        .or_else(|_| ContentLabel::from_word(s.trim()))
        .map_err(|_| {
            let options: Vec<String> = ContentLabel::ALL
                .iter()
                .map(|c| format!("'{}' / '{}'", c.word(), c.text()))
                .collect();
            Error::Vocabulary(format!("unknown content '{s}'; expected one of {}", options.join(", ")))
        })
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

/// Generate one stylized motion with a provenance sidecar.
pub fn stylize(cfg: &RunConfig, out: &Path, req: &StylizeRequest) -> Result<Vec<String>> {
    let stack = GenStack::load(out)?;
    let judge = Classifier::load(&require(out, artifacts::JUDGE, "style judge")?)?;
    let content = parse_content(&req.content)?;
    let gamma = req.gamma.unwrap_or(cfg.fusion_gamma);
    let seed = req.seed.unwrap_or_else(|| mix_seed(&[cfg.seed, 0x7374796c]));
    let frames = req.frames.unwrap_or(cfg.sample_frames);

    let mut provenance = vec![
        format!("content = {}", content.text()),
        format!("gamma = {gamma}"),
        format!("seed = {seed}"),
        format!("frames = {frames}"),
    ];
    let (cond, style_name, style_idx) = match &req.source {
        StyleSource::MotionFile(path) => {
            let m = crate::io::read_motion(Path::new(path))?;
            let tokens = stack.se.encode_tokens(&m)?;
            provenance.push("modality = motion".into());
            provenance.push(format!("style_input = {path}"));
            provenance.push("retrieval = bypassed".into());
            (StyleCond::Tokens(tokens), m.style.clone(), StyleLabel::from_word(&m.style).ok().map(|s| s.index()))
        }
        StyleSource::Query(modality, word) => {
            let top = stack.index.retrieve(&stack.embedder, &stack.proj, *modality, word, 1)?;
            let hit = &top[0];
            let vector = stack.index.entry(hit.entry).vector.clone();
            let label = StyleLabel::ALL[hit.style_idx];
            provenance.push(format!("modality = {}", modality.as_str()));
            provenance.push(format!("style_input = {word}"));
            provenance.push(format!("retrieved_label = {}", label.word()));
            provenance.push(format!("retrieved_motion = {}", hit.motion_id));
            provenance.push(format!("similarity = {:.6}", hit.similarity));
            (StyleCond::Pooled(vector), label.word().to_string(), Some(hit.style_idx))
        }
    };

    let motion = stack.sample(cfg, content, &cond, &style_name, style_idx, gamma, frames, seed)?;
    let fx = FeatureExtractor::new(stack.se.clone());
    let pred = judge.predict(&fx.extract(&motion)?)[0];
    provenance.push(format!("judge_prediction = {}", StyleLabel::ALL[pred].word()));

    let name = req
        .output
        .clone()
        .unwrap_or_else(|| format!("stylized_{}_{}", sanitize(content.word()), sanitize(&style_name)));
    fs::create_dir_all(out)?;
    let motion_path = out.join(format!("{name}.mot"));
    crate::io::write_motion(&motion, &motion_path)?;
    provenance.push(format!("output = {}", motion_path.display()));
    let mut ptext = provenance.join("\n");
    ptext.push('\n');
    fs::write(out.join(format!("{name}.provenance.txt")), ptext)?;

    let log = vec![
        format!("wrote {}", motion_path.display()),
        format!("judge prediction {}", StyleLabel::ALL[pred].word()),
    ];
    finish_stage(out, "stylize", cfg, &log)?;
    Ok(log)
}

#[derive(Debug, Clone)]
pub struct InterpolateRequest {
    pub content: String,
    /// (weight, style word) pairs as given on the command line.
    pub styles: Vec<(f64, String)>,
    pub seed: Option<u64>,
    pub frames: Option<usize>,
    pub gamma: Option<f64>,
    pub output: Option<String>,
}

/// Blend retrieved style features by normalized weights and sample once.
pub fn interpolate(cfg: &RunConfig, out: &Path, req: &InterpolateRequest) -> Result<Vec<String>> {
    if req.styles.is_empty() {
        return Err(Error::Contract("interpolation needs at least one style".into()));
    }
    let stack = GenStack::load(out)?;
    let content = parse_content(&req.content)?;
    let gamma = req.gamma.unwrap_or(cfg.fusion_gamma);
    let seed = req.seed.unwrap_or_else(|| mix_seed(&[cfg.seed, 0x696e7470]));
    let frames = req.frames.unwrap_or(cfg.sample_frames);

    let queries: Vec<(Modality, String)> =
        req.styles.iter().map(|(_, w)| (Modality::Text, w.clone())).collect();
    let weights: Vec<f64> = req.styles.iter().map(|(w, _)| *w).collect();
    let blended = interpolate_styles(&stack.index, &stack.embedder, &stack.proj, &queries, &weights)?;

    // Classifier guidance needs one definite target class, so it only
    // engages when a single weight carries the whole blend.
    let nonzero: Vec<usize> =
        weights.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(i, _)| i).collect();
    let style_idx = if let [only] = nonzero[..] {
        let (m, word) = &queries[only];
        Some(stack.index.retrieve(&stack.embedder, &stack.proj, *m, word, 1)?[0].style_idx)
    } else {
        None
    };

    let total: f64 = weights.iter().sum();
    let style_name = req
        .styles
        .iter()
        .map(|(w, s)| format!("{:.3}x{s}", w / total))
        .collect::<Vec<_>>()
        .join("+");
    let motion =
        stack.sample(cfg, content, &StyleCond::Pooled(blended), &style_name, style_idx, gamma, frames, seed)?;

    let name = req.output.clone().unwrap_or_else(|| format!("interp_{}", sanitize(&style_name)));
    fs::create_dir_all(out)?;
    let motion_path = out.join(format!("{name}.mot"));
    crate::io::write_motion(&motion, &motion_path)?;
    let mut provenance = vec![
        format!("content = {}", content.text()),
        format!("gamma = {gamma}"),
        format!("seed = {seed}"),
        format!("frames = {frames}"),
    ];
    for (w, s) in &req.styles {
        provenance.push(format!("weight.{s} = {}", w / total));
    }
    provenance.push(format!("output = {}", motion_path.display()));
    let mut ptext = provenance.join("\n");
    ptext.push('\n');
    fs::write(out.join(format!("{name}.provenance.txt")), ptext)?;

    let log = vec![format!("wrote {}", motion_path.display())];
    finish_stage(out, "interpolate", cfg, &log)?;
    Ok(log)
}
