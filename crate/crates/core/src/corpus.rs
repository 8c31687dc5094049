//! Labeled synthetic corpus: every (content, style) cell gets a fixed
//! number of clips with per-clip derived seeds, split stratified 80/20.
//! A corpus on disk is a `motions/` directory plus a tab-separated
//! `manifest.tsv` (path, content sentence, style word, split).

use crate::io::{read_motion, write_motion};
use crate::motion::{generate_motion, ContentLabel, MotionSequence, StyleLabel, FEATURE_DIM};
use crate::tensor::Tensor;
use crate::{mix_seed, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub samples_per_cell: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub train_frac: f64,
    pub master_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { samples_per_cell: 16, min_frames: 48, max_frames: 72, train_frac: 0.8, master_seed: 7 }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_cell < 4 {
            return Err(Error::Config(format!(
                "samples_per_cell must be >= 4, got {}",
                self.samples_per_cell
            )));
        }
        if self.min_frames < crate::motion::MIN_FRAMES
            || self.max_frames > crate::motion::MAX_FRAMES
            || self.min_frames > self.max_frames
        {
            return Err(Error::Config(format!(
                "frame range [{}, {}] outside valid [{}, {}]",
                self.min_frames,
                self.max_frames,
                crate::motion::MIN_FRAMES,
                crate::motion::MAX_FRAMES
            )));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!("train_frac must be in (0,1), got {}", self.train_frac)));
        }
        Ok(())
    }

    /// Train clips per cell: rounded fraction, clamped so both splits are
    /// non-empty.
    pub fn train_per_cell(&self) -> usize {
        let n = self.samples_per_cell;
        (((self.train_frac * n as f64) + 0.5).floor() as usize).clamp(1, n - 1)
    }
}

#[derive(Debug, Clone)]
pub struct CorpusRecord {
    pub id: String,
    pub split: Split,
    pub motion: MotionSequence,
}

impl CorpusRecord {
    pub fn content(&self) -> ContentLabel {
        ContentLabel::from_text(&self.motion.content).expect("corpus content label")
    }

    pub fn style(&self) -> StyleLabel {
        StyleLabel::from_word(&self.motion.style).expect("corpus style label")
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<CorpusRecord>,
}

impl Corpus {
    pub fn split(&self, s: Split) -> Vec<&CorpusRecord> {
        self.records.iter().filter(|r| r.split == s).collect()
    }

    pub fn train(&self) -> Vec<&CorpusRecord> {
        self.split(Split::Train)
    }

    pub fn test(&self) -> Vec<&CorpusRecord> {
        self.split(Split::Test)
    }
}

/// Build the full corpus in memory. Per-clip seeds derive from the master
/// seed and the cell coordinates, so any subset is reproducible in
/// isolation and the parallel lane matches the sequential one exactly.
pub fn build_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let train_n = cfg.train_per_cell();
    let mut specs: Vec<(ContentLabel, StyleLabel, usize)> = Vec::new();
    for content in ContentLabel::ALL {
        for style in StyleLabel::ALL {
            for k in 0..cfg.samples_per_cell {
                specs.push((content, style, k));
            }
        }
    }
    let results = crate::parallel::par_map(&specs, |&(content, style, k)| {
        let seed = mix_seed(&[cfg.master_seed, content.index() as u64, style.index() as u64, k as u64]);
        let mut frames_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x46524d53]));
        let num_frames = frames_rng.gen_range(cfg.min_frames..=cfg.max_frames);
        let motion = generate_motion(content, style, seed, num_frames)?;
        let split = if k < train_n { Split::Train } else { Split::Test };
        Ok::<_, Error>(CorpusRecord {
            id: format!("{}_{}_{:03}", content.word(), style.word(), k),
            split,
            motion,
        })
    });
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        records.push(r?);
    }
    Ok(Corpus { records })
}

/// Write `motions/*.mot` plus `manifest.tsv` under `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    let motions = dir.join("motions");
    std::fs::create_dir_all(&motions)?;
    let mut manifest = String::new();
    for rec in &corpus.records {
        let rel = format!("motions/{}.mot", rec.id);
        write_motion(&rec.motion, &dir.join(&rel))?;
        manifest.push_str(&format!(
            "{rel}\t{}\t{}\t{}\n",
            rec.motion.content,
            rec.motion.style,
            rec.split.as_str()
        ));
    }
    std::fs::write(dir.join("manifest.tsv"), manifest)?;
    Ok(())
}

/// Load a corpus previously written by [`write_corpus`].
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join("manifest.tsv");
    if !manifest_path.exists() {
        return Err(Error::MissingDependency(format!(
            "no corpus manifest at {} (run the data generation stage first)",
            manifest_path.display()
        )));
    }
    let text = std::fs::read_to_string(&manifest_path)?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(Error::Format(format!("manifest line {} malformed", lineno + 1)));
        }
        let motion = read_motion(&dir.join(parts[0]))?;
        if motion.content != parts[1] || motion.style != parts[2] {
            return Err(Error::Format(format!(
                "manifest line {} labels disagree with motion file",
                lineno + 1
            )));
        }
        let id = Path::new(parts[0])
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(parts[0])
            .to_string();
        records.push(CorpusRecord { id, split: Split::parse(parts[3])?, motion });
    }
    Ok(Corpus { records })
}

/// Stack per-sequence mean features with style and content indices —
/// the dataset for baseline linear probes.
pub fn mean_feature_dataset(records: &[&CorpusRecord]) -> (Tensor, Vec<usize>, Vec<usize>) {
    let mut rows = Vec::with_capacity(records.len() * FEATURE_DIM);
    let mut styles = Vec::with_capacity(records.len());
    let mut contents = Vec::with_capacity(records.len());
    for r in records {
        rows.extend(r.motion.mean_features());
        styles.push(r.style().index());
        contents.push(r.content().index());
    }
    (Tensor::new(records.len(), FEATURE_DIM, rows), styles, contents)
}

/// Per-column standardization parameters fitted on a feature matrix.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor) -> Self {
        let (n, d) = x.shape();
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                mean[c] += x.at(r, c);
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut std = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                let dlt = x.at(r, c) - mean[c];
                std[c] += dlt * dlt;
            }
        }
        for s in &mut std {
            *s = (*s / n as f64).sqrt().max(1e-8);
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let (n, d) = x.shape();
        assert_eq!(d, self.mean.len());
        let mut out = x.clone();
        for r in 0..n {
            for c in 0..d {
                out.set(r, c, (x.at(r, c) - self.mean[c]) / self.std[c]);
            }
        }
        out
    }
}
