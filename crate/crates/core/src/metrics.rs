//! Evaluation suite: style-recognition accuracy through a trained judge,
//! Fréchet distance between feature Gaussians, multi-modal distance,
//! R-precision, diversity, and parameter accounting.

use crate::motion::MotionSequence;
use crate::nn::{check_finite_loss, AdamW, Linear, ParamStore};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::vae::StyleEncoder;
use crate::{mix_seed, Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Frozen pooled-feature extractor over a trained style encoder.
pub struct FeatureExtractor {
    se: StyleEncoder,
}

impl FeatureExtractor {
    pub fn new(mut se: StyleEncoder) -> Self {
        se.store.set_all_trainable(false);
        Self { se }
    }

    pub fn dim(&self) -> usize {
        self.se.cfg.latent_dim
    }

    pub fn extract(&self, m: &MotionSequence) -> Result<Tensor> {
        self.se.encode_pooled(m)
    }

    /// N x d feature matrix, one row per motion.
    pub fn extract_batch(&self, motions: &[&MotionSequence]) -> Result<Tensor> {
        if motions.is_empty() {
            return Err(Error::Contract("no motions to featurize".into()));
        }
        let rows = crate::parallel::par_map(motions, |m| self.extract(m));
        let mut blocks = Vec::with_capacity(rows.len());
        for r in rows {
            blocks.push(r?);
        }
        Ok(Tensor::vcat(&blocks))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { hidden: 32, epochs: 200, lr: 5e-3, seed: 29 }
    }
}

/// Two-layer feature-space classifier; used both as the style judge and
/// the content prober.
pub struct Classifier {
    pub store: ParamStore,
    l1: Linear,
    l2: Linear,
    dim: usize,
    classes: usize,
}

impl Classifier {
    pub fn new(dim: usize, classes: usize, cfg: &ClassifierConfig) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x636c7366]));
        let l1 = Linear::new(&mut store, "c1", dim, cfg.hidden, &mut rng);
        let l2 = Linear::new(&mut store, "c2", cfg.hidden, classes, &mut rng);
        Self { store, l1, l2, dim, classes }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn logits_on_tape(&self, tape: &mut Tape, x: Tensor) -> crate::tape::Var {
        let xv = tape.constant(&x);
        let h = self.l1.forward(tape, &self.store, xv);
        let g = tape.gelu(h);
        self.l2.forward(tape, &self.store, g)
    }

    pub fn fit(&mut self, x: &Tensor, y: &[usize], cfg: &ClassifierConfig) -> Result<()> {
        if x.rows() != y.len() || x.rows() == 0 {
            return Err(Error::Contract(format!(
                "{} feature rows vs {} labels",
                x.rows(),
                y.len()
            )));
        }
        if y.iter().any(|&c| c >= self.classes) {
            return Err(Error::Vocabulary("label outside classifier range".into()));
        }
        let mut opt = AdamW::new(cfg.lr);
        for epoch in 0..cfg.epochs {
            let mut tape = Tape::new();
            let logits = self.logits_on_tape(&mut tape, x.clone());
            let loss = tape.cross_entropy(logits, y);
            tape.backward(loss)?;
            opt.step(&mut self.store, &tape);
            check_finite_loss(tape.value(loss).item(), &format!("classifier epoch {epoch}"))?;
        }
        Ok(())
    }

    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        let mut tape = Tape::inference();
        let logits = self.logits_on_tape(&mut tape, x.clone());
        let out = tape.value(logits);
        (0..out.rows())
            .map(|r| {
                let row = out.row_slice(r);
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect()
    }

    pub fn accuracy(&self, x: &Tensor, y: &[usize]) -> f64 {
        let pred = self.predict(x);
        let hits = pred.iter().zip(y).filter(|(p, t)| p == t).count();
        hits as f64 / y.len() as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = format!("dim={}\nclasses={}\n", self.dim, self.classes);
        crate::io::save_params(&self.store, &meta, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, _) = crate::io::read_params_raw(path)?;
        let (mut dim, mut classes) = (None, None);
        for line in meta.lines() {
            if let Some((k, v)) = line.split_once('=') {
                let parsed = v.parse().map_err(|e: std::num::ParseIntError| {
                    Error::Format(format!("classifier meta {k}: {e}"))
                })?;
                match k {
                    "dim" => dim = Some(parsed),
                    "classes" => classes = Some(parsed),
                    _ => {}
                }
            }
        }
        let (dim, classes) = dim
            .zip(classes)
            .ok_or_else(|| Error::Format("classifier meta missing dim/classes".into()))?;
        let mut c = Self::new(dim, classes, &ClassifierConfig::default());
        crate::io::load_params_into(&mut c.store, path)?;
        Ok(c)
    }
}

/// Style-recognition accuracy (percent) of generated motions against
/// their requested style.
pub fn sra(
    fx: &FeatureExtractor,
    judge: &Classifier,
    generated: &[(&MotionSequence, usize)],
) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::Contract("SRA over an empty set".into()));
    }
    let motions: Vec<&MotionSequence> = generated.iter().map(|(m, _)| *m).collect();
    let feats = fx.extract_batch(&motions)?;
    let pred = judge.predict(&feats);
    let hits = pred.iter().zip(generated).filter(|(p, (_, t))| *p == t).count();
    Ok(100.0 * hits as f64 / generated.len() as f64)
}

#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub mean: Tensor,
    pub cov: Tensor,
}

impl GaussianFit {
    /// Sample mean and unbiased (n−1) covariance of row features.
    pub fn fit(features: &Tensor) -> Result<Self> {
        let (n, d) = features.shape();
        if n < 2 {
            return Err(Error::Contract(format!("need at least 2 samples to fit, got {n}")));
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(features.row_slice(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; d * d];
        for r in 0..n {
            let row = features.row_slice(r);
            for i in 0..d {
                let di = row[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (row[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / (n - 1) as f64;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Ok(Self { mean: Tensor::new(1, d, mean), cov: Tensor::new(d, d, cov) })
    }

    pub fn from_moments(mean: Tensor, cov: Tensor) -> Result<Self> {
        let d = mean.cols();
        if mean.rows() != 1 || cov.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "moments disagree: mean {:?}, cov {:?}",
                mean.shape(),
                cov.shape()
            )));
        }
        for i in 0..d {
            for j in 0..d {
                if (cov.at(i, j) - cov.at(j, i)).abs() > 1e-9 {
                    return Err(Error::Contract("covariance must be symmetric".into()));
                }
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.cols()
    }
}

/// Symmetric PSD square root via eigendecomposition; eigenvalues are
/// clipped at −1e-8 (anything lower reports a numerical failure).
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-8 {
            return Err(Error::Numerical(format!("covariance eigenvalue {v} too negative")));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&vals) * q.transpose())
}

/// Fréchet distance between two feature Gaussians:
/// |μ₁−μ₂|² + Tr(Σ₁+Σ₂−2(Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2}).
pub fn fid(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!(
            "Gaussian dims differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let d = a.dim();
    let mu: f64 = a
        .mean
        .data()
        .iter()
        .zip(b.mean.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let s1 = DMatrix::from_row_slice(d, d, a.cov.data());
    let s2 = DMatrix::from_row_slice(d, d, b.cov.data());
    let r1 = psd_sqrt(&s1)?;
    let inner = &r1 * &s2 * &r1;
    let cross = psd_sqrt(&inner)?;
    let tr = s1.trace() + s2.trace() - 2.0 * cross.trace();
    Ok((mu + tr).max(0.0))
}

/// Mean Euclidean distance over matched (text feature, motion feature)
/// pairs in the joint space.
pub fn mm_dist(text_feats: &Tensor, motion_feats: &Tensor) -> Result<f64> {
    if text_feats.shape() != motion_feats.shape() {
        return Err(Error::Contract(format!(
            "pair shapes differ: {:?} vs {:?}",
            text_feats.shape(),
            motion_feats.shape()
        )));
    }
    if text_feats.rows() == 0 {
        return Err(Error::Contract("no pairs".into()));
    }
    let mut acc = 0.0;
    for r in 0..text_feats.rows() {
        let d: f64 = text_feats
            .row_slice(r)
            .iter()
            .zip(motion_feats.row_slice(r))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        acc += d.sqrt();
    }
    Ok(acc / text_feats.rows() as f64)
}

/// Fraction of queries whose true motion ranks in the top 3 of a pool of
/// `pool_size` candidates (the match plus distinct seeded distractors, so
/// uncorrelated features sit at exactly 3 / pool_size).
pub fn r_precision_top3(
    text_feats: &Tensor,
    motion_feats: &Tensor,
    pool_size: usize,
    seed: u64,
) -> Result<f64> {
    if text_feats.shape() != motion_feats.shape() {
        return Err(Error::Contract(format!(
            "pair shapes differ: {:?} vs {:?}",
            text_feats.shape(),
            motion_feats.shape()
        )));
    }
    let n = text_feats.rows();
    if pool_size < 4 {
        return Err(Error::Contract(format!("pool size {pool_size} below 4")));
    }
    if pool_size > n {
        return Err(Error::Contract(format!("pool size {pool_size} exceeds the {n} pairs")));
    }
    let dist = |q: &[f64], c: &[f64]| -> f64 {
        q.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    };
    let mut hits = 0usize;
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x72707263, i as u64]));
        let q = text_feats.row_slice(i);
        let true_d = dist(q, motion_feats.row_slice(i));
        // Partial Fisher-Yates over the other indices keeps the distractors
        // distinct. Count those strictly closer than the true match; ties
        // favor the true match so that a degenerate all-equal pool still
        // ranks it first.
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let mut closer = 0usize;
        for t in 0..pool_size - 1 {
            let pick = rng.gen_range(t..others.len());
            others.swap(t, pick);
            if dist(q, motion_feats.row_slice(others[t])) < true_d {
                closer += 1;
            }
        }
        if closer < 3 {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// The disjoint index pairs a diversity run visits, exposed so oracles can
/// replay them: indices are shuffled per block and consumed pairwise.
pub fn diversity_pairs(n: usize, num_pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x64697665]));
    let mut pairs = Vec::with_capacity(num_pairs);
    let mut block = 0u64;
    while pairs.len() < num_pairs {
        let mut idx: Vec<usize> = (0..n).collect();
        // Fisher-Yates against the seeded stream.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        for pair in idx.chunks_exact(2) {
            if pairs.len() == num_pairs {
                break;
            }
            pairs.push((pair[0], pair[1]));
        }
        block += 1;
        if block > num_pairs as u64 + 2 {
            break; // unreachable for n >= 2, pure defensive bound
        }
    }
    pairs
}

/// Mean feature distance over `num_pairs` random disjoint pairs.
pub fn diversity(features: &Tensor, num_pairs: usize, seed: u64) -> Result<f64> {
    if features.rows() < 2 {
        return Err(Error::Contract("diversity needs at least 2 motions".into()));
    }
    if num_pairs == 0 {
        return Err(Error::Contract("diversity needs at least 1 pair".into()));
    }
    let pairs = diversity_pairs(features.rows(), num_pairs, seed);
    let mut acc = 0.0;
    for (a, b) in &pairs {
        let d: f64 = features
            .row_slice(*a)
            .iter()
            .zip(features.row_slice(*b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        acc += d.sqrt();
    }
    Ok(acc / pairs.len() as f64)
}

#[derive(Debug, Clone)]
pub struct ParamRow {
    pub module: String,
    pub total: usize,
    pub learnable: usize,
}

/// Per-module parameter accounting. The fusion row is synthesized with
/// zero parameters: the style injection is purely statistical.
pub fn param_report(modules: &[(&str, &ParamStore)]) -> Vec<ParamRow> {
    let mut rows: Vec<ParamRow> = modules
        .iter()
        .map(|(name, store)| ParamRow {
            module: name.to_string(),
            total: store.num_params(),
            learnable: store.num_trainable(),
        })
        .collect();
    rows.push(ParamRow { module: "fusion".into(), total: 0, learnable: 0 });
    rows
}

pub fn render_param_report(rows: &[ParamRow]) -> String {
    let mut out = String::from("module,total_params,learnable_params\n");
    let (mut t, mut l) = (0, 0);
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.module, r.total, r.learnable));
        t += r.total;
        l += r.learnable;
    }
    out.push_str(&format!("total,{t},{l}\n"));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, CorpusConfig, Split};
    use crate::vae::{VaeConfig, VaeModel};

    fn randn_feats(n: usize, d: usize, seed: u64) -> Tensor {
        Tensor::randn(n, d, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn gaussian_fit_matches_hand_moments() {
        // Two points: mean halfway, unbiased variance = squared half-spread x 2.
        let x = Tensor::new(2, 2, vec![0.0, 0.0, 2.0, 4.0]);
        let g = GaussianFit::fit(&x).unwrap();
        assert_eq!(g.mean.data(), &[1.0, 2.0]);
        assert_eq!(g.cov.at(0, 0), 2.0);
        assert_eq!(g.cov.at(1, 1), 8.0);
        assert_eq!(g.cov.at(0, 1), 4.0);
        assert_eq!(g.cov.at(1, 0), 4.0);
        assert!(GaussianFit::fit(&Tensor::zeros(1, 2)).is_err());
    }

    #[test]
    fn fid_closed_forms_and_symmetry() {
        // N(0,1) vs N(1,1): (μ diff)² = 1.
        let n01 = GaussianFit::from_moments(Tensor::scalar(0.0), Tensor::scalar(1.0)).unwrap();
        let n11 = GaussianFit::from_moments(Tensor::scalar(1.0), Tensor::scalar(1.0)).unwrap();
        assert!((fid(&n01, &n11).unwrap() - 1.0).abs() < 1e-9);
        // N(0,1) vs N(0,4): (σ₁−σ₂)² = (2−1)² = 1.
        let n04 = GaussianFit::from_moments(Tensor::scalar(0.0), Tensor::scalar(4.0)).unwrap();
        assert!((fid(&n01, &n04).unwrap() - 1.0).abs() < 1e-9);
        // Identity and symmetry on a real multivariate fit.
        let f1 = GaussianFit::fit(&randn_feats(64, 8, 1)).unwrap();
        let f2 = GaussianFit::fit(&randn_feats(64, 8, 2)).unwrap();
        assert!(fid(&f1, &f1).unwrap() < 1e-6);
        let ab = fid(&f1, &f2).unwrap();
        let ba = fid(&f2, &f1).unwrap();
        assert!((ab - ba).abs() < 1e-6, "{ab} vs {ba}");
        assert!(ab > 0.0);
        // Dimension mismatch is a contract error.
        let g8 = GaussianFit::fit(&randn_feats(16, 4, 3)).unwrap();
        assert!(matches!(fid(&f1, &g8), Err(Error::Contract(_))));
    }

    #[test]
    fn fid_matches_full_gaussian_closed_form_in_2d() {
        // For commuting covariances (both diagonal) the trace term is
        // Σ (√a_i − √b_i)².
        let ca = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 9.0]);
        let cb = Tensor::new(2, 2, vec![4.0, 0.0, 0.0, 1.0]);
        let a = GaussianFit::from_moments(Tensor::new(1, 2, vec![0.0, 0.0]), ca).unwrap();
        let b = GaussianFit::from_moments(Tensor::new(1, 2, vec![3.0, 0.0]), cb).unwrap();
        let want = 9.0 + (1.0f64 - 2.0).powi(2) + (3.0f64 - 1.0).powi(2);
        assert!((fid(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn mm_dist_matches_loop_oracle_and_contracts() {
        let t = randn_feats(6, 5, 4);
        let m = randn_feats(6, 5, 5);
        let got = mm_dist(&t, &m).unwrap();
        let mut want = 0.0;
        for r in 0..6 {
            let mut s = 0.0;
            for c in 0..5 {
                let d = t.at(r, c) - m.at(r, c);
                s += d * d;
            }
            want += s.sqrt();
        }
        want /= 6.0;
        assert!((got - want).abs() < 1e-6);
        // Identical features → 0; joint permutation invariant.
        assert_eq!(mm_dist(&t, &t).unwrap(), 0.0);
        let perm: Vec<usize> = vec![3, 1, 5, 0, 4, 2];
        let pick = |x: &Tensor| {
            Tensor::vcat(&perm.iter().map(|&r| Tensor::row(x.row_slice(r).to_vec())).collect::<Vec<_>>())
        };
        let permuted = mm_dist(&pick(&t), &pick(&m)).unwrap();
        assert!((got - permuted).abs() < 1e-12);
        assert!(matches!(mm_dist(&t, &randn_feats(5, 5, 6)), Err(Error::Contract(_))));
    }

    #[test]
    fn r_precision_extremes_and_chance_level() {
        // Perfect correspondence: the true match is at distance zero.
        let t = randn_feats(40, 6, 7);
        assert_eq!(r_precision_top3(&t, &t, 32, 0).unwrap(), 1.0);
        // Random features sit at chance level 3/32 within 3σ.
        let n = 512;
        let tq = randn_feats(n, 8, 8);
        let tm = randn_feats(n, 8, 9);
        let frac = r_precision_top3(&tq, &tm, 32, 1).unwrap();
        let p = 3.0 / 32.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((frac - p).abs() < 3.0 * sigma, "frac {frac} vs chance {p} (3σ {})", 3.0 * sigma);
        // Determinism and the pool contract.
        assert_eq!(
            r_precision_top3(&tq, &tm, 32, 1).unwrap(),
            r_precision_top3(&tq, &tm, 32, 1).unwrap()
        );
        assert!(matches!(r_precision_top3(&tq, &tm, 3, 1), Err(Error::Contract(_))));
        assert!(matches!(r_precision_top3(&t, &t, 41, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn diversity_oracle_and_degenerate_cases() {
        let f = randn_feats(20, 4, 10);
        let got = diversity(&f, 32, 3).unwrap();
        let pairs = diversity_pairs(20, 32, 3);
        assert_eq!(pairs.len(), 32);
        let mut want = 0.0;
        for (a, b) in &pairs {
            let mut s = 0.0;
            for c in 0..4 {
                let d = f.at(*a, c) - f.at(*b, c);
                s += d * d;
            }
            want += s.sqrt();
        }
        want /= 32.0;
        assert_eq!(got, want, "diversity must replay its published pair list");
        // Disjointness within each shuffle block of 10 pairs.
        for block in pairs.chunks(10) {
            let mut seen = std::collections::HashSet::new();
            for (a, b) in block {
                assert!(seen.insert(*a), "index {a} reused inside a block");
                assert!(seen.insert(*b), "index {b} reused inside a block");
            }
        }
        // Identical motions have zero diversity.
        let same = Tensor::vcat(&vec![Tensor::row(vec![1.0, 2.0, 3.0, 4.0]); 8]);
        assert_eq!(diversity(&same, 16, 0).unwrap(), 0.0);
        assert!(diversity(&Tensor::zeros(1, 4), 4, 0).is_err());
    }

    #[test]
    fn classifier_learns_separable_clusters_and_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let classes = 4;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            for _ in 0..12 {
                let mut v = vec![0.0; 8];
                v[c] = 3.0;
                let noise = Tensor::randn(1, 8, 0.3, &mut rng);
                for (x, n) in v.iter_mut().zip(noise.data()) {
                    *x += n;
                }
                rows.push(Tensor::row(v));
                labels.push(c);
            }
        }
        let x = Tensor::vcat(&rows);
        let cfg = ClassifierConfig { epochs: 120, ..Default::default() };
        let mut clf = Classifier::new(8, classes, &cfg);
        clf.fit(&x, &labels, &cfg).unwrap();
        assert!(clf.accuracy(&x, &labels) > 0.95);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.ckpt");
        clf.save(&path).unwrap();
        let back = Classifier::load(&path).unwrap();
        assert_eq!(back.predict(&x), clf.predict(&x));

        // Label range is enforced.
        let mut bad = Classifier::new(8, 2, &cfg);
        assert!(matches!(bad.fit(&x, &labels, &cfg), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn sra_degenerate_labels_and_empty_contract() {
        // Untrained extractor is fine here: SRA only needs determinism.
        let vae = VaeModel::new(
            VaeConfig { latent_tokens: 2, latent_dim: 8, hidden: 16, blocks: 1, ff_mult: 2, beta: 1e-4, warmup: 0 },
            3,
        )
        .unwrap();
        let fx = FeatureExtractor::new(StyleEncoder::from_vae(&vae));
        let corpus = build_corpus(&CorpusConfig { samples_per_cell: 4, ..Default::default() }).unwrap();
        let test: Vec<_> = corpus.split(Split::Test).into_iter().take(8).collect();

        let cfg = ClassifierConfig { epochs: 40, ..Default::default() };
        let mut judge = Classifier::new(fx.dim(), 8, &cfg);
        let feats = fx
            .extract_batch(&test.iter().map(|r| &r.motion).collect::<Vec<_>>())
            .unwrap();
        let labels: Vec<usize> = test.iter().map(|r| r.style().index()).collect();
        judge.fit(&feats, &labels, &cfg).unwrap();

        // All-wrong constructed targets give exactly zero.
        let pred = judge.predict(&feats);
        let wrong: Vec<(&MotionSequence, usize)> = test
            .iter()
            .zip(&pred)
            .map(|(r, p)| (&r.motion, (p + 1) % 8))
            .collect();
        assert_eq!(sra(&fx, &judge, &wrong).unwrap(), 0.0);
        // Self-consistent targets give exactly 100 on the same inputs.
        let right: Vec<(&MotionSequence, usize)> =
            test.iter().zip(&pred).map(|(r, p)| (&r.motion, *p)).collect();
        assert_eq!(sra(&fx, &judge, &right).unwrap(), 100.0);
        assert!(matches!(sra(&fx, &judge, &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn param_report_accounts_every_element() {
        let cfg = ClassifierConfig::default();
        let clf = Classifier::new(8, 4, &cfg);
        let vae = VaeModel::new(
            VaeConfig { latent_tokens: 2, latent_dim: 4, hidden: 8, blocks: 1, ff_mult: 2, beta: 1e-4, warmup: 0 },
            3,
        )
        .unwrap();
        let rows = param_report(&[("judge", &clf.store), ("vae", &vae.store)]);
        assert_eq!(rows.len(), 3);
        let fusion = rows.iter().find(|r| r.module == "fusion").unwrap();
        assert_eq!(fusion.total, 0);
        assert_eq!(fusion.learnable, 0);
        let judge_row = rows.iter().find(|r| r.module == "judge").unwrap();
        assert_eq!(judge_row.total, 8 * 32 + 32 + 32 * 4 + 4);
        assert_eq!(judge_row.total, judge_row.learnable);
        let vae_row = rows.iter().find(|r| r.module == "vae").unwrap();
        assert_eq!(vae_row.total, vae.store.num_params());
        // Scaler buffers are counted in total but not learnable.
        assert!(vae_row.learnable < vae_row.total);
        let rendered = render_param_report(&rows);
        assert!(rendered.lines().count() == rows.len() + 2);
        assert!(rendered.ends_with(&format!(
            "total,{},{}\n",
            judge_row.total + vae_row.total,
            judge_row.learnable + vae_row.learnable
        )));
    }

    #[test]
    fn feature_extractor_is_frozen_and_deterministic() {
        let vae = VaeModel::new(
            VaeConfig { latent_tokens: 2, latent_dim: 8, hidden: 16, blocks: 1, ff_mult: 2, beta: 1e-4, warmup: 0 },
            3,
        )
        .unwrap();
        let fx = FeatureExtractor::new(StyleEncoder::from_vae(&vae));
        assert_eq!(fx.se.store.num_trainable(), 0);
        let m = crate::motion::generate_motion(
            crate::motion::ContentLabel::Walk,
            crate::motion::StyleLabel::Proud,
            1,
            50,
        )
        .unwrap();
        let a = fx.extract(&m).unwrap();
        let b = fx.extract(&m).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.shape(), (1, 8));
    }
}
