// Scratch calibration probe (not part of the build contract): times VAE
// pretraining and reports reconstruction quality on the real corpus.
use motiongen_core::corpus::{build_corpus, CorpusConfig, Split};
use motiongen_core::motion::MotionSequence;
use motiongen_core::vae::{pretrain, PretrainStrategy, VaeConfig, VaeTrainConfig};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let corpus = build_corpus(&CorpusConfig::default()).unwrap();
    println!("corpus built: {} records in {:?}", corpus.records.len(), t0.elapsed());

    let train: Vec<&MotionSequence> = corpus.train().iter().map(|r| &r.motion).collect();
    let neutral: Vec<&MotionSequence> = corpus
        .train()
        .iter()
        .filter(|r| r.motion.style == "neutral")
        .map(|r| &r.motion)
        .collect();
    println!("train {} neutral {}", train.len(), neutral.len());

    let args: Vec<String> = std::env::args().collect();
    let s1: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let s2: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);

    let tcfg = VaeTrainConfig { stage1_epochs: s1, stage2_epochs: s2, batch: 4, lr: 1e-3, seed: 11 };
    let t1 = Instant::now();
    let (model, log) = pretrain(VaeConfig::default(), tcfg, PretrainStrategy::Both, &neutral, &train, None).unwrap();
    println!("pretrain: {:?}", t1.elapsed());
    for line in log.iter().take(3) {
        println!("  {line}");
    }
    for line in log.iter().rev().take(3).rev() {
        println!("  {line}");
    }

    // Data variance in raw space over the train split.
    let mut all = Vec::new();
    for m in &train {
        all.extend_from_slice(m.raw());
    }
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / all.len() as f64;

    let t2 = Instant::now();
    let mut mses = Vec::new();
    for m in train.iter().take(64) {
        mses.push(model.reconstruction_mse(m).unwrap());
    }
    let mse = mses.iter().sum::<f64>() / mses.len() as f64;
    println!("recon on 64 train seqs: {:?}", t2.elapsed());
    println!("raw data variance {var:.5}  mean recon mse {mse:.5}  ratio {:.4}", mse / var);

    // Also report in standardized space (what the loss actually sees).
    let mut sm = Vec::new();
    for m in train.iter().take(32) {
        let s = model.standardize(&m.feature_matrix());
        let (mu, _) = model.posterior(m).unwrap();
        let mut t = motiongen_core::tape::Tape::inference();
        let z = t.constant(&mu);
        let out = model.decode_on_tape(&mut t, z, m.num_frames());
        sm.push(t.value(out).mse(&s).unwrap());
    }
    println!("std-space recon mse {:.5}", sm.iter().sum::<f64>() / sm.len() as f64);

    // The decisive check: do pooled style-encoder features of DECODED
    // motions still classify correctly under probes trained on real ones?
    use motiongen_core::nn::{AdamW, Linear, ParamStore};
    use motiongen_core::tape::Tape;
    use motiongen_core::tensor::Tensor;
    use motiongen_core::vae::StyleEncoder;
    use rand::SeedableRng;

    let se = StyleEncoder::from_vae(&model);
    let t3 = Instant::now();
    let feats = |ms: &[&MotionSequence]| -> Tensor {
        let mut rows = Vec::new();
        for m in ms {
            rows.extend(se.encode_pooled(m).unwrap().data().to_vec());
        }
        Tensor::new(ms.len(), 32, rows)
    };
    let xtr = feats(&train);
    let ytr_style: Vec<usize> = corpus
        .train()
        .iter()
        .map(|r| r.style().index())
        .collect();
    let ytr_content: Vec<usize> = corpus.train().iter().map(|r| r.content().index()).collect();

    let test_recs = corpus.split(Split::Test);
    let test: Vec<&MotionSequence> = test_recs.iter().map(|r| &r.motion).collect();
    let xte = feats(&test);
    let yte_style: Vec<usize> = test_recs.iter().map(|r| r.style().index()).collect();
    let yte_content: Vec<usize> = test_recs.iter().map(|r| r.content().index()).collect();

    // Roundtrip test motions through the decoder.
    let mut rt = Vec::new();
    for m in &test {
        let (mu, _) = model.posterior(m).unwrap();
        rt.push(
            model
                .decode_motion(&mu, m.num_frames(), m.content.clone(), m.style.clone())
                .unwrap(),
        );
    }
    let rt_refs: Vec<&MotionSequence> = rt.iter().collect();
    let xrt = feats(&rt_refs);
    println!("feature extraction: {:?}", t3.elapsed());

    let probe_acc = |xtr: &Tensor, ytr: &[usize], xs: &[(&Tensor, &[usize], &str)], classes: usize| {
        let mut store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, "p", 32, classes, &mut rng);
        let mut opt = AdamW::new(0.05);
        opt.weight_decay = 0.0;
        for _ in 0..200 {
            let mut tape = Tape::new();
            let x = tape.constant(xtr);
            let logits = lin.forward(&mut tape, &store, x);
            let loss = tape.cross_entropy(logits, ytr);
            tape.backward(loss).unwrap();
            opt.step(&mut store, &tape);
        }
        for (x, y, name) in xs {
            let mut tape = Tape::inference();
            let xv = tape.constant(x);
            let logits = lin.forward(&mut tape, &store, xv);
            let out = tape.value(logits);
            let mut ok = 0;
            for (r, &want) in y.iter().enumerate() {
                let row = out.row_slice(r);
                let pred = row.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
                if pred == want {
                    ok += 1;
                }
            }
            println!("  {name}: {:.1}%", 100.0 * ok as f64 / y.len() as f64);
        }
    };
    println!("style probe on pooled features:");
    probe_acc(&xtr, &ytr_style, &[(&xte, &yte_style, "real test"), (&xrt, &yte_style, "roundtrip test")], 8);
    println!("content probe on pooled features:");
    probe_acc(&xtr, &ytr_content, &[(&xte, &yte_content, "real test"), (&xrt, &yte_content, "roundtrip test")], 4);
}
