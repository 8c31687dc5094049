//! Command-line driver: corpus generation, the four training stages,
//! evaluation, the γ ablation sweep, and stylized sampling. Exit codes:
//! 0 success, 2 usage/contract, 3 missing artifact, 4 numerical failure.

use clap::{Args, Parser, Subcommand};
use motiongen_core::align::Modality;
use motiongen_core::pipeline::{
    self, InterpolateRequest, RunConfig, StyleSource, StylizeRequest,
};
use motiongen_core::{Error, Result};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "motiongen",
    version,
    about = "Stylized motion generation: latent diffusion with parameter-free \
             style-content fusion and multi-modal style retrieval"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (`key = value` lines, `#` comments)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory shared by all stages
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    /// Override one config key, e.g. --set fusion.gamma=0.8 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic labelled motion corpus
    GenData,
    /// Stage-1 autoencoder training on the neutral-style slice
    TrainVae,
    /// Stage-2 fine-tuning on all styles; splits off the style encoder
    TrainStyleEncoder,
    /// Denoiser training: content phase, then style-encoder tuning through
    /// the parameter-free fusion hook
    TrainDiffusion,
    /// Contrastive alignment of frozen text/stub embeddings with motion
    /// style features; builds the retrieval index
    TrainAlign,
    /// Style judge and content classifier on the held-out split, plus the
    /// optional latent guidance classifier
    TrainClassifier,
    /// Generate per-pair samples and write the metric report
    Evaluate,
    /// Sweep the fusion strength, recording stylization accuracy and FID
    AblateGamma {
        /// Comma-separated γ grid, e.g. 0,0.3,0.6 (default from config)
        #[arg(long)]
        grid: Option<String>,
    },
    /// Generate one stylized motion with a provenance sidecar
    Stylize {
        /// Content: label word (walk) or sentence ("a person is walking")
        #[arg(long)]
        content: String,
        /// Style query: a word for retrieval modalities, a motion file
        /// path for --style-modality motion
        #[arg(long)]
        style: String,
        /// text | stub-image | stub-audio | motion
        #[arg(long, default_value = "text")]
        style_modality: String,
        /// Fusion strength (default from config; 0 disables styling)
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        frames: Option<usize>,
        /// Output basename (default derived from content and style)
        #[arg(long)]
        output: Option<String>,
    },
    /// Blend several retrieved styles by weight and generate once
    Interpolate {
        #[arg(long)]
        content: String,
        /// Weighted styles, e.g. 0.5:old,0.5:proud
        #[arg(long)]
        styles: String,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        output: Option<String>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for pair in &common.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{pair}'")))?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn parse_style_source(modality: &str, style: &str) -> Result<StyleSource> {
    match modality {
        "motion" => Ok(StyleSource::MotionFile(style.to_string())),
        "text" => Ok(StyleSource::Query(Modality::Text, style.to_string())),
        "stub-image" => Ok(StyleSource::Query(Modality::Image, style.to_string())),
        "stub-audio" => Ok(StyleSource::Query(Modality::Audio, style.to_string())),
        other => Err(Error::Config(format!(
            "unknown style modality '{other}'; expected text, stub-image, stub-audio or motion"
        ))),
    }
}

fn parse_weighted_styles(s: &str) -> Result<Vec<(f64, String)>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let p = part.trim();
        if p.is_empty() {
            continue;
        }
        let (w, name) = p
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("--styles expects W:STYLE entries, got '{p}'")))?;
        let weight: f64 = w
            .trim()
            .parse()
            .map_err(|e| Error::Config(format!("bad weight '{w}': {e}")))?;
        out.push((weight, name.trim().to_string()));
    }
    if out.is_empty() {
        return Err(Error::Config("--styles is empty".into()));
    }
    Ok(out)
}

fn run(cli: &Cli) -> Result<Vec<String>> {
    let cfg = load_config(&cli.common)?;
    let out = &cli.common.out;
    match &cli.command {
        Command::GenData => pipeline::gen_data(&cfg, out),
        Command::TrainVae => pipeline::train_vae(&cfg, out),
        Command::TrainStyleEncoder => pipeline::train_style_encoder(&cfg, out),
        Command::TrainDiffusion => pipeline::train_diffusion(&cfg, out),
        Command::TrainAlign => pipeline::train_align(&cfg, out),
        Command::TrainClassifier => pipeline::train_classifier(&cfg, out),
        Command::Evaluate => pipeline::evaluate(&cfg, out).map(|s| s.log),
        Command::AblateGamma { grid } => {
            let grid = match grid {
                Some(text) => {
                    let mut g = Vec::new();
                    for part in text.split(',') {
                        let p = part.trim();
                        if p.is_empty() {
                            continue;
                        }
                        g.push(
                            p.parse::<f64>()
                                .map_err(|e| Error::Config(format!("bad grid value '{p}': {e}")))?,
                        );
                    }
                    g
                }
                None => cfg.eval_gamma_grid.clone(),
            };
            pipeline::ablate_gamma(&cfg, out, &grid).map(|(_, log)| log)
        }
        Command::Stylize { content, style, style_modality, gamma, seed, frames, output } => {
            let req = StylizeRequest {
                content: content.clone(),
                source: parse_style_source(style_modality, style)?,
                gamma: *gamma,
                seed: *seed,
                frames: *frames,
                output: output.clone(),
            };
            pipeline::stylize(&cfg, out, &req)
        }
        Command::Interpolate { content, styles, gamma, seed, frames, output } => {
            let req = InterpolateRequest {
                content: content.clone(),
                styles: parse_weighted_styles(styles)?,
                gamma: *gamma,
                seed: *seed,
                frames: *frames,
                output: output.clone(),
            };
            pipeline::interpolate(&cfg, out, &req)
        }
    }
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Vocabulary(_) | Error::Dimension(_) => 2,
        Error::MissingDependency(_) => 3,
        Error::Numerical(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    match run(&cli) {
        Ok(log) => {
            for line in &log {
                println!("{line}");
            }
            println!("done in {:.1}s", started.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
