use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use talkstyle::annotation::AnnotateConfig;
use talkstyle::error::{Error, Result};
use talkstyle::pipeline::{self, GenerateRequest, RunConfig};

#[derive(Parser)]
#[command(name = "talkstyle", version, about = "Stylized talking-face generation from text, identity, and audio")]
struct Cli {
    /// JSON run configuration; defaults are used for anything omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the procedural face corpus, AU intensities, and art style.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        videos: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        palette: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Produce emotion-text records for every corpus video.
    Annotate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        /// Level boundaries as `LOW,HIGH`.
        #[arg(long, value_parser = parse_levels)]
        levels: Option<(f64, f64)>,
        #[arg(long)]
        candidates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and freeze the style encoder, generator, and ModRes.
    PretrainInversion(TrainArgs),
    /// Train the text-conditioned coefficient denoiser.
    TrainStyleE(TrainArgs),
    /// Train the content encoder, motion generator, and refinement network.
    TrainStyleA {
        #[command(flatten)]
        train: TrainArgs,
        /// Inversion checkpoint directory.
        #[arg(long)]
        inversion: Option<PathBuf>,
    },
    /// Generate a stylized clip.
    Generate {
        #[arg(long)]
        identity: PathBuf,
        /// Little-endian f32 audio features, one row per output frame.
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        text: String,
        /// Art style descriptor written by `synth-data`.
        #[arg(long)]
        art: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stage_e: Option<PathBuf>,
        #[arg(long)]
        stage_a: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// DDIM steps; defaults to the trained configuration.
        #[arg(long)]
        steps: Option<usize>,
        /// Load checkpoints even if `--config` differs from the one that trained them.
        #[arg(long)]
        allow_config_mismatch: bool,
    },
    /// Score predicted clips against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Where to write report.json and report.txt (defaults to --pred).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from the latest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

fn parse_levels(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LOW,HIGH")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok((p(a)?, p(b)?))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply(cfg: &mut RunConfig, t: &TrainArgs) {
    if let Some(c) = &t.corpus {
        cfg.corpus = Some(c.clone());
    }
    if let Some(r) = &t.records {
        cfg.records = Some(r.clone());
    }
    if let Some(o) = &t.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = t.seed {
        cfg.seed = s;
    }
}

fn run(cli: Cli) -> Result<()> {
    let config_path = cli.config.as_deref();
    let mut cfg = load_config(config_path)?;
    match cli.command {
        Command::SynthData { out, videos, frames, resolution, palette, seed } => {
            let d = &mut cfg.data;
            d.num_videos = videos.unwrap_or(d.num_videos);
            d.frames_per_video = frames.unwrap_or(d.frames_per_video);
            if let Some(r) = resolution {
                d.resolution = r;
                cfg.stage_a.model.resolution = r;
            }
            cfg.stage_a.art_palette = palette.unwrap_or(cfg.stage_a.art_palette);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.validate()?;
            let n = pipeline::synth_data(&out, &cfg)?;
            println!("wrote {n} videos to {}", out.display());
        }
        Command::Annotate { corpus, out, threshold, levels, candidates, seed } => {
            let a: &mut AnnotateConfig = &mut cfg.annotate;
            a.threshold = threshold.unwrap_or(a.threshold);
            a.level_bounds = levels.unwrap_or(a.level_bounds);
            a.candidates = candidates.unwrap_or(a.candidates);
            a.seed = seed.unwrap_or(a.seed);
            if !corpus.is_dir() {
                return Err(Error::Config(format!("corpus {} does not exist", corpus.display())));
            }
            let s = pipeline::annotate(&corpus, &out, &cfg.annotate, &cfg)?;
            println!("annotated {} of {} videos", s.num_records, s.num_videos);
            for f in &s.failures {
                eprintln!("skipped {}: {}", f.video_id, f.error);
            }
        }
        Command::PretrainInversion(t) => {
            apply(&mut cfg, &t);
            let o = pipeline::pretrain_inversion::<f32>(&cfg, t.resume)?;
            println!("inversion checkpoint at step {} (final loss {:.5})", o.manifest.step, o.losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::TrainStyleE(t) => {
            apply(&mut cfg, &t);
            let o = pipeline::train_style_e::<f32>(&cfg, t.resume)?;
            println!("stage-E checkpoint at step {} (final loss {:.5})", o.manifest.step, o.losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::TrainStyleA { train, inversion } => {
            apply(&mut cfg, &train);
            let o = pipeline::train_style_a::<f32>(&cfg, inversion.as_deref(), train.resume)?;
            println!("stage-A checkpoint at step {} (held-out L_rec {:.5})", o.manifest.step, o.heldout_rec);
        }
        Command::Generate { identity, audio, text, art, out, stage_e, stage_a, seed, steps, allow_config_mismatch } => {
            let req = GenerateRequest {
                text,
                identity,
                audio,
                art,
                out,
                config: config_path.map(|_| cfg.clone()),
                stage_e,
                stage_a,
                allow_config_mismatch,
                seed,
                num_steps: steps,
            };
            let (_, index) = pipeline::run_generate::<f32>(&req)?;
            println!("wrote {} frames to {} ({} denoiser calls)", index.n, req.out.display(), index.denoiser_calls);
        }
        Command::Eval { pred, gt, out } => {
            let report = pipeline::evaluate_dirs(&pred, &gt)?;
            pipeline::write_report(out.as_deref().unwrap_or(&pred), &report)?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
