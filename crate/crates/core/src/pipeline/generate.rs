//! End-to-end inference: text, identity, and audio to stylized frames.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::read_art_style;
use super::stage_a::{load_stage_a, render_sequence, stage_a_dir};
use super::stage_e::{checkpoint_dir, load_stage_e, stage_e_dir};
use crate::coeffspace::{read_coeffs, read_frame_png, write_coeffs, write_frame_png, Frame, AUDIO_DIM};
use crate::conditioning::{build_clients, build_condition, EncoderClients};
use crate::denoiser::MlpDenoiser;
use crate::diffusion::{ddim_sample, CountingDenoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::scalar::Scalar;
use crate::stylea::{StyleAModel, SynthOptions};

pub const INDEX: &str = "index.json";

#[derive(Clone, Debug)]
pub struct GenerateOptions {
    pub num_steps: usize,
    pub seed: u64,
    pub blend: f64,
    pub synth: SynthOptions,
}

#[derive(Clone, Debug)]
pub struct Generated {
    /// `(N, D_exp)` sampled coefficients.
    pub coeffs: Array2<f32>,
    pub frames: Vec<Frame>,
    pub denoiser_calls: usize,
}

/// Sampling then per-frame stylized synthesis. Frames are rendered in
/// parallel once the sequential sampling completes.
#[allow(clippy::too_many_arguments)]
pub fn generate<S: Scalar>(
    denoiser: &MlpDenoiser<S>,
    schedule: &NoiseSchedule,
    model: &StyleAModel<S>,
    clients: &EncoderClients,
    text: &str,
    identity: &Frame,
    audio: &Array2<f32>,
    art: &Frame,
    opts: &GenerateOptions,
) -> Result<Generated> {
    let n = denoiser.config().sequence_length;
    if audio.nrows() != n {
        return Err(Error::Data(format!("audio has {} frames; the denoiser generates {n}", audio.nrows())));
    }
    let cond = build_condition::<S>(text, identity, audio, clients)?;
    let counting = CountingDenoiser::new(denoiser);
    let coeffs = ddim_sample(&counting, &cond, schedule, opts.num_steps, opts.seed)?.mapv(|v| v.as_f32());
    if coeffs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("sampled coefficients are not finite".into()));
    }
    let frames = render_sequence(model, identity, art, &coeffs, opts.blend, opts.synth)?;
    Ok(Generated { coeffs, frames, denoiser_calls: counting.calls() })
}

/// Written next to the frames of a generated clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipIndex {
    pub fps: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D_exp")]
    pub d_exp: usize,
    pub resolution: usize,
    pub text: String,
    pub seed: u64,
    pub denoiser_calls: usize,
    pub landmarks: Vec<Vec<[f64; 2]>>,
}

pub fn write_generated(out: &Path, g: &Generated, text: &str, seed: u64, fps: f64) -> Result<ClipIndex> {
    let frames_dir = out.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    for (i, f) in g.frames.iter().enumerate() {
        write_frame_png(&frames_dir.join(format!("{i:05}.png")), f)?;
    }
    write_coeffs(&out.join("coeffs.bin"), &g.coeffs)?;
    let index = ClipIndex {
        fps,
        n: g.frames.len(),
        d_exp: g.coeffs.ncols(),
        resolution: g.frames.first().map_or(0, Frame::height),
        text: text.to_string(),
        seed,
        denoiser_calls: g.denoiser_calls,
        landmarks: g.frames.iter().map(|f| f.landmarks().iter().map(|l| [l.x, l.y]).collect()).collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&index)?;
    bytes.push(b'\n');
    write_atomic(&out.join(INDEX), &bytes)?;
    Ok(index)
}

/// File-level inputs of the `generate` command.
#[derive(Clone, Debug)]
pub struct GenerateRequest {
    pub text: String,
    pub identity: PathBuf,
    pub audio: PathBuf,
    pub art: PathBuf,
    pub out: PathBuf,
    /// When set, checkpoints must have been produced by this config.
    pub config: Option<RunConfig>,
    pub stage_e: Option<PathBuf>,
    pub stage_a: Option<PathBuf>,
    pub allow_config_mismatch: bool,
    pub seed: Option<u64>,
    pub num_steps: Option<usize>,
}

pub fn run_generate<S: Scalar>(req: &GenerateRequest) -> Result<(Generated, ClipIndex)> {
    let base = req.config.clone().unwrap_or_default();
    let e_dir = req.stage_e.clone().unwrap_or_else(|| checkpoint_dir(&stage_e_dir(&base)));
    let a_dir = req.stage_a.clone().unwrap_or_else(|| checkpoint_dir(&stage_a_dir(&base)));
    let e_hash = req.config.as_ref().map(RunConfig::stage_e_hash);
    let a_hash = req.config.as_ref().map(RunConfig::stage_a_hash);
    let (denoiser, schedule, e_manifest) = load_stage_e::<S>(&e_dir, e_hash.as_deref(), req.allow_config_mismatch)?;
    let (model, a_manifest) = load_stage_a::<S>(&a_dir, a_hash.as_deref(), req.allow_config_mismatch)?;
    let cfg = &e_manifest.config;
    let clients = build_clients(&cfg.clients, AUDIO_DIM)?;
    let identity = read_frame_png(&req.identity, Vec::new())?;
    let audio = read_coeffs(&req.audio, AUDIO_DIM)?;
    let (_, art) = read_art_style(&req.art)?;
    let a_cfg = &a_manifest.config.stage_a;
    let opts = GenerateOptions {
        num_steps: req.num_steps.unwrap_or(cfg.stage_e.ddim_steps),
        seed: req.seed.unwrap_or(cfg.seed),
        blend: a_cfg.blend,
        synth: a_cfg.synth_options(),
    };
    let g = generate(&denoiser, &schedule, &model, &clients, &req.text, &identity, &audio, &art, &opts)?;
    let index = write_generated(&req.out, &g, &req.text, opts.seed, cfg.data.fps)?;
    Ok((g, index))
}
