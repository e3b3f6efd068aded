use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{coeffs_to_params, render_synthetic_frame, Emotion, ExpressionSequence, Frame, GROUP_SIZE, D_EXP};
use crate::error::{Error, Result};

/// Per-frame pseudo-audio feature width.
pub const AUDIO_DIM: usize = 16;

const CLASS_TABLE_SEED: u64 = 0x5eed_c1a5;
const AUDIO_PROJECTION_SEED: u64 = 0xa0d1_0f00;

#[derive(Clone, Debug)]
pub struct CorpusConfig {
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub seed: u64,
    pub resolution: usize,
    pub fps: f64,
    pub d_exp: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { num_videos: 8, frames_per_video: 32, seed: 0, resolution: 64, fps: 25.0, d_exp: D_EXP }
    }
}

/// One procedurally generated talking-face clip.
#[derive(Clone, Debug)]
pub struct SyntheticVideo {
    pub sequence: ExpressionSequence,
    /// `(N, AUDIO_DIM)` pseudo-audio features.
    pub audio: Array2<f32>,
    pub emotion: Emotion,
    pub identity_hue: f64,
    pub frames: Vec<Frame>,
}

impl SyntheticVideo {
    pub fn video_id(&self) -> &str {
        self.sequence.video_id()
    }
}

/// Class-dependent coefficient offset. The leading entries of the three
/// semantic groups follow the usual facial prototypes; the remaining
/// dimensions get a fixed pseudo-random signature per class.
pub fn emotion_offset(emotion: Emotion, d_exp: usize) -> Vec<f32> {
    // (mouth, brow, eye) drives
    let (m, b, e) = match emotion {
        Emotion::Neutral => (0.0, 0.0, 0.0),
        Emotion::Angry => (-0.2, -0.6, 0.3),
        Emotion::Contempt => (-0.1, -0.2, -0.2),
        Emotion::Disgusted => (-0.15, -0.5, -0.4),
        Emotion::Fear => (0.3, 0.7, 0.6),
        Emotion::Happy => (0.25, 0.2, -0.3),
        Emotion::Sad => (-0.3, 0.4, -0.4),
        Emotion::Surprised => (0.55, 0.9, 0.8),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(CLASS_TABLE_SEED ^ (emotion.index() as u64 * 0x9e37_79b9));
    let mut out: Vec<f32> = (0..d_exp).map(|_| rng.random_range(-0.2..0.2)).collect();
    for (group, drive) in [m, b, e].into_iter().enumerate() {
        if (group + 1) * GROUP_SIZE <= d_exp {
            out[group * GROUP_SIZE] = drive;
            for k in 1..GROUP_SIZE {
                out[group * GROUP_SIZE + k] *= 0.25;
            }
        }
    }
    out
}

fn audio_projection() -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(AUDIO_PROJECTION_SEED);
    Array2::from_shape_fn((AUDIO_DIM, GROUP_SIZE), |_| rng.random_range(-1.0..1.0))
}

fn video_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index as u64)
        .rotate_left(17)
        ^ 0xd1b5_4a32_d192_ed03
}

fn generate_video(cfg: &CorpusConfig, index: usize, projection: &Array2<f64>) -> Result<SyntheticVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(video_seed(cfg.seed, index));
    let emotion = Emotion::ALL[rng.random_range(0..Emotion::ALL.len())];
    let identity_hue: f64 = rng.random_range(0.0..1.0);
    let offset = emotion_offset(emotion, cfg.d_exp);
    let n = cfg.frames_per_video;

    // Each dimension is a sum of at most four sinusoids; mouth coefficients
    // oscillate at syllable rate, the rest drift slowly.
    let mut values = Array2::<f32>::zeros((n, cfg.d_exp));
    for d in 0..cfg.d_exp {
        let is_mouth = d < GROUP_SIZE;
        let components = rng.random_range(1..=4);
        let mut waves = Vec::with_capacity(components);
        for _ in 0..components {
            let freq = if is_mouth { rng.random_range(1.5..5.0) } else { rng.random_range(0.1..1.0) };
            let amp = if is_mouth { rng.random_range(0.1..0.3) } else { rng.random_range(0.02..0.1) };
            let phase = rng.random_range(0.0..2.0 * PI);
            waves.push((freq, amp, phase));
        }
        for i in 0..n {
            let t = i as f64 / cfg.fps;
            let v: f64 = waves.iter().map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum();
            values[[i, d]] = offset[d] + v as f32;
        }
    }

    let mut audio = Array2::<f32>::zeros((n, AUDIO_DIM));
    let mouth = GROUP_SIZE.min(cfg.d_exp);
    for i in 0..n {
        let (a, b) = if i == 0 { (0, 1) } else { (i - 1, i) };
        for j in 0..AUDIO_DIM {
            let mut acc = 0.0;
            for k in 0..mouth {
                acc += projection[[j, k]] * (values[[b, k]] - values[[a, k]]) as f64 * 4.0;
            }
            audio[[i, j]] = (acc + rng.random_range(-0.05..0.05)) as f32;
        }
    }

    let video_id = format!("vid{index:05}");
    let sequence = ExpressionSequence::new(values, cfg.fps, video_id)?;
    let frames = if cfg.d_exp == D_EXP {
        sequence
            .values()
            .rows()
            .into_iter()
            .map(|row| {
                let p = coeffs_to_params(row.as_slice().unwrap())?.with_identity(identity_hue, 0);
                render_synthetic_frame(&p, cfg.resolution)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(SyntheticVideo { sequence, audio, emotion, identity_hue, frames })
}

/// Generates a reproducible corpus; each video draws from its own seed
/// stream, so videos are produced in parallel without affecting output.
pub fn generate_corpus_with(cfg: &CorpusConfig) -> Result<Vec<SyntheticVideo>> {
    if cfg.num_videos < 1 {
        return Err(Error::Config("corpus needs at least one video".into()));
    }
    if cfg.frames_per_video < 2 {
        return Err(Error::Config("corpus videos need at least two frames".into()));
    }
    if cfg.d_exp < 3 * GROUP_SIZE {
        return Err(Error::Config(format!("d_exp must be at least {}", 3 * GROUP_SIZE)));
    }
    let projection = audio_projection();
    (0..cfg.num_videos)
        .into_par_iter()
        .map(|i| generate_video(cfg, i, &projection))
        .collect()
}

pub fn generate_corpus(num_videos: usize, frames_per_video: usize, seed: u64) -> Result<Vec<SyntheticVideo>> {
    generate_corpus_with(&CorpusConfig { num_videos, frames_per_video, seed, ..CorpusConfig::default() })
}
