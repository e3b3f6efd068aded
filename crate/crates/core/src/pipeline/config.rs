//! Run configuration with documented defaults, loaded from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::AnnotateConfig;
use crate::conditioning::ClientConfig;
use crate::denoiser::DenoiserConfig;
use crate::diffusion::ScheduleKind;
use crate::error::{Error, Result};
use crate::stylea::{StyleAConfig, SynthOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub resolution: usize,
    pub fps: f64,
    pub d_exp: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { num_videos: 16, frames_per_video: 48, resolution: 64, fps: 25.0, d_exp: crate::coeffspace::D_EXP }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageEConfig {
    #[serde(rename = "T")]
    pub diffusion_steps: usize,
    pub schedule: ScheduleKind,
    /// Frames per training window and per generated clip.
    pub sequence_length: usize,
    pub hidden_width: usize,
    pub num_blocks: usize,
    pub time_embed_dim: usize,
    pub learning_rate: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub ddim_steps: usize,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for StageEConfig {
    fn default() -> Self {
        Self {
            diffusion_steps: 1000,
            schedule: ScheduleKind::Linear,
            sequence_length: 32,
            hidden_width: 256,
            num_blocks: 4,
            time_embed_dim: 64,
            learning_rate: 1e-3,
            steps: 2000,
            batch_size: 8,
            ddim_steps: 5,
            checkpoint_every: 500,
            log_every: 10,
        }
    }
}

impl StageEConfig {
    pub fn denoiser(&self, d_exp: usize, condition_dim: usize) -> DenoiserConfig {
        DenoiserConfig {
            hidden_width: self.hidden_width,
            num_blocks: self.num_blocks,
            time_embed_dim: self.time_embed_dim,
            sequence_length: self.sequence_length,
            d_exp,
            condition_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: u64,
    pub modres_steps: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { steps: 1500, modres_steps: 400, learning_rate: 1e-3, batch_size: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageATrainConfig {
    pub model: StyleAConfig,
    /// Weight of the perceptual term.
    pub lambda: f64,
    pub adversarial_weight: f64,
    pub learning_rate: f64,
    pub disc_learning_rate: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub blend: f64,
    pub art_palette: u32,
    pub use_skips: bool,
    pub use_refine: bool,
    pub backbone_depth: usize,
    pub backbone_seed: u64,
    pub pretrain: PretrainConfig,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for StageATrainConfig {
    fn default() -> Self {
        Self {
            model: StyleAConfig::default(),
            lambda: crate::losses::PERCEPTUAL_WEIGHT,
            adversarial_weight: 0.01,
            learning_rate: 2e-4,
            disc_learning_rate: 2e-4,
            steps: 1000,
            batch_size: 4,
            grad_clip: 1.0,
            blend: 1.0,
            art_palette: 2,
            use_skips: true,
            use_refine: true,
            backbone_depth: 3,
            backbone_seed: 17,
            pretrain: PretrainConfig::default(),
            checkpoint_every: 250,
            log_every: 10,
        }
    }
}

impl StageATrainConfig {
    pub fn synth_options(&self) -> SynthOptions {
        SynthOptions { use_skips: self.use_skips, use_refine: self.use_refine }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub annotate: AnnotateConfig,
    pub clients: Vec<ClientConfig>,
    pub stage_e: StageEConfig,
    pub stage_a: StageATrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: None,
            records: None,
            out_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            annotate: AnnotateConfig::default(),
            clients: ClientConfig::defaults(),
            stage_e: StageEConfig::default(),
            stage_a: StageATrainConfig::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.stage_e;
        let a = &self.stage_a;
        positive("stage_e.learning_rate", e.learning_rate)?;
        positive("stage_a.learning_rate", a.learning_rate)?;
        positive("stage_a.disc_learning_rate", a.disc_learning_rate)?;
        positive("stage_a.pretrain.learning_rate", a.pretrain.learning_rate)?;
        positive("stage_a.grad_clip", a.grad_clip)?;
        positive("data.fps", self.data.fps)?;
        if !(a.lambda >= 0.0) || !(a.adversarial_weight >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&a.blend) {
            return Err(Error::Config(format!("stage_a.blend {} outside [0, 1]", a.blend)));
        }
        if e.batch_size == 0 || a.batch_size == 0 || a.pretrain.batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if e.ddim_steps == 0 || e.ddim_steps > e.diffusion_steps {
            return Err(Error::Config(format!("ddim_steps must lie in 1..={}", e.diffusion_steps)));
        }
        if e.sequence_length > self.data.frames_per_video {
            return Err(Error::Config(format!(
                "sequence_length {} exceeds frames_per_video {}",
                e.sequence_length, self.data.frames_per_video
            )));
        }
        if a.model.resolution != self.data.resolution {
            return Err(Error::Config(format!(
                "stage_a.model.resolution {} differs from data.resolution {}",
                a.model.resolution, self.data.resolution
            )));
        }
        if a.model.d_exp != self.data.d_exp {
            return Err(Error::Config("stage_a.model.d_exp must equal data.d_exp".into()));
        }
        if a.art_palette == 0 || a.art_palette as usize >= crate::coeffspace::NUM_PALETTES {
            return Err(Error::Config(format!("art_palette must be an art style in 1..{}", crate::coeffspace::NUM_PALETTES)));
        }
        a.model.validate()?;
        e.denoiser(self.data.d_exp, 1).validate()?;
        Ok(())
    }

    /// Path field that must point at an existing directory.
    pub fn require_dir<'a>(&self, name: &str, path: Option<&'a PathBuf>) -> Result<&'a Path> {
        let p = path.ok_or_else(|| Error::Config(format!("`{name}` is not set")))?;
        if !p.is_dir() {
            return Err(Error::Config(format!("`{name}` directory {} does not exist", p.display())));
        }
        Ok(p)
    }

    /// Digest of everything that shapes stage-E parameters at a given step.
    /// Step budgets and logging intervals are excluded so runs can be extended.
    pub fn stage_e_hash(&self) -> String {
        let mut e = self.stage_e.clone();
        (e.steps, e.checkpoint_every, e.log_every) = (0, 0, 0);
        hash_json(&(self.seed, &self.data.d_exp, &self.clients, &e))
    }

    /// Digest of everything that shapes the inversion checkpoint.
    pub fn inversion_hash(&self) -> String {
        let a = &self.stage_a;
        hash_json(&(self.seed, &a.model, &a.pretrain, a.art_palette, a.blend, a.lambda, a.backbone_depth, a.backbone_seed))
    }

    /// Digest of everything that shapes stage-A parameters at a given step.
    pub fn stage_a_hash(&self) -> String {
        let mut a = self.stage_a.clone();
        (a.steps, a.checkpoint_every, a.log_every) = (0, 0, 0);
        hash_json(&(self.seed, &a))
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(Sha256::digest(bytes))
}
