//! Text-conditioned diffusion training over expression-coefficient windows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::checkpoint::{load_optimizer, load_params, open_checkpoint, save_checkpoint, CheckpointData, CheckpointManifest, Stage};
use super::config::{RunConfig, StageEConfig};
use super::log::TrainLog;
use crate::annotation::{read_records, EmotionTextRecord};
use crate::coeffspace::{read_corpus, SyntheticVideo, AUDIO_DIM};
use crate::conditioning::{build_clients, build_condition, hash_seed, ConditionVector, EncoderClients};
use crate::denoiser::{MlpDenoiser, GROUP};
use crate::diffusion::{make_schedule, training_loss, DiffusionBatch, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{Adam, Session};
use crate::scalar::Scalar;

/// One video with its encoded conditioning segments.
#[derive(Clone, Debug)]
pub struct SequenceItem<S> {
    pub video_id: String,
    /// `(frames, D_exp)`.
    pub coeffs: Array2<S>,
    pub identity: Array1<S>,
    /// `(frames, d_A)`.
    pub audio: Array2<S>,
    /// Embeddings of the retained candidate sentences.
    pub texts: Vec<Array1<S>>,
}

#[derive(Clone, Debug)]
pub struct StageEData<S> {
    pub items: Vec<SequenceItem<S>>,
}

impl<S: Scalar> StageEData<S> {
    /// Encodes every video's identity, audio, and candidate texts. Every
    /// video needs an annotation record.
    pub fn build(videos: &[SyntheticVideo], records: &[EmotionTextRecord], clients: &EncoderClients) -> Result<Self> {
        let by_id: BTreeMap<&str, &EmotionTextRecord> = records.iter().map(|r| (r.video_id.as_str(), r)).collect();
        let missing: Vec<&str> = videos.iter().map(|v| v.video_id()).filter(|id| !by_id.contains_key(id)).collect();
        if !missing.is_empty() {
            return Err(Error::Data(format!("no annotation records for videos: {}", missing.join(", "))));
        }
        let items = videos
            .iter()
            .map(|v| {
                let record = by_id[v.video_id()];
                let identity = v.frames.first().ok_or_else(|| Error::Data(format!("{} has no frames", v.video_id())))?;
                let first = record.sentences().next().unwrap_or_default();
                let c: ConditionVector<S> = build_condition(first, identity, &v.audio, clients)?;
                let te = clients.text()?;
                let texts = record
                    .sentences()
                    .map(|t| {
                        let e = te.encode(t)?;
                        if e.len() != c.text_emb().len() || e.iter().any(|x| !x.is_finite()) {
                            return Err(Error::Data(format!("bad text embedding for {}", v.video_id())));
                        }
                        Ok(e.into_iter().map(S::c).collect::<Array1<S>>())
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(SequenceItem {
                    video_id: v.video_id().to_string(),
                    coeffs: v.sequence.to_array(),
                    identity: c.identity_emb().clone(),
                    audio: c.audio_emb().clone(),
                    texts,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(items)
    }

    pub fn new(items: Vec<SequenceItem<S>>) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Data("stage-E training needs at least one video".into()))?;
        let (d, dt, di, da) = (first.coeffs.ncols(), first.texts.first().map_or(0, |t| t.len()), first.identity.len(), first.audio.ncols());
        for it in &items {
            if it.texts.is_empty() {
                return Err(Error::Data(format!("{} has no candidate texts", it.video_id)));
            }
            if it.coeffs.nrows() != it.audio.nrows() {
                return Err(Error::Data(format!("{}: {} coefficient rows vs {} audio rows", it.video_id, it.coeffs.nrows(), it.audio.nrows())));
            }
            if it.coeffs.ncols() != d || it.identity.len() != di || it.audio.ncols() != da || it.texts.iter().any(|t| t.len() != dt) {
                return Err(Error::Shape(format!("{} has inconsistent dimensions", it.video_id)));
            }
        }
        Ok(Self { items })
    }

    pub fn d_exp(&self) -> usize {
        self.items[0].coeffs.ncols()
    }

    pub fn condition_dim(&self) -> usize {
        let it = &self.items[0];
        it.texts[0].len() + it.identity.len() + it.audio.ncols()
    }

    pub fn min_frames(&self) -> usize {
        self.items.iter().map(|i| i.coeffs.nrows()).min().unwrap_or(0)
    }
}

/// Per-step generator so any step can be replayed after a resume.
pub fn step_rng(seed: u64, stage: &str, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash_seed(&[stage.as_bytes(), &seed.to_le_bytes(), &step.to_le_bytes()]))
}

pub struct StageETrainer<S: Scalar> {
    pub denoiser: MlpDenoiser<S>,
    pub adam: Adam<S>,
    pub schedule: NoiseSchedule,
    pub step: u64,
    pub config: StageEConfig,
    pub seed: u64,
}

impl<S: Scalar> StageETrainer<S> {
    pub fn new(config: &StageEConfig, data: &StageEData<S>, seed: u64) -> Result<Self> {
        if config.sequence_length > data.min_frames() {
            return Err(Error::Config(format!(
                "sequence_length {} exceeds the shortest video ({} frames)",
                config.sequence_length,
                data.min_frames()
            )));
        }
        let denoiser = MlpDenoiser::new(config.denoiser(data.d_exp(), data.condition_dim()), seed)?;
        Ok(Self {
            denoiser,
            adam: Adam::new(S::c(config.learning_rate)),
            schedule: make_schedule(config.diffusion_steps, config.schedule)?,
            step: 0,
            config: config.clone(),
            seed,
        })
    }

    /// Draws (video, window, step, noise, sentence) for every batch slot.
    pub fn sample_batch(&self, data: &StageEData<S>, step: u64) -> Result<(DiffusionBatch<S>, Vec<ConditionVector<S>>)> {
        let mut rng = step_rng(self.seed, "stage-e", step);
        let (b, n, d) = (self.config.batch_size, self.config.sequence_length, data.d_exp());
        let mut clean = Array3::zeros((b, n, d));
        let mut noise = Array3::zeros((b, n, d));
        let mut ts = Vec::with_capacity(b);
        let mut conds = Vec::with_capacity(b);
        for i in 0..b {
            let item = &data.items[rng.random_range(0..data.items.len())];
            let start = rng.random_range(0..=item.coeffs.nrows() - n);
            clean.index_axis_mut(Axis(0), i).assign(&item.coeffs.slice(s![start..start + n, ..]));
            ts.push(rng.random_range(1..=self.schedule.steps()));
            noise.index_axis_mut(Axis(0), i).mapv_inplace(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                S::c(z)
            });
            let text = &item.texts[rng.random_range(0..item.texts.len())];
            conds.push(ConditionVector::new(
                text.clone(),
                item.identity.clone(),
                item.audio.slice(s![start..start + n, ..]).to_owned(),
            )?);
        }
        Ok((DiffusionBatch::new(clean, ts, noise, &self.schedule)?, conds))
    }

    /// One optimizer step; returns the batch loss before the update.
    pub fn train_step(&mut self, data: &StageEData<S>) -> Result<f64> {
        let (batch, conds) = self.sample_batch(data, self.step)?;
        let (loss, grads) = {
            let sess = Session::training(self.denoiser.store(), &[GROUP])?;
            let loss = training_loss(&self.denoiser.bind(&sess), &batch, &conds, &self.schedule)?;
            let grads = sess.param_grads(&loss.backward());
            (loss.item().as_f64(), grads)
        };
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Numeric(format!("stage-E loss diverged at step {}", self.step)));
        }
        self.adam.step(self.denoiser.store_mut(), &grads)?;
        self.step += 1;
        Ok(loss)
    }
}

pub struct StageEOutcome<S: Scalar> {
    pub manifest: CheckpointManifest,
    pub losses: Vec<f64>,
    pub trainer: StageETrainer<S>,
}

pub fn stage_e_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("stage_e")
}

pub fn checkpoint_dir(stage_dir: &Path) -> PathBuf {
    stage_dir.join("checkpoint")
}

fn save<S: Scalar>(cfg: &RunConfig, t: &StageETrainer<S>) -> Result<CheckpointManifest> {
    save_checkpoint(
        &checkpoint_dir(&stage_e_dir(cfg)),
        CheckpointData {
            stage: Stage::E,
            step: t.step,
            config_hash: cfg.stage_e_hash(),
            config: cfg,
            store: t.denoiser.store(),
            schedule: Some(t.schedule.descriptor()),
            optimizers: vec![("denoiser", &t.adam)],
        },
    )
}

/// Trains the denoiser from an on-disk corpus and its annotation records,
/// writing checkpoints and `log.ndjson` under `out_dir/stage_e`.
pub fn train_style_e<S: Scalar>(cfg: &RunConfig, resume: bool) -> Result<StageEOutcome<S>> {
    cfg.validate()?;
    let corpus = cfg.require_dir("corpus", cfg.corpus.as_ref())?;
    let records_dir = cfg.require_dir("records", cfg.records.as_ref())?;
    let videos = read_corpus(corpus)?;
    let records = read_records(records_dir)?;
    let clients = build_clients(&cfg.clients, AUDIO_DIM)?;
    let data = StageEData::<S>::build(&videos, &records, &clients)?;
    let mut trainer = StageETrainer::new(&cfg.stage_e, &data, cfg.seed)?;
    let dir = stage_e_dir(cfg);
    let ckpt = checkpoint_dir(&dir);
    if resume && ckpt.join(super::checkpoint::MANIFEST).is_file() {
        let m = open_checkpoint(&ckpt, Stage::E, Some(&cfg.stage_e_hash()), false)?;
        load_params(&ckpt, &m, trainer.denoiser.store_mut())?;
        load_optimizer(&ckpt, &m, "denoiser", trainer.denoiser.store(), &mut trainer.adam)?;
        trainer.step = m.step;
    }
    let mut log = TrainLog::open(&dir.join("log.ndjson"), resume)?;
    let mut losses = Vec::new();
    let mut manifest = None;
    while trainer.step < cfg.stage_e.steps {
        let loss = trainer.train_step(&data)?;
        losses.push(loss);
        let step = trainer.step;
        if step % cfg.stage_e.log_every.max(1) == 0 || step == cfg.stage_e.steps {
            log.record(step, &[("loss", loss)])?;
        }
        if step % cfg.stage_e.checkpoint_every.max(1) == 0 || step == cfg.stage_e.steps {
            manifest = Some(save(cfg, &trainer)?);
        }
    }
    let manifest = match manifest {
        Some(m) => m,
        None => save(cfg, &trainer)?,
    };
    Ok(StageEOutcome { manifest, losses, trainer })
}

/// Denoiser and schedule restored from a stage-E checkpoint.
pub fn load_stage_e<S: Scalar>(dir: &Path, expected_hash: Option<&str>, allow_mismatch: bool) -> Result<(MlpDenoiser<S>, NoiseSchedule, CheckpointManifest)> {
    let m = open_checkpoint(dir, Stage::E, expected_hash, allow_mismatch)?;
    let cfg = &m.config;
    let desc = m.schedule.as_ref().ok_or_else(|| Error::Checkpoint("stage-E checkpoint lacks a schedule".into()))?;
    let schedule = NoiseSchedule::from_descriptor(desc)?;
    let condition_dim = build_clients(&cfg.clients, AUDIO_DIM)?.fused_dim()?;
    let mut denoiser = MlpDenoiser::new(cfg.stage_e.denoiser(cfg.data.d_exp, condition_dim), cfg.seed)?;
    load_params(dir, &m, denoiser.store_mut())?;
    Ok((denoiser, schedule, m))
}
