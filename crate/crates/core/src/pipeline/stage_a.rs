//! Art-style stage: inversion pretraining and stylized reenactment training.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use rand::Rng;
use rayon::prelude::*;

use super::checkpoint::{load_optimizer, load_params, open_checkpoint, save_checkpoint, CheckpointData, CheckpointManifest, Stage, MANIFEST};
use super::config::{RunConfig, StageATrainConfig};
use super::log::TrainLog;
use super::stage_e::{checkpoint_dir, step_rng};
use crate::autograd::Var;
use crate::coeffspace::{coeffs_to_params, landmarks_for, read_corpus, render_synthetic_frame, Frame, SynthFaceParams, SyntheticVideo, D_EXP};
use crate::error::{Error, Result};
use crate::losses::{adversarial_from_probs, fixed_random_backbone, reconstruction_loss, style2_loss, FixedRandomBackbone};
use crate::nn::{Adam, ParamGrads, Session};
use crate::scalar::Scalar;
use crate::stylea::{StyleAModel, SynthOptions, DISCRIMINATOR, GENERATOR, INVERSION_GROUPS, MODRES, STAGE_A_GROUPS, STYLE_ENCODER};

/// Neutral face in the art palette; the style reference for every video.
pub fn art_reference(palette: u32, resolution: usize) -> Result<Frame> {
    render_synthetic_frame(&SynthFaceParams::NEUTRAL.with_identity(0.5, palette), resolution)
}

/// The stylized ground-truth frame for one coefficient row.
pub fn stylized_target(coeffs: &[f32], identity_hue: f64, palette: u32, resolution: usize) -> Result<Frame> {
    render_synthetic_frame(&coeffs_to_params(coeffs)?.with_identity(identity_hue, palette), resolution)
}

fn chw<S: Scalar>(frame: &Frame) -> ArrayD<S> {
    frame.to_tensor::<S>().index_axis_move(Axis(0), 0)
}

/// Stacks `(3, r, r)` images into a `(B, 3, r, r)` constant.
fn stack<S: Scalar>(images: &[&ArrayD<S>]) -> Var<S> {
    let views: Vec<_> = images.iter().map(|a| a.view()).collect();
    Var::constant(ndarray::stack(Axis(0), &views).expect("images share a shape"))
}

#[derive(Clone, Debug)]
pub struct StageAItem<S> {
    pub video_id: String,
    pub identity_hue: f64,
    /// First natural frame.
    pub identity: ArrayD<S>,
    pub natural: Vec<ArrayD<S>>,
    pub targets: Vec<ArrayD<S>>,
    /// `(frames, D_exp)`.
    pub coeffs: Array2<S>,
}

#[derive(Clone, Debug)]
pub struct StageAData<S> {
    pub items: Vec<StageAItem<S>>,
    pub art: ArrayD<S>,
    pub palette: u32,
    pub resolution: usize,
}

impl<S: Scalar> StageAData<S> {
    pub fn build(videos: &[SyntheticVideo], palette: u32, resolution: usize) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::Data("art-style training needs at least one video".into()));
        }
        let items = videos
            .par_iter()
            .map(|v| {
                if v.sequence.dim() != D_EXP {
                    return Err(Error::Data(format!("{}: stylized targets need {D_EXP} coefficients", v.video_id())));
                }
                if v.frames.len() != v.sequence.num_frames() {
                    return Err(Error::Data(format!("{}: {} frames for {} coefficient rows", v.video_id(), v.frames.len(), v.sequence.num_frames())));
                }
                if v.frames[0].height() != resolution {
                    return Err(Error::Data(format!("{}: frames are {}px, expected {resolution}", v.video_id(), v.frames[0].height())));
                }
                let targets = v
                    .sequence
                    .values()
                    .rows()
                    .into_iter()
                    .map(|r| Ok(chw(&stylized_target(&r.to_vec(), v.identity_hue, palette, resolution)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(StageAItem {
                    video_id: v.video_id().to_string(),
                    identity_hue: v.identity_hue,
                    identity: chw(&v.frames[0]),
                    natural: v.frames.iter().map(chw).collect(),
                    targets,
                    coeffs: v.sequence.to_array(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { items, art: chw(&art_reference(palette, resolution)?), palette, resolution })
    }

    /// Splits off the last `ceil(fraction * n)` videos, keeping at least one
    /// for training.
    pub fn split(mut self, fraction: f64) -> (Self, Self) {
        let n = self.items.len();
        let k = ((fraction * n as f64).ceil() as usize).min(n.saturating_sub(1));
        let held = self.items.split_off(n - k);
        let other = Self { items: held, art: self.art.clone(), palette: self.palette, resolution: self.resolution };
        (self, other)
    }

    pub fn num_frames(&self) -> usize {
        self.items.iter().map(|i| i.targets.len()).sum()
    }
}

/// Identity, art, coefficients, and target batches.
pub struct ReenactBatch<S: Scalar> {
    pub identity: Var<S>,
    pub art: Var<S>,
    pub coeffs: Var<S>,
    pub target: Var<S>,
}

fn reenact_batch<S: Scalar>(data: &StageAData<S>, picks: &[(usize, usize)]) -> ReenactBatch<S> {
    let d = data.items[0].coeffs.ncols();
    let coeffs = ArrayD::from_shape_fn(IxDyn(&[picks.len(), d]), |ix| {
        let (v, f) = picks[ix[0]];
        data.items[v].coeffs[[f, ix[1]]]
    });
    ReenactBatch {
        identity: stack(&picks.iter().map(|&(v, _)| &data.items[v].identity).collect::<Vec<_>>()),
        art: stack(&vec![&data.art; picks.len()]),
        coeffs: Var::constant(coeffs),
        target: stack(&picks.iter().map(|&(v, f)| &data.items[v].targets[f]).collect::<Vec<_>>()),
    }
}

fn random_picks<S: Scalar, R: Rng>(data: &StageAData<S>, batch: usize, rng: &mut R) -> Vec<(usize, usize)> {
    (0..batch)
        .map(|_| {
            let v = rng.random_range(0..data.items.len());
            (v, rng.random_range(0..data.items[v].targets.len()))
        })
        .collect()
}

fn checked_step<S: Scalar>(what: &str, step: u64, loss: f64, grads: &ParamGrads<S>) -> Result<()> {
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Numeric(format!("{what} loss diverged at step {step}")));
    }
    Ok(())
}

/// Trains the style encoder and generator as an autoencoder over natural
/// and stylized frames, then ModRes toward the codes of stylized frames.
pub struct InversionTrainer<S: Scalar> {
    pub model: StyleAModel<S>,
    pub backbone: FixedRandomBackbone<S>,
    pub adam_ae: Adam<S>,
    pub adam_modres: Adam<S>,
    pub step: u64,
    pub config: StageATrainConfig,
    pub seed: u64,
}

const PLAIN: SynthOptions = SynthOptions { use_skips: false, use_refine: false };

impl<S: Scalar> InversionTrainer<S> {
    pub fn new(config: &StageATrainConfig, seed: u64) -> Result<Self> {
        let lr = S::c(config.pretrain.learning_rate);
        Ok(Self {
            model: StyleAModel::new(config.model.clone(), seed)?,
            backbone: fixed_random_backbone(config.backbone_seed, config.backbone_depth)?,
            adam_ae: Adam::new(lr),
            adam_modres: Adam::new(lr),
            step: 0,
            config: config.clone(),
            seed,
        })
    }

    pub fn total_steps(&self) -> u64 {
        self.config.pretrain.steps + self.config.pretrain.modres_steps
    }

    /// Runs the next step of whichever phase is current.
    pub fn train_step(&mut self, data: &StageAData<S>) -> Result<f64> {
        let loss = if self.step < self.config.pretrain.steps { self.autoencoder_step(data)? } else { self.modres_step(data)? };
        self.step += 1;
        if self.step == self.total_steps() {
            for g in INVERSION_GROUPS {
                self.model.store_mut().freeze(g);
            }
        }
        Ok(loss)
    }

    fn autoencoder_step(&mut self, data: &StageAData<S>) -> Result<f64> {
        let mut rng = step_rng(self.seed, "inversion", self.step);
        let picks = random_picks(data, self.config.pretrain.batch_size, &mut rng);
        let images: Vec<&ArrayD<S>> = picks
            .iter()
            .enumerate()
            .map(|(i, &(v, f))| if i % 2 == 0 { &data.items[v].natural[f] } else { &data.items[v].targets[f] })
            .collect();
        let x = stack(&images);
        let (loss, grads) = {
            let sess = Session::training(self.model.store(), &[STYLE_ENCODER, GENERATOR])?;
            let w = self.model.encode_style(&sess, &x)?;
            let pred = self.model.synthesize_var(&sess, &w, None, None, PLAIN)?;
            let l = style2_loss(&pred, &x, &self.backbone, self.config.lambda)?;
            let grads = sess.param_grads(&l.total.backward());
            (l.total.item().as_f64(), grads)
        };
        checked_step("inversion", self.step, loss, &grads)?;
        self.adam_ae.step(self.model.store_mut(), &grads)?;
        Ok(loss)
    }

    fn modres_step(&mut self, data: &StageAData<S>) -> Result<f64> {
        let mut rng = step_rng(self.seed, "inversion", self.step);
        let picks = random_picks(data, self.config.pretrain.batch_size, &mut rng);
        let b = reenact_batch(data, &picks);
        let natural = stack(&picks.iter().map(|&(v, f)| &data.items[v].natural[f]).collect::<Vec<_>>());
        let (loss, grads) = {
            let sess = Session::training(self.model.store(), &[MODRES])?;
            let w_i = self.model.encode_style(&sess, &natural)?;
            let w_s = self.model.encode_style(&sess, &b.art)?;
            let w_t = self.model.encode_style(&sess, &b.target)?;
            let w = self.model.modres.forward(&sess, &w_i, &w_s, S::c(self.config.blend.max(1e-3)))?;
            let l = (&w - &w_t).square().mean();
            let grads = sess.param_grads(&l.backward());
            (l.item().as_f64(), grads)
        };
        checked_step("modres", self.step, loss, &grads)?;
        self.adam_modres.step(self.model.store_mut(), &grads)?;
        Ok(loss)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageALosses {
    pub total: f64,
    pub rec: f64,
    pub prec: f64,
    pub gen: f64,
    pub disc: f64,
}

/// Trains the content encoder, motion generator, and refinement network
/// against stylized targets with the inversion networks frozen.
pub struct StageATrainer<S: Scalar> {
    pub model: StyleAModel<S>,
    pub backbone: FixedRandomBackbone<S>,
    pub adam_g: Adam<S>,
    pub adam_d: Adam<S>,
    pub step: u64,
    pub config: StageATrainConfig,
    pub seed: u64,
}

impl<S: Scalar> StageATrainer<S> {
    /// Takes a model whose inversion groups are already trained; freezes them.
    pub fn new(mut model: StyleAModel<S>, config: &StageATrainConfig, seed: u64) -> Result<Self> {
        for g in INVERSION_GROUPS {
            model.store_mut().freeze(g);
        }
        Ok(Self {
            model,
            backbone: fixed_random_backbone(config.backbone_seed, config.backbone_depth)?,
            adam_g: Adam::new(S::c(config.learning_rate)),
            adam_d: Adam::new(S::c(config.disc_learning_rate)),
            step: 0,
            config: config.clone(),
            seed,
        })
    }

    /// Hashes of the frozen inversion groups.
    pub fn frozen_hashes(&self) -> Vec<(String, String)> {
        INVERSION_GROUPS.iter().map(|g| (g.to_string(), self.model.store().group_hash(g))).collect()
    }

    pub fn train_step(&mut self, data: &StageAData<S>) -> Result<StageALosses> {
        let mut rng = step_rng(self.seed, "stage-a", self.step);
        let picks = random_picks(data, self.config.batch_size, &mut rng);
        let b = reenact_batch(data, &picks);
        let opts = self.config.synth_options();
        let blend = S::c(self.config.blend);
        let adv = self.config.adversarial_weight;
        let mut out = StageALosses::default();
        let (fake, mut grads) = {
            let sess = Session::training(self.model.store(), &STAGE_A_GROUPS)?;
            let pred = self.model.stage_a_forward(&sess, &b.identity, &b.art, &b.coeffs, blend, opts)?;
            let l = style2_loss(&pred, &b.target, &self.backbone, self.config.lambda)?;
            out.rec = l.rec.as_f64();
            out.prec = l.prec.as_f64();
            let mut total = l.total;
            if adv > 0.0 {
                let p_fake = self.model.discriminator.forward(&sess, &pred)?;
                let p_real = self.model.discriminator.forward(&sess, &b.target)?;
                let (_, gen) = adversarial_from_probs(&p_real, &p_fake)?;
                out.gen = gen.item().as_f64();
                total = &total + &gen.scale(S::c(adv));
            }
            out.total = total.item().as_f64();
            let grads = sess.param_grads(&total.backward());
            (pred.value().clone(), grads)
        };
        checked_step("stage-A", self.step, out.total, &grads)?;
        grads.clip_global_norm(S::c(self.config.grad_clip));
        self.adam_g.step(self.model.store_mut(), &grads)?;
        if adv > 0.0 {
            let grads = {
                let sess = Session::training(self.model.store(), &[DISCRIMINATOR])?;
                let p_real = self.model.discriminator.forward(&sess, &b.target)?;
                let p_fake = self.model.discriminator.forward(&sess, &Var::constant(fake))?;
                let (disc, _) = adversarial_from_probs(&p_real, &p_fake)?;
                out.disc = disc.item().as_f64();
                sess.param_grads(&disc.backward())
            };
            checked_step("discriminator", self.step, out.disc, &grads)?;
            let mut grads = grads;
            grads.clip_global_norm(S::c(self.config.grad_clip));
            self.adam_d.step(self.model.store_mut(), &grads)?;
        }
        self.step += 1;
        Ok(out)
    }

    /// Mean per-frame `L_rec` over every frame of `data`.
    pub fn evaluate_rec(&self, data: &StageAData<S>) -> Result<f64> {
        mean_rec(&self.model, data, self.config.blend, self.config.synth_options())
    }
}

/// Mean per-frame reconstruction loss of the full stylized pipeline.
pub fn mean_rec<S: Scalar>(model: &StyleAModel<S>, data: &StageAData<S>, blend: f64, opts: SynthOptions) -> Result<f64> {
    let picks: Vec<(usize, usize)> =
        data.items.iter().enumerate().flat_map(|(v, it)| (0..it.targets.len()).map(move |f| (v, f))).collect();
    let sums = picks
        .par_chunks(8)
        .map(|chunk| {
            let sess = Session::inference(model.store());
            let b = reenact_batch(data, chunk);
            let pred = model.stage_a_forward(&sess, &b.identity, &b.art, &b.coeffs, S::c(blend), opts)?;
            let mut s = 0.0;
            for i in 0..chunk.len() {
                let p = pred.narrow(0, i, 1);
                let t = b.target.narrow(0, i, 1);
                s += reconstruction_loss(&p, &t)?.item().as_f64();
            }
            Ok(s)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sums.iter().sum::<f64>() / picks.len().max(1) as f64)
}

/// Renders stylized frames for a coefficient sequence `(N, D_exp)`, in
/// parallel. Landmarks are the analytic ones implied by each row.
pub fn render_sequence<S: Scalar>(
    model: &StyleAModel<S>,
    identity: &Frame,
    art: &Frame,
    coeffs: &Array2<f32>,
    blend: f64,
    opts: SynthOptions,
) -> Result<Vec<Frame>> {
    let r = model.config().resolution;
    if identity.height() != r || art.height() != r {
        return Err(Error::Data(format!("identity and art images must be {r}x{r}")));
    }
    let rows: Vec<usize> = (0..coeffs.nrows()).collect();
    let (id, st) = (chw::<S>(identity), chw::<S>(art));
    let chunks = rows
        .par_chunks(8)
        .map(|chunk| {
            let sess = Session::inference(model.store());
            let n = chunk.len();
            let c = ArrayD::from_shape_fn(IxDyn(&[n, coeffs.ncols()]), |ix| S::c(coeffs[[chunk[ix[0]], ix[1]]] as f64));
            let pred = model.stage_a_forward(
                &sess,
                &stack(&vec![&id; n]),
                &stack(&vec![&st; n]),
                &Var::constant(c),
                S::c(blend),
                opts,
            )?;
            let px = pred.value();
            chunk
                .iter()
                .enumerate()
                .map(|(i, &row)| {
                    let params = coeffs_to_params(&coeffs.row(row).to_vec())?;
                    let img = px.index_axis(Axis(0), i).into_dimensionality::<ndarray::Ix3>().unwrap();
                    if img.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numeric(format!("non-finite pixels in frame {row}")));
                    }
                    Frame::from_values(img, landmarks_for(&params, r))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

fn load_stage_a_data<S: Scalar>(cfg: &RunConfig) -> Result<StageAData<S>> {
    let corpus = cfg.require_dir("corpus", cfg.corpus.as_ref())?;
    let videos = read_corpus(corpus)?;
    StageAData::build(&videos, cfg.stage_a.art_palette, cfg.stage_a.model.resolution)
}

pub fn inversion_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("inversion")
}

pub fn stage_a_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("stage_a")
}

fn save_inversion<S: Scalar>(cfg: &RunConfig, t: &InversionTrainer<S>) -> Result<CheckpointManifest> {
    save_checkpoint(
        &checkpoint_dir(&inversion_dir(cfg)),
        CheckpointData {
            stage: Stage::Inversion,
            step: t.step,
            config_hash: cfg.inversion_hash(),
            config: cfg,
            store: t.model.store(),
            schedule: None,
            optimizers: vec![("autoencoder", &t.adam_ae), ("modres", &t.adam_modres)],
        },
    )
}

pub struct InversionOutcome<S: Scalar> {
    pub manifest: CheckpointManifest,
    pub losses: Vec<f64>,
    pub trainer: InversionTrainer<S>,
}

/// Pretrains the inversion networks and writes a checkpoint with them frozen.
pub fn pretrain_inversion<S: Scalar>(cfg: &RunConfig, resume: bool) -> Result<InversionOutcome<S>> {
    cfg.validate()?;
    let data = load_stage_a_data::<S>(cfg)?;
    let mut trainer = InversionTrainer::new(&cfg.stage_a, cfg.seed)?;
    let dir = inversion_dir(cfg);
    let ckpt = checkpoint_dir(&dir);
    if resume && ckpt.join(MANIFEST).is_file() {
        let m = open_checkpoint(&ckpt, Stage::Inversion, Some(&cfg.inversion_hash()), false)?;
        load_params(&ckpt, &m, trainer.model.store_mut())?;
        load_optimizer(&ckpt, &m, "autoencoder", trainer.model.store(), &mut trainer.adam_ae)?;
        load_optimizer(&ckpt, &m, "modres", trainer.model.store(), &mut trainer.adam_modres)?;
        trainer.step = m.step;
    }
    let mut log = TrainLog::open(&dir.join("log.ndjson"), resume)?;
    let total = trainer.total_steps();
    let every = cfg.stage_a.checkpoint_every.max(1);
    let mut losses = Vec::new();
    while trainer.step < total {
        let phase = if trainer.step < cfg.stage_a.pretrain.steps { 0.0 } else { 1.0 };
        let loss = trainer.train_step(&data)?;
        losses.push(loss);
        if trainer.step % cfg.stage_a.log_every.max(1) == 0 || trainer.step == total {
            log.record(trainer.step, &[("loss", loss), ("phase", phase)])?;
        }
        if trainer.step % every == 0 && trainer.step < total {
            save_inversion(cfg, &trainer)?;
        }
    }
    for g in INVERSION_GROUPS {
        trainer.model.store_mut().freeze(g);
    }
    let manifest = save_inversion(cfg, &trainer)?;
    Ok(InversionOutcome { manifest, losses, trainer })
}

fn save_stage_a<S: Scalar>(cfg: &RunConfig, t: &StageATrainer<S>) -> Result<CheckpointManifest> {
    save_checkpoint(
        &checkpoint_dir(&stage_a_dir(cfg)),
        CheckpointData {
            stage: Stage::A,
            step: t.step,
            config_hash: cfg.stage_a_hash(),
            config: cfg,
            store: t.model.store(),
            schedule: None,
            optimizers: vec![("generator", &t.adam_g), ("discriminator", &t.adam_d)],
        },
    )
}

pub struct StageAOutcome<S: Scalar> {
    pub manifest: CheckpointManifest,
    pub losses: Vec<StageALosses>,
    pub heldout_rec: f64,
    pub trainer: StageATrainer<S>,
}

/// Fraction of videos held out for the stage-A evaluation.
pub const HELDOUT_FRACTION: f64 = 0.1;

/// Trains stage A from a pretrained inversion checkpoint (default
/// `out_dir/inversion/checkpoint`).
pub fn train_style_a<S: Scalar>(cfg: &RunConfig, inversion: Option<&Path>, resume: bool) -> Result<StageAOutcome<S>> {
    cfg.validate()?;
    let (train, heldout) = load_stage_a_data::<S>(cfg)?.split(HELDOUT_FRACTION);
    let inv_dir = inversion.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_dir(&inversion_dir(cfg)));
    let inv = open_checkpoint(&inv_dir, Stage::Inversion, Some(&cfg.inversion_hash()), false)?;
    if let Some(g) = INVERSION_GROUPS.iter().find(|g| !inv.frozen_groups.iter().any(|f| f == *g)) {
        return Err(Error::Checkpoint(format!("inversion checkpoint did not freeze `{g}`; pretraining is incomplete")));
    }
    let mut model = StyleAModel::new(cfg.stage_a.model.clone(), cfg.seed)?;
    load_params(&inv_dir, &inv, model.store_mut())?;
    let mut trainer = StageATrainer::new(model, &cfg.stage_a, cfg.seed)?;
    let dir = stage_a_dir(cfg);
    let ckpt = checkpoint_dir(&dir);
    if resume && ckpt.join(MANIFEST).is_file() {
        let m = open_checkpoint(&ckpt, Stage::A, Some(&cfg.stage_a_hash()), false)?;
        load_params(&ckpt, &m, trainer.model.store_mut())?;
        load_optimizer(&ckpt, &m, "generator", trainer.model.store(), &mut trainer.adam_g)?;
        load_optimizer(&ckpt, &m, "discriminator", trainer.model.store(), &mut trainer.adam_d)?;
        trainer.step = m.step;
    }
    let before = trainer.frozen_hashes();
    for (g, h) in &before {
        if inv.group_hashes.get(g) != Some(h) {
            return Err(Error::Invariant(format!("group `{g}` differs from the inversion checkpoint")));
        }
    }
    let mut log = TrainLog::open(&dir.join("log.ndjson"), resume)?;
    let total = cfg.stage_a.steps;
    let mut losses = Vec::new();
    while trainer.step < total {
        let l = trainer.train_step(&train)?;
        losses.push(l);
        if trainer.step % cfg.stage_a.log_every.max(1) == 0 || trainer.step == total {
            log.record(trainer.step, &[("loss", l.total), ("rec", l.rec), ("prec", l.prec), ("gen", l.gen), ("disc", l.disc)])?;
        }
        if trainer.step % cfg.stage_a.checkpoint_every.max(1) == 0 && trainer.step < total {
            save_stage_a(cfg, &trainer)?;
        }
    }
    if trainer.frozen_hashes() != before {
        return Err(Error::Invariant("frozen inversion parameters changed during stage-A training".into()));
    }
    let eval = if heldout.items.is_empty() { &train } else { &heldout };
    let heldout_rec = trainer.evaluate_rec(eval)?;
    log.record(trainer.step, &[("heldout_rec", heldout_rec)])?;
    let manifest = save_stage_a(cfg, &trainer)?;
    Ok(StageAOutcome { manifest, losses, heldout_rec, trainer })
}

/// Stage-A model restored from a checkpoint.
pub fn load_stage_a<S: Scalar>(dir: &Path, expected_hash: Option<&str>, allow_mismatch: bool) -> Result<(StyleAModel<S>, CheckpointManifest)> {
    let m = open_checkpoint(dir, Stage::A, expected_hash, allow_mismatch)?;
    let mut model = StyleAModel::new(m.config.stage_a.model.clone(), m.config.seed)?;
    load_params(dir, &m, model.store_mut())?;
    Ok((model, m))
}
