//! Emotion-text annotation: AU activation and levels, candidate sentences,
//! similarity ranking against the video frames, and training-time sampling.

pub mod au;
pub mod llm;

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use au::{lookup, mock_au_intensities, read_aus, write_aus, ActionUnit, AuIntensities, AuIntensity, AU_REGISTRY};
pub use llm::{emotion_word, generate_candidates, CandidatePrompt, LlmClient, MockLlm, MOCK_CAPACITY};

use crate::coeffspace::{read_video, Emotion, Frame};
use crate::conditioning::{ImageEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

/// Number of candidates kept per video.
pub const RETAINED: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuAnnotation {
    pub au_id: u8,
    pub activated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u8>,
}

impl AuAnnotation {
    pub fn inactive(au_id: u8) -> Self {
        Self { au_id, activated: false, level: None }
    }

    pub fn active(au_id: u8, level: u8) -> Self {
        Self { au_id, activated: true, level: Some(level) }
    }

    pub fn validate(&self) -> Result<()> {
        lookup(self.au_id)?;
        match (self.activated, self.level) {
            (true, Some(1..=3)) | (false, None) => Ok(()),
            _ => Err(Error::Data(format!(
                "AU{}: activated={} with level {:?}",
                self.au_id, self.activated, self.level
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    pub sentence: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmotionTextRecord {
    pub video_id: String,
    pub emotion_class: Emotion,
    pub au_annotations: Vec<AuAnnotation>,
    pub candidates: Vec<ScoredSentence>,
}

impl EmotionTextRecord {
    pub fn new(
        video_id: impl Into<String>,
        emotion_class: Emotion,
        au_annotations: Vec<AuAnnotation>,
        candidates: Vec<ScoredSentence>,
    ) -> Result<Self> {
        let r = Self { video_id: video_id.into(), emotion_class, au_annotations, candidates };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.len() != RETAINED {
            return Err(Error::Data(format!(
                "{}: {} candidates, expected {RETAINED}",
                self.video_id,
                self.candidates.len()
            )));
        }
        if self.candidates.iter().any(|c| !(-1.0..=1.0).contains(&c.score)) {
            return Err(Error::Data(format!("{}: similarity outside [-1, 1]", self.video_id)));
        }
        if self.candidates.windows(2).any(|w| w[0].score < w[1].score) {
            return Err(Error::Data(format!("{}: candidates not sorted by score", self.video_id)));
        }
        self.au_annotations.iter().try_for_each(AuAnnotation::validate)
    }

    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.sentence.as_str())
    }
}

/// Strictly above `threshold` activates; levels split at `bounds` (inclusive upper edges).
pub fn activate_and_level(intensities: &[f64], threshold: f64, bounds: (f64, f64)) -> Result<Vec<AuAnnotation>> {
    if intensities.len() != AU_REGISTRY.len() {
        return Err(Error::Shape(format!(
            "{} intensities for {} registry AUs",
            intensities.len(),
            AU_REGISTRY.len()
        )));
    }
    if !(bounds.0 > threshold && bounds.1 > bounds.0) {
        return Err(Error::Config(format!(
            "level bounds {bounds:?} must increase strictly above threshold {threshold}"
        )));
    }
    intensities
        .iter()
        .zip(AU_REGISTRY.iter())
        .map(|(&v, au)| {
            if !(0.0..=au::MAX_INTENSITY).contains(&v) {
                return Err(Error::Data(format!("AU{} intensity {v} outside [0, 5]", au.id)));
            }
            Ok(if v <= threshold {
                AuAnnotation::inactive(au.id)
            } else if v <= bounds.0 {
                AuAnnotation::active(au.id, 1)
            } else if v <= bounds.1 {
                AuAnnotation::active(au.id, 2)
            } else {
                AuAnnotation::active(au.id, 3)
            })
        })
        .collect()
}

/// Mean of the per-frame image embeddings.
pub fn mean_frame_embedding(frames: &[Frame], image: &dyn ImageEncoder) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::Data("no frames to embed".into()));
    }
    let mut acc = vec![0.0; image.dim()];
    for f in frames {
        let e = image.encode(f)?;
        if e.len() != acc.len() {
            return Err(Error::Shape(format!("{} declared {} dims, returned {}", image.name(), acc.len(), e.len())));
        }
        acc.iter_mut().zip(e).for_each(|(a, x)| *a += x);
    }
    let n = frames.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| (dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Scores every candidate by cosine similarity with the mean frame
/// embedding and keeps the best five, ties broken by sentence order.
pub fn rank_and_filter(
    video_id: &str,
    candidates: &[String],
    frames: &[Frame],
    text: &dyn TextEncoder,
    image: &dyn ImageEncoder,
) -> Result<Vec<ScoredSentence>> {
    if candidates.len() < RETAINED {
        return Err(Error::Config(format!("need at least {RETAINED} candidates, got {}", candidates.len())));
    }
    if text.dim() != image.dim() {
        return Err(Error::Config(format!(
            "ranking encoders disagree on width: text {} vs image {}",
            text.dim(),
            image.dim()
        )));
    }
    let fail = |message: String| Error::Pipeline { video_id: video_id.to_string(), message };
    let visual = mean_frame_embedding(frames, image).map_err(|e| fail(format!("frame embedding: {e}")))?;
    let mut scored = candidates
        .iter()
        .map(|s| {
            let t = text.encode(s).map_err(|e| fail(format!("text embedding: {e}")))?;
            let score = cosine(&t, &visual).ok_or_else(|| fail(format!("zero-norm embedding for `{s}`")))?;
            Ok(ScoredSentence { sentence: s.clone(), score })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.sentence.cmp(&b.sentence)));
    scored.truncate(RETAINED);
    Ok(scored)
}

/// Uniform draw among the retained candidates.
pub fn sample_training_text<'a, R: Rng + ?Sized>(record: &'a EmotionTextRecord, rng: &mut R) -> &'a str {
    &record.candidates[rng.random_range(0..record.candidates.len())].sentence
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    pub threshold: f64,
    pub level_bounds: (f64, f64),
    pub candidates: usize,
    pub seed: u64,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self { threshold: 0.5, level_bounds: (1.5, 3.0), candidates: 8, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub video_id: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub num_videos: usize,
    pub num_records: usize,
    pub failures: Vec<Failure>,
}

/// Clients used by the annotation pipeline.
pub struct Annotators<'a> {
    pub llm: &'a dyn LlmClient,
    pub text: &'a dyn TextEncoder,
    pub image: &'a dyn ImageEncoder,
}

pub fn annotate_video(
    video_id: &str,
    emotion: Emotion,
    aus: &AuIntensities,
    frames: &[Frame],
    cfg: &AnnotateConfig,
    clients: &Annotators,
) -> Result<EmotionTextRecord> {
    let annotations = activate_and_level(&aus.ordered()?, cfg.threshold, cfg.level_bounds)?;
    let candidates = generate_candidates(video_id, emotion, &annotations, clients.llm, cfg.candidates)?;
    let ranked = rank_and_filter(video_id, &candidates, frames, clients.text, clients.image)?;
    EmotionTextRecord::new(video_id, emotion, annotations, ranked)
}

fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Video directories of a corpus, sorted by name.
pub fn video_dirs(corpus: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut dirs: Vec<_> = fs::read_dir(corpus)
        .map_err(|e| Error::io(corpus, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Annotates every video of an on-disk corpus into `out/records/<id>.json`
/// plus `out/summary.json`. Per-video failures are recorded and skipped;
/// configuration errors abort the run.
pub fn annotate_corpus(corpus: &Path, out: &Path, cfg: &AnnotateConfig, clients: &Annotators) -> Result<AnnotationSummary> {
    if cfg.candidates < RETAINED {
        return Err(Error::Config(format!("need at least {RETAINED} candidates, got {}", cfg.candidates)));
    }
    if !(cfg.level_bounds.0 > cfg.threshold && cfg.level_bounds.1 > cfg.level_bounds.0) {
        return Err(Error::Config(format!("level bounds {:?} must increase above the threshold", cfg.level_bounds)));
    }
    let records_dir = out.join("records");
    fs::create_dir_all(&records_dir).map_err(|e| Error::io(&records_dir, e))?;
    let dirs = video_dirs(corpus)?;
    let results: Vec<(String, Result<()>)> = dirs
        .par_iter()
        .map(|dir| {
            let id = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let run = || -> Result<()> {
                let video = read_video(dir)?;
                let aus = read_aus(&dir.join("aus.json"))?;
                let record = annotate_video(video.video_id(), video.emotion, &aus, &video.frames, cfg, clients)?;
                write_atomic(&records_dir.join(format!("{}.json", record.video_id)), &to_json_bytes(&record)?)
            };
            (id, run())
        })
        .collect();
    let mut failures = Vec::new();
    for (video_id, r) in results {
        match r {
            Ok(()) => {}
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => failures.push(Failure { video_id, error: e.to_string() }),
        }
    }
    let summary = AnnotationSummary { num_videos: dirs.len(), num_records: dirs.len() - failures.len(), failures };
    write_atomic(&out.join("summary.json"), &to_json_bytes(&summary)?)?;
    Ok(summary)
}

pub fn read_record(path: &Path) -> Result<EmotionTextRecord> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let r: EmotionTextRecord = serde_json::from_slice(&bytes)?;
    r.validate()?;
    Ok(r)
}

/// All records under `dir/records`, sorted by video id.
pub fn read_records(dir: &Path) -> Result<Vec<EmotionTextRecord>> {
    let rdir = dir.join("records");
    let mut paths: Vec<_> = fs::read_dir(&rdir)
        .map_err(|e| Error::io(&rdir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_record(p)).collect()
}
