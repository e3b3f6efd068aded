//! Synthetic corpus creation and the annotation front end.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::stage_a::art_reference;
use crate::annotation::{annotate_corpus, mock_au_intensities, write_aus, AnnotateConfig, AnnotationSummary, Annotators, MockLlm};
use crate::coeffspace::{generate_corpus_with, read_frame_png, write_frame_png, write_video, CorpusConfig, Frame, NUM_PALETTES};
use crate::conditioning::{build_clients, hash_seed, MockImageEncoder};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const ART_STYLE: &str = "art_style.json";
pub const ART_REFERENCE: &str = "art_reference.png";
pub const AUS: &str = "aus.json";

/// Art-style descriptor: palette id and a reference image path, relative
/// to the descriptor's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtStyle {
    pub palette: u32,
    pub reference: PathBuf,
}

pub fn read_art_style(path: &Path) -> Result<(ArtStyle, Frame)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let style: ArtStyle = serde_json::from_slice(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if style.palette as usize >= NUM_PALETTES {
        return Err(Error::Data(format!("{}: palette {} not in 0..{NUM_PALETTES}", path.display(), style.palette)));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let frame = read_frame_png(&base.join(&style.reference), Vec::new())?;
    Ok((style, frame))
}

pub fn write_art_style(dir: &Path, palette: u32, resolution: usize) -> Result<ArtStyle> {
    write_frame_png(&dir.join(ART_REFERENCE), &art_reference(palette, resolution)?)?;
    let style = ArtStyle { palette, reference: PathBuf::from(ART_REFERENCE) };
    write_atomic(&dir.join(ART_STYLE), &serde_json::to_vec_pretty(&style)?)?;
    Ok(style)
}

/// Writes the procedural corpus with per-video `aus.json`, plus the art
/// style descriptor at the corpus root. Returns the number of videos.
pub fn synth_data(out: &Path, cfg: &RunConfig) -> Result<usize> {
    let d = &cfg.data;
    let videos = generate_corpus_with(&CorpusConfig {
        num_videos: d.num_videos,
        frames_per_video: d.frames_per_video,
        seed: cfg.seed,
        resolution: d.resolution,
        fps: d.fps,
        d_exp: d.d_exp,
    })?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    videos.par_iter().try_for_each(|v| {
        let dir = out.join(v.video_id());
        write_video(&dir, v)?;
        let seed = hash_seed(&[b"aus", &cfg.seed.to_le_bytes(), v.video_id().as_bytes()]);
        write_aus(&dir.join(AUS), &mock_au_intensities(v.emotion, &v.sequence, seed)?)
    })?;
    write_art_style(out, cfg.stage_a.art_palette, d.resolution)?;
    Ok(videos.len())
}

/// Annotates a corpus with the mock LLM, the configured text encoder, and
/// a mock image encoder of matching width.
pub fn annotate(corpus: &Path, out: &Path, annotate: &AnnotateConfig, cfg: &RunConfig) -> Result<AnnotationSummary> {
    let clients = build_clients(&cfg.clients, crate::coeffspace::AUDIO_DIM)?;
    let llm = MockLlm::new(annotate.seed);
    let text = clients.text()?;
    // ranking needs image embeddings in the text encoder's space
    let image = MockImageEncoder::new(text.dim(), "rank");
    let annotators = Annotators { llm: &llm, text, image: &image };
    annotate_corpus(corpus, out, annotate, &annotators)
}
