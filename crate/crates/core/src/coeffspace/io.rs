//! On-disk corpus layout: one directory per video holding `coeffs.bin`,
//! `audio.bin`, `frames/%05d.png`, and `meta.json`.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{Emotion, ExpressionSequence, Frame, Landmark, SyntheticVideo, AUDIO_DIM};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub fps: f64,
    pub emotion_class: Emotion,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D_exp")]
    pub d_exp: usize,
    pub identity_hue: f64,
    pub resolution: usize,
    pub audio_dim: usize,
    /// Per-frame landmark lists as `[x, y]` pixel pairs.
    pub landmarks: Vec<Vec<[f64; 2]>>,
}

fn encode_f32(values: impl Iterator<Item = f32>) -> Vec<u8> {
    values.flat_map(f32::to_le_bytes).collect()
}

fn decode_f32(bytes: &[u8], path: &Path) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Data(format!("{} is not a whole number of f32 values", path.display())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Row-major little-endian `f32` matrix.
pub fn write_coeffs(path: &Path, values: &Array2<f32>) -> Result<()> {
    write_atomic(path, &encode_f32(values.iter().copied()))
}

pub fn read_coeffs(path: &Path, cols: usize) -> Result<Array2<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let flat = decode_f32(&bytes, path)?;
    if cols == 0 || flat.len() % cols != 0 {
        return Err(Error::Data(format!("{}: {} values do not form rows of {cols}", path.display(), flat.len())));
    }
    Ok(Array2::from_shape_vec((flat.len() / cols, cols), flat).unwrap())
}

pub fn write_frame_png(path: &Path, frame: &Frame) -> Result<()> {
    let (h, w) = (frame.height(), frame.width());
    let px = frame.pixels();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let q = |c: usize| (px[[c, y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([q(0), q(1), q(2)])
    });
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    write_atomic(path, &bytes)
}

pub fn read_frame_png(path: &Path, landmarks: Vec<Landmark>) -> Result<Frame> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    });
    Frame::new(pixels, landmarks)
}

pub fn write_video(dir: &Path, video: &SyntheticVideo) -> Result<()> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    write_coeffs(&dir.join("coeffs.bin"), video.sequence.values())?;
    write_coeffs(&dir.join("audio.bin"), &video.audio)?;
    for (i, frame) in video.frames.iter().enumerate() {
        write_frame_png(&frames_dir.join(format!("{i:05}.png")), frame)?;
    }
    let meta = VideoMeta {
        video_id: video.video_id().to_string(),
        fps: video.sequence.fps(),
        emotion_class: video.emotion,
        n: video.sequence.num_frames(),
        d_exp: video.sequence.dim(),
        identity_hue: video.identity_hue,
        resolution: video.frames.first().map_or(0, Frame::height),
        audio_dim: video.audio.ncols(),
        landmarks: video
            .frames
            .iter()
            .map(|f| f.landmarks().iter().map(|l| [l.x, l.y]).collect())
            .collect(),
    };
    write_atomic(&dir.join("meta.json"), serde_json::to_string_pretty(&meta)?.as_bytes())
}

pub fn read_video(dir: &Path) -> Result<SyntheticVideo> {
    let meta_path = dir.join("meta.json");
    let meta: VideoMeta =
        serde_json::from_slice(&fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?)?;
    let values = read_coeffs(&dir.join("coeffs.bin"), meta.d_exp)?;
    if values.nrows() != meta.n {
        return Err(Error::Data(format!("{}: meta says {} frames, coeffs hold {}", dir.display(), meta.n, values.nrows())));
    }
    let audio_dim = if meta.audio_dim == 0 { AUDIO_DIM } else { meta.audio_dim };
    let audio = read_coeffs(&dir.join("audio.bin"), audio_dim)?;
    let mut frames = Vec::with_capacity(meta.landmarks.len());
    for (i, lms) in meta.landmarks.iter().enumerate() {
        let landmarks = lms.iter().map(|&[x, y]| Landmark { x, y }).collect();
        frames.push(read_frame_png(&dir.join("frames").join(format!("{i:05}.png")), landmarks)?);
    }
    Ok(SyntheticVideo {
        sequence: ExpressionSequence::new(values, meta.fps, meta.video_id)?,
        audio,
        emotion: meta.emotion_class,
        identity_hue: meta.identity_hue,
        frames,
    })
}

pub fn write_corpus(dir: &Path, videos: &[SyntheticVideo]) -> Result<()> {
    for v in videos {
        write_video(&dir.join(v.video_id()), v)?;
    }
    Ok(())
}

/// Reads every video directory (one containing `meta.json`) in name order.
pub fn read_corpus(dir: &Path) -> Result<Vec<SyntheticVideo>> {
    let mut dirs: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Data(format!("no videos found under {}", dir.display())));
    }
    dirs.iter().map(|d| read_video(d)).collect()
}
