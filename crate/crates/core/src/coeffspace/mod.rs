//! Expression-coefficient sequences and the procedural face corpus.

mod corpus;
mod io;
mod readout;
mod render;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use corpus::{generate_corpus, generate_corpus_with, CorpusConfig, SyntheticVideo, AUDIO_DIM};
pub use io::{read_coeffs, read_corpus, read_frame_png, read_video, write_coeffs, write_corpus, write_frame_png, write_video, VideoMeta};
pub use readout::{coeffs_to_params, GROUP_SIZE, READOUT_WEIGHTS};
pub use render::{
    BROW_LANDMARKS,
    fit_expression, landmarks_for, render_synthetic_frame, Landmark, EYE_LANDMARKS, MOUTH_LANDMARKS,
    NUM_LANDMARKS, NUM_PALETTES, SUPPORTED_RESOLUTIONS,
};

/// Default number of 3DMM expression coefficients per frame.
pub const D_EXP: usize = 64;

/// The eight emotion categories of the source audio-visual corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Angry,
    Contempt,
    Disgusted,
    Fear,
    Happy,
    Sad,
    Surprised,
}

impl Emotion {
    pub const ALL: [Emotion; 8] = [
        Emotion::Neutral,
        Emotion::Angry,
        Emotion::Contempt,
        Emotion::Disgusted,
        Emotion::Fear,
        Emotion::Happy,
        Emotion::Sad,
        Emotion::Surprised,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&e| e == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Angry => "angry",
            Emotion::Contempt => "contempt",
            Emotion::Disgusted => "disgusted",
            Emotion::Fear => "fear",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Surprised => "surprised",
        }
    }
}

/// An `N x D_exp` sequence of expression coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionSequence {
    values: Array2<f32>,
    fps: f64,
    video_id: String,
}

impl ExpressionSequence {
    pub fn new(values: Array2<f32>, fps: f64, video_id: impl Into<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Shape(format!("expression sequence must be non-empty, got {:?}", values.shape())));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("expression sequence contains non-finite values".into()));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Data(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { values, fps, video_id: video_id.into() })
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn to_array<S: Scalar>(&self) -> Array2<S> {
        self.values.mapv(|v| S::c(v as f64))
    }

    /// Frames `start..start + len` as a new sequence.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.num_frames() {
            return Err(Error::Index(format!(
                "window {start}..{} outside sequence of {} frames",
                start + len,
                self.num_frames()
            )));
        }
        Ok(Self {
            values: self.values.slice(ndarray::s![start..start + len, ..]).to_owned(),
            fps: self.fps,
            video_id: self.video_id.clone(),
        })
    }
}

/// Controls for the procedural face renderer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthFaceParams {
    pub mouth_open: f64,
    pub brow_raise: f64,
    pub eye_open: f64,
    pub identity_hue: f64,
    pub art_palette_id: u32,
}

impl SynthFaceParams {
    pub const NEUTRAL: SynthFaceParams = SynthFaceParams {
        mouth_open: 0.5,
        brow_raise: 0.0,
        eye_open: 0.5,
        identity_hue: 0.5,
        art_palette_id: 0,
    };

    pub fn with_identity(mut self, identity_hue: f64, art_palette_id: u32) -> Self {
        self.identity_hue = identity_hue;
        self.art_palette_id = art_palette_id;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let within = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo && v <= hi;
        if !within(self.mouth_open, 0.0, 1.0)
            || !within(self.brow_raise, -1.0, 1.0)
            || !within(self.eye_open, 0.0, 1.0)
            || !within(self.identity_hue, 0.0, 1.0)
        {
            return Err(Error::Data(format!("face parameters out of range: {self:?}")));
        }
        if self.art_palette_id as usize >= NUM_PALETTES {
            return Err(Error::Config(format!(
                "art palette {} not in 0..{NUM_PALETTES}",
                self.art_palette_id
            )));
        }
        Ok(())
    }
}

/// An RGB image in `[0, 1]` with its analytic landmarks.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pixels: Array3<f32>,
    landmarks: Vec<Landmark>,
}

impl Frame {
    pub fn new(pixels: Array3<f32>, landmarks: Vec<Landmark>) -> Result<Self> {
        let (c, h, w) = pixels.dim();
        if c != 3 {
            return Err(Error::Shape(format!("frames need 3 channels, got {c}")));
        }
        if !h.is_power_of_two() || !w.is_power_of_two() {
            return Err(Error::Shape(format!("frame size {h}x{w} is not a power of two")));
        }
        if !pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)) {
            return Err(Error::Data("pixel values must lie in [0, 1]".into()));
        }
        for l in &landmarks {
            if !(l.x >= 0.0 && l.y >= 0.0 && l.x <= w as f64 && l.y <= h as f64) {
                return Err(Error::Data(format!("landmark ({}, {}) outside {w}x{h} image", l.x, l.y)));
            }
        }
        Ok(Self { pixels, landmarks })
    }

    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    /// Pixels as a `(1, 3, H, W)` tensor.
    pub fn to_tensor<S: Scalar>(&self) -> ndarray::ArrayD<S> {
        self.pixels.mapv(|v| S::c(v as f64)).insert_axis(ndarray::Axis(0)).into_dyn()
    }

    /// Builds a frame from a `(3, H, W)` array, clamping into `[0, 1]`.
    pub fn from_values<S: Scalar>(values: ndarray::ArrayView3<S>, landmarks: Vec<Landmark>) -> Result<Self> {
        let pixels = values.mapv(|v| (v.as_f64() as f32).clamp(0.0, 1.0));
        Self::new(pixels, landmarks)
    }
}
