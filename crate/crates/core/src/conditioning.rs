//! Condition vectors `text ⊕ identity ⊕ audio` and the encoder clients
//! that produce each segment.
//!
//! Only deterministic mock backends ship with the crate. Hosted backends are
//! described by [`ClientConfig`] so run configurations stay portable, but
//! building one returns a configuration error.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coeffspace::Frame;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const TEXT_DIM: usize = 32;
pub const IDENTITY_DIM: usize = 16;
pub const AUDIO_EMBED_DIM: usize = 16;

/// Per-frame condition: the text and identity embeddings repeated for every
/// frame, followed by that frame's audio embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionVector<S> {
    text_emb: Array1<S>,
    identity_emb: Array1<S>,
    audio_emb: Array2<S>,
}

impl<S: Scalar> ConditionVector<S> {
    pub fn new(text_emb: Array1<S>, identity_emb: Array1<S>, audio_emb: Array2<S>) -> Result<Self> {
        let finite = |v: &S| v.is_finite();
        if !text_emb.iter().all(finite) || !identity_emb.iter().all(finite) || !audio_emb.iter().all(finite) {
            return Err(Error::Data("condition embedding contains non-finite values".into()));
        }
        if audio_emb.nrows() == 0 {
            return Err(Error::Shape("audio embedding has no frames".into()));
        }
        Ok(Self { text_emb, identity_emb, audio_emb })
    }

    pub fn text_emb(&self) -> &Array1<S> {
        &self.text_emb
    }

    pub fn identity_emb(&self) -> &Array1<S> {
        &self.identity_emb
    }

    pub fn audio_emb(&self) -> &Array2<S> {
        &self.audio_emb
    }

    pub fn num_frames(&self) -> usize {
        self.audio_emb.nrows()
    }

    /// Per-frame fused width `d_T + d_I + d_A`.
    pub fn fused_dim(&self) -> usize {
        self.text_emb.len() + self.identity_emb.len() + self.audio_emb.ncols()
    }

    /// `(N, d_T + d_I + d_A)` matrix with segments in text, identity, audio order.
    pub fn fused(&self) -> Array2<S> {
        let n = self.num_frames();
        let (dt, di) = (self.text_emb.len(), self.identity_emb.len());
        let mut out = Array2::zeros((n, self.fused_dim()));
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            row.slice_mut(ndarray::s![..dt]).assign(&self.text_emb);
            row.slice_mut(ndarray::s![dt..dt + di]).assign(&self.identity_emb);
            row.slice_mut(ndarray::s![dt + di..]).assign(&self.audio_emb.row(i));
        }
        out
    }

    /// Copy with a different text segment.
    pub fn with_text(&self, text_emb: Array1<S>) -> Result<Self> {
        Self::new(text_emb, self.identity_emb.clone(), self.audio_emb.clone())
    }

    pub fn cast<T: Scalar>(&self) -> ConditionVector<T> {
        let c = |v: &S| T::c(v.as_f64());
        ConditionVector {
            text_emb: self.text_emb.map(c),
            identity_emb: self.identity_emb.map(c),
            audio_emb: self.audio_emb.map(c),
        }
    }
}

pub trait TextEncoder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<f64>>;
}

pub trait ImageEncoder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode(&self, frame: &Frame) -> Result<Vec<f64>>;
}

/// Maps raw per-frame audio features `(N, d_raw)` to `(N, dim)`.
pub trait AudioEncoder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode(&self, audio: &Array2<f32>) -> Result<Array2<f64>>;
}

pub enum Client {
    Text(Box<dyn TextEncoder>),
    Image(Box<dyn ImageEncoder>),
    Audio(Box<dyn AudioEncoder>),
}

/// One encoder per modality. Registration order is irrelevant; the fused
/// layout is fixed by modality.
#[derive(Default)]
pub struct EncoderClients {
    text: Option<Box<dyn TextEncoder>>,
    image: Option<Box<dyn ImageEncoder>>,
    audio: Option<Box<dyn AudioEncoder>>,
}

impl EncoderClients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, client: Client) -> &mut Self {
        match client {
            Client::Text(c) => self.text = Some(c),
            Client::Image(c) => self.image = Some(c),
            Client::Audio(c) => self.audio = Some(c),
        }
        self
    }

    pub fn with(mut self, client: Client) -> Self {
        self.register(client);
        self
    }

    /// Mock encoders at the default widths.
    pub fn mock(audio_raw_dim: usize) -> Self {
        Self::new()
            .with(Client::Text(Box::new(MockTextEncoder::new(TEXT_DIM))))
            .with(Client::Image(Box::new(MockImageEncoder::new(IDENTITY_DIM, "identity"))))
            .with(Client::Audio(Box::new(MockAudioEncoder::new(audio_raw_dim, AUDIO_EMBED_DIM))))
    }

    pub fn text(&self) -> Result<&dyn TextEncoder> {
        self.text.as_deref().ok_or_else(|| Error::Config("no text encoder registered".into()))
    }

    pub fn image(&self) -> Result<&dyn ImageEncoder> {
        self.image.as_deref().ok_or_else(|| Error::Config("no image encoder registered".into()))
    }

    pub fn audio(&self) -> Result<&dyn AudioEncoder> {
        self.audio.as_deref().ok_or_else(|| Error::Config("no audio encoder registered".into()))
    }

    pub fn fused_dim(&self) -> Result<usize> {
        Ok(self.text()?.dim() + self.image()?.dim() + self.audio()?.dim())
    }
}

fn checked<S: Scalar>(v: Vec<f64>, dim: usize, what: &str) -> Result<Array1<S>> {
    if v.len() != dim {
        return Err(Error::Shape(format!("{what} encoder declared {dim} dims but returned {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data(format!("{what} embedding contains non-finite values")));
    }
    Ok(v.into_iter().map(S::c).collect())
}

/// Encodes the three modalities and assembles the condition.
pub fn build_condition<S: Scalar>(
    text: &str,
    identity: &Frame,
    audio: &Array2<f32>,
    clients: &EncoderClients,
) -> Result<ConditionVector<S>> {
    let (te, ie, ae) = (clients.text()?, clients.image()?, clients.audio()?);
    let text_emb = checked(te.encode(text)?, te.dim(), "text")?;
    let identity_emb = checked(ie.encode(identity)?, ie.dim(), "identity")?;
    let audio_raw = ae.encode(audio)?;
    if audio_raw.ncols() != ae.dim() || audio_raw.nrows() != audio.nrows() {
        return Err(Error::Shape(format!(
            "audio encoder returned {:?} for {} frames, declared width {}",
            audio_raw.dim(),
            audio.nrows(),
            ae.dim()
        )));
    }
    if audio_raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("audio embedding contains non-finite values".into()));
    }
    ConditionVector::new(text_emb, identity_emb, audio_raw.mapv(S::c))
}

pub(crate) fn hash_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn gaussian_vector(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn gaussian_matrix(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
}

/// Lowercased alphanumeric tokens.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Hashed bag-of-tokens text embedding.
///
/// Each normalized token maps to a Gaussian vector seeded by its hash; the
/// embedding is the normalized sum. Sentences sharing tokens are similar,
/// but morphologically close tokens ("smile", "smiling") share nothing.
#[derive(Clone, Debug)]
pub struct MockTextEncoder {
    dim: usize,
}

impl MockTextEncoder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

pub fn mock_text_encoder(text: &str, dim: usize) -> Result<Vec<f64>> {
    let tokens = normalize_tokens(text);
    if tokens.is_empty() {
        return Err(Error::Data("cannot embed empty text".into()));
    }
    let mut acc = vec![0.0; dim];
    for tok in &tokens {
        let v = gaussian_vector(hash_seed(&[b"token", tok.as_bytes()]), dim);
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Numeric("degenerate text embedding".into()));
    }
    Ok(acc.into_iter().map(|x| x / norm).collect())
}

impl TextEncoder for MockTextEncoder {
    fn name(&self) -> &str {
        "mock-text"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        mock_text_encoder(text, self.dim)
    }
}

/// Channel means plus a 4x4 grid of pooled intensities, centered and
/// projected by a fixed Gaussian matrix.
#[derive(Clone, Debug)]
pub struct MockImageEncoder {
    dim: usize,
    label: String,
    projection: Array2<f64>,
}

const IMAGE_FEATURES: usize = 3 + 16;

impl MockImageEncoder {
    pub fn new(dim: usize, label: &str) -> Self {
        let seed = hash_seed(&[b"image", label.as_bytes(), &(dim as u64).to_le_bytes()]);
        let projection = gaussian_matrix(seed, dim, IMAGE_FEATURES) / (IMAGE_FEATURES as f64).sqrt();
        Self { dim, label: label.to_string(), projection }
    }

    fn features(frame: &Frame) -> Vec<f64> {
        let px = frame.pixels();
        let (h, w) = (frame.height(), frame.width());
        let mut f = Vec::with_capacity(IMAGE_FEATURES);
        for c in 0..3 {
            f.push(px.index_axis(Axis(0), c).iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64 - 0.5);
        }
        let (ch, cw) = (h.div_ceil(4), w.div_ceil(4));
        for gy in 0..4 {
            for gx in 0..4 {
                let mut acc = 0.0;
                let mut n = 0;
                for y in gy * ch..((gy + 1) * ch).min(h) {
                    for x in gx * cw..((gx + 1) * cw).min(w) {
                        acc += (0..3).map(|c| px[[c, y, x]] as f64).sum::<f64>() / 3.0;
                        n += 1;
                    }
                }
                f.push(if n > 0 { acc / n as f64 - 0.5 } else { 0.0 });
            }
        }
        f
    }
}

impl ImageEncoder for MockImageEncoder {
    fn name(&self) -> &str {
        &self.label
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, frame: &Frame) -> Result<Vec<f64>> {
        let f = Array1::from(Self::features(frame));
        Ok(self.projection.dot(&f).to_vec())
    }
}

/// Per-frame `tanh(P x)` with a fixed Gaussian `P`.
#[derive(Clone, Debug)]
pub struct MockAudioEncoder {
    raw_dim: usize,
    dim: usize,
    projection: Array2<f64>,
}

impl MockAudioEncoder {
    pub fn new(raw_dim: usize, dim: usize) -> Self {
        let seed = hash_seed(&[b"audio", &(raw_dim as u64).to_le_bytes(), &(dim as u64).to_le_bytes()]);
        let projection = gaussian_matrix(seed, raw_dim, dim) / (raw_dim as f64).sqrt();
        Self { raw_dim, dim, projection }
    }
}

impl AudioEncoder for MockAudioEncoder {
    fn name(&self) -> &str {
        "mock-audio"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, audio: &Array2<f32>) -> Result<Array2<f64>> {
        if audio.ncols() != self.raw_dim {
            return Err(Error::Shape(format!("audio features have {} dims, encoder expects {}", audio.ncols(), self.raw_dim)));
        }
        Ok(audio.mapv(|v| v as f64).dot(&self.projection).mapv(f64::tanh))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
    Audio,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Mock,
    Http,
}

/// `{modality, backend: mock|http, endpoint?, dim}` entry of a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub modality: Modality,
    pub backend: Backend,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub dim: usize,
}

impl ClientConfig {
    pub fn defaults() -> Vec<ClientConfig> {
        vec![
            ClientConfig { modality: Modality::Text, backend: Backend::Mock, endpoint: None, dim: TEXT_DIM },
            ClientConfig { modality: Modality::Image, backend: Backend::Mock, endpoint: None, dim: IDENTITY_DIM },
            ClientConfig { modality: Modality::Audio, backend: Backend::Mock, endpoint: None, dim: AUDIO_EMBED_DIM },
        ]
    }
}

pub fn build_clients(configs: &[ClientConfig], audio_raw_dim: usize) -> Result<EncoderClients> {
    let mut clients = EncoderClients::new();
    for cfg in configs {
        if cfg.dim == 0 {
            return Err(Error::Config(format!("{:?} encoder needs a positive dim", cfg.modality)));
        }
        if cfg.backend == Backend::Http {
            return Err(Error::Config(format!(
                "{:?} encoder: the http backend ({}) is not available in this build; use `mock`",
                cfg.modality,
                cfg.endpoint.as_deref().unwrap_or("no endpoint")
            )));
        }
        clients.register(match cfg.modality {
            Modality::Text => Client::Text(Box::new(MockTextEncoder::new(cfg.dim))),
            Modality::Image => Client::Image(Box::new(MockImageEncoder::new(cfg.dim, "identity"))),
            Modality::Audio => Client::Audio(Box::new(MockAudioEncoder::new(audio_raw_dim, cfg.dim))),
        });
    }
    Ok(clients)
}
