//! Convolutional networks of the art-style stage.

use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{adain_var, ADAIN_EPS};
use crate::autograd::Var;
use crate::coeffspace::SUPPORTED_RESOLUTIONS;
use crate::error::{Error, Result};
use crate::nn::{init_uniform, Conv2d, Linear, ParamId, ParamStore, Session, LEAK};
use crate::scalar::Scalar;

pub const STYLE_ENCODER: &str = "style_encoder";
pub const GENERATOR: &str = "generator";
pub const MODRES: &str = "modres";
pub const CONTENT_ENCODER: &str = "content_encoder";
pub const MOTION_GENERATOR: &str = "motion_generator";
pub const REFINE: &str = "refine";
pub const DISCRIMINATOR: &str = "discriminator";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleAConfig {
    pub resolution: usize,
    /// Feature width of every convolutional layer.
    pub channels: usize,
    pub d_w: usize,
    pub d_exp: usize,
    pub coeff_hidden: usize,
}

impl Default for StyleAConfig {
    fn default() -> Self {
        Self { resolution: 64, channels: 32, d_w: 64, d_exp: crate::coeffspace::D_EXP, coeff_hidden: 64 }
    }
}

impl StyleAConfig {
    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_RESOLUTIONS.contains(&self.resolution) {
            return Err(Error::Config(format!(
                "style stage resolution {} not in {SUPPORTED_RESOLUTIONS:?}",
                self.resolution
            )));
        }
        if self.channels == 0 || self.d_w == 0 || self.d_exp == 0 || self.coeff_hidden == 0 {
            return Err(Error::Config("style stage widths must be positive".into()));
        }
        Ok(())
    }

    /// Upsampling blocks from the 4x4 constant to the output resolution.
    pub fn num_blocks(&self) -> usize {
        self.resolution.trailing_zeros() as usize - 2
    }

    /// Style layers `L`: two modulated convolutions per block.
    pub fn num_layers(&self) -> usize {
        2 * self.num_blocks()
    }

    /// Resolution of the warped generator layer.
    pub fn warp_resolution(&self) -> usize {
        self.resolution / 4
    }

    /// Index of the block whose output is warped.
    pub fn warp_block(&self) -> usize {
        self.num_blocks() - 3
    }

    /// Decoder resolutions that receive content features, coarsest first.
    pub fn skip_resolutions(&self) -> Vec<usize> {
        vec![self.resolution / 4, self.resolution / 2, self.resolution]
    }
}

fn lrelu<S: Scalar>(x: &Var<S>) -> Var<S> {
    x.leaky_relu(S::c(LEAK))
}

fn batch<S: Scalar>(x: &Var<S>) -> usize {
    x.shape()[0]
}

pub(crate) fn check_image<S: Scalar>(x: &Var<S>, cfg: &StyleAConfig, what: &str) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1] != 3 || s[2] != cfg.resolution || s[3] != cfg.resolution {
        return Err(Error::Shape(format!(
            "{what} expects (B, 3, {r}, {r}) images, got {s:?}",
            r = cfg.resolution
        )));
    }
    Ok(())
}

/// Maps an image to per-layer AdaIN parameters `scale = 1 + a`, `bias = b`.
#[derive(Clone, Debug)]
struct StyleAffine {
    lin: Linear,
    channels: usize,
}

impl StyleAffine {
    fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, group: &str, name: &str, d_in: usize, ch: usize) -> Self {
        Self { lin: Linear::new(store, rng, group, name, d_in, 2 * ch, 0.25), channels: ch }
    }

    fn params<S: Scalar>(&self, sess: &Session<S>, code: &Var<S>) -> (Var<S>, Var<S>) {
        let out = self.lin.forward(sess, code);
        let scale = out.narrow(1, 0, self.channels).add_scalar(S::one());
        let bias = out.narrow(1, self.channels, self.channels);
        (scale, bias)
    }
}

/// Image to style code `(B, L, d_w)`.
#[derive(Clone, Debug)]
pub struct StyleEncoder {
    stem: Conv2d,
    down: Vec<Conv2d>,
    head: Linear,
    layers: usize,
    d_w: usize,
}

impl StyleEncoder {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, cfg: &StyleAConfig) -> Self {
        let c = cfg.channels;
        let g = STYLE_ENCODER;
        let stem = Conv2d::new(store, rng, g, "style_encoder.stem", 3, c, 3, 1, 1.0);
        let down = (0..cfg.num_blocks())
            .map(|i| Conv2d::new(store, rng, g, &format!("style_encoder.down{i}"), c, c, 3, 2, 1.0))
            .collect();
        let head = Linear::new(store, rng, g, "style_encoder.head", c * 16, cfg.num_layers() * cfg.d_w, 1.0);
        Self { stem, down, head, layers: cfg.num_layers(), d_w: cfg.d_w }
    }

    pub fn forward<S: Scalar>(&self, sess: &Session<S>, img: &Var<S>) -> Var<S> {
        let b = batch(img);
        let mut x = lrelu(&self.stem.forward(sess, &img.add_scalar(S::c(-0.5))));
        for d in &self.down {
            x = lrelu(&d.forward(sess, &x));
        }
        let flat = x.reshape(&[b, x.value().len() / b]);
        self.head.forward(sess, &flat).reshape(&[b, self.layers, self.d_w])
    }
}

/// Style-modulated upsampling generator starting from a learned 4x4 constant.
#[derive(Clone, Debug)]
pub struct Generator {
    constant: ParamId,
    convs: Vec<Conv2d>,
    affines: Vec<StyleAffine>,
    to_rgb: Conv2d,
    d_w: usize,
}

impl Generator {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, cfg: &StyleAConfig) -> Self {
        let c = cfg.channels;
        let g = GENERATOR;
        let constant = store.add(g, "generator.constant", init_uniform(rng, &[1, c, 4, 4], 1, 1.0));
        let mut convs = Vec::new();
        let mut affines = Vec::new();
        for l in 0..cfg.num_layers() {
            convs.push(Conv2d::new(store, rng, g, &format!("generator.conv{l}"), c, c, 3, 1, 1.0));
            affines.push(StyleAffine::new(store, rng, g, &format!("generator.style{l}"), cfg.d_w, c));
        }
        let to_rgb = Conv2d::new(store, rng, g, "generator.to_rgb", c, 3, 1, 1, 1.0);
        Self { constant, convs, affines, to_rgb, d_w: cfg.d_w }
    }

    /// Decodes `w (B, L, d_w)` to images `(B, 3, res, res)` in `[0, 1]`.
    /// `hook(block, features)` may replace each block's output before the
    /// next block consumes it.
    pub fn forward<S: Scalar>(
        &self,
        sess: &Session<S>,
        w: &Var<S>,
        hook: &mut dyn FnMut(usize, Var<S>) -> Result<Var<S>>,
    ) -> Result<Var<S>> {
        let b = batch(w);
        if w.shape() != [b, self.convs.len(), self.d_w] {
            return Err(Error::Shape(format!(
                "style code {:?} does not match (B, {}, {})",
                w.shape(),
                self.convs.len(),
                self.d_w
            )));
        }
        let k = sess.param(self.constant);
        let c = k.shape()[1];
        let mut x = &k + &Var::constant(Array4::<S>::zeros((b, c, 4, 4)).into_dyn());
        for block in 0..self.convs.len() / 2 {
            x = x.upsample2x();
            for l in [2 * block, 2 * block + 1] {
                let code = w.narrow(1, l, 1).reshape(&[b, self.d_w]);
                let (scale, bias) = self.affines[l].params(sess, &code);
                x = lrelu(&adain_var(&self.convs[l].forward(sess, &x), &scale, &bias, ADAIN_EPS)?);
            }
            x = hook(block, x)?;
        }
        Ok(self.to_rgb.forward(sess, &x).sigmoid())
    }
}

/// Per-layer residual merge of an art-style code into a content code.
#[derive(Clone, Debug)]
pub struct ModRes {
    fc1: Vec<Linear>,
    fc2: Vec<Linear>,
    d_w: usize,
}

impl ModRes {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, cfg: &StyleAConfig) -> Self {
        let d = cfg.d_w;
        let mut fc1 = Vec::new();
        let mut fc2 = Vec::new();
        for l in 0..cfg.num_layers() {
            fc1.push(Linear::new(store, rng, MODRES, &format!("modres.fc1.{l}"), 2 * d, d, 1.0));
            let out = Linear::new(store, rng, MODRES, &format!("modres.fc2.{l}"), d, d, 1.0);
            out.zero_init(store);
            fc2.push(out);
        }
        Self { fc1, fc2, d_w: d }
    }

    /// `w_i + blend * res(w_i, w_s)` for codes `(B, L, d_w)`.
    pub fn forward<S: Scalar>(&self, sess: &Session<S>, w_i: &Var<S>, w_s: &Var<S>, blend: S) -> Result<Var<S>> {
        if w_i.shape() != w_s.shape() || w_i.shape().len() != 3 || w_i.shape()[1] != self.fc1.len() || w_i.shape()[2] != self.d_w {
            return Err(Error::Shape(format!("cannot merge style codes {:?} and {:?}", w_i.shape(), w_s.shape())));
        }
        let b = batch(w_i);
        let layers: Vec<Var<S>> = (0..self.fc1.len())
            .map(|l| {
                let wi = w_i.narrow(1, l, 1).reshape(&[b, self.d_w]);
                let ws = w_s.narrow(1, l, 1).reshape(&[b, self.d_w]);
                let h = lrelu(&self.fc1[l].forward(sess, &Var::concat(1, &[wi, ws])));
                self.fc2[l].forward(sess, &h).reshape(&[b, 1, self.d_w])
            })
            .collect();
        Ok(w_i + &Var::concat(1, &layers).scale(blend))
    }
}

/// Multi-scale content features of the identity image plus the zero-initialized
/// 1x1 adapters that inject them into the generator.
#[derive(Clone, Debug)]
pub struct ContentEncoder {
    stem: Conv2d,
    down: Vec<Conv2d>,
    adapters: Vec<Conv2d>,
}

impl ContentEncoder {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, cfg: &StyleAConfig) -> Self {
        let c = cfg.channels;
        let g = CONTENT_ENCODER;
        let stem = Conv2d::new(store, rng, g, "content_encoder.stem", 3, c, 3, 1, 1.0);
        let down = (0..2)
            .map(|i| Conv2d::new(store, rng, g, &format!("content_encoder.down{i}"), c, c, 3, 2, 1.0))
            .collect();
        let adapters = (0..3)
            .map(|i| {
                let a = Conv2d::new(store, rng, g, &format!("content_encoder.adapter{i}"), c, c, 1, 1, 1.0);
                a.zero_init(store);
                a
            })
            .collect();
        Self { stem, down, adapters }
    }

    /// Feature pyramid at full, half, and quarter resolution.
    pub fn forward<S: Scalar>(&self, sess: &Session<S>, img: &Var<S>) -> Vec<Var<S>> {
        let mut x = lrelu(&self.stem.forward(sess, &img.add_scalar(S::c(-0.5))));
        let mut out = vec![x.clone()];
        for d in &self.down {
            x = lrelu(&d.forward(sess, &x));
            out.push(x.clone());
        }
        out
    }

    /// Skip contribution of pyramid level `level` (0 = full resolution).
    pub fn adapt<S: Scalar>(&self, sess: &Session<S>, level: usize, feat: &Var<S>) -> Var<S> {
        self.adapters[level].forward(sess, feat)
    }

    pub fn levels(&self) -> usize {
        self.adapters.len()
    }
}

/// Image encoder, coefficient encoder, and flow decoder producing a flow
/// field `(B, 2, res/4, res/4)` in pixels of the warped layer.
#[derive(Clone, Debug)]
pub struct MotionGenerator {
    enc: Vec<Conv2d>,
    coeff1: Linear,
    coeff_affines: Vec<StyleAffine>,
    dec_low: Conv2d,
    dec_mid: Conv2d,
    flow_out: Conv2d,
    d_exp: usize,
}

impl MotionGenerator {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, cfg: &StyleAConfig) -> Self {
        let c = cfg.channels;
        let g = MOTION_GENERATOR;
        let enc = vec![
            Conv2d::new(store, rng, g, "motion.enc0", 3, c, 3, 1, 1.0),
            Conv2d::new(store, rng, g, "motion.enc1", c, c, 3, 2, 1.0),
            Conv2d::new(store, rng, g, "motion.enc2", c, c, 3, 2, 1.0),
            Conv2d::new(store, rng, g, "motion.enc3", c, c, 3, 2, 1.0),
        ];
        let coeff1 = Linear::new(store, rng, g, "motion.coeff1", cfg.d_exp, cfg.coeff_hidden, 1.0);
        let coeff_affines = (0..2)
            .map(|i| StyleAffine::new(store, rng, g, &format!("motion.coeff_affine{i}"), cfg.coeff_hidden, c))
            .collect();
        let dec_low = Conv2d::new(store, rng, g, "motion.dec_low", c, c, 3, 1, 1.0);
        let dec_mid = Conv2d::new(store, rng, g, "motion.dec_mid", 2 * c, c, 3, 1, 1.0);
        let flow_out = Conv2d::new(store, rng, g, "motion.flow", c, 2, 3, 1, 1.0);
        flow_out.zero_init(store);
        Self { enc, coeff1, coeff_affines, dec_low, dec_mid, flow_out, d_exp: cfg.d_exp }
    }

    pub fn forward<S: Scalar>(&self, sess: &Session<S>, identity: &Var<S>, coeffs: &Var<S>) -> Result<Var<S>> {
        let b = batch(identity);
        if coeffs.shape() != [b, self.d_exp] {
            return Err(Error::Shape(format!("coefficients {:?} do not match ({b}, {})", coeffs.shape(), self.d_exp)));
        }
        let mut x = identity.add_scalar(S::c(-0.5));
        let mut feats = Vec::new();
        for conv in &self.enc {
            x = lrelu(&conv.forward(sess, &x));
            feats.push(x.clone());
        }
        let code = lrelu(&self.coeff1.forward(sess, coeffs));
        let (s0, b0) = self.coeff_affines[0].params(sess, &code);
        let low = lrelu(&adain_var(&self.dec_low.forward(sess, &feats[3]), &s0, &b0, ADAIN_EPS)?);
        let up = Var::concat(1, &[low.upsample2x(), feats[2].clone()]);
        let (s1, b1) = self.coeff_affines[1].params(sess, &code);
        let mid = lrelu(&adain_var(&self.dec_mid.forward(sess, &up), &s1, &b1, ADAIN_EPS)?);
        Ok(self.flow_out.forward(sess, &mid))
    }
}

/// Residual corrector of the warped map given the unwarped context.
#[derive(Clone, Debug)]
pub struct Refiner {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl Refiner {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, cfg: &StyleAConfig) -> Self {
        let c = cfg.channels;
        let conv1 = Conv2d::new(store, rng, REFINE, "refine.conv1", 2 * c, c, 3, 1, 1.0);
        let conv2 = Conv2d::new(store, rng, REFINE, "refine.conv2", c, c, 3, 1, 1.0);
        conv2.zero_init(store);
        Self { conv1, conv2 }
    }

    pub fn forward<S: Scalar>(&self, sess: &Session<S>, m_hat: &Var<S>, context: &Var<S>) -> Result<Var<S>> {
        if m_hat.shape() != context.shape() {
            return Err(Error::Shape(format!("refine inputs {:?} and {:?} differ", m_hat.shape(), context.shape())));
        }
        let h = lrelu(&self.conv1.forward(sess, &Var::concat(1, &[m_hat.clone(), context.clone()])));
        Ok(m_hat + &self.conv2.forward(sess, &h))
    }
}

/// Strided convolutional critic with a sigmoid head giving `P(real)` per image.
#[derive(Clone, Debug)]
pub struct Discriminator {
    convs: Vec<Conv2d>,
    head: Linear,
    resolution: usize,
}

impl Discriminator {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, cfg: &StyleAConfig) -> Self {
        let c = cfg.channels;
        let convs = (0..4)
            .map(|i| Conv2d::new(store, rng, DISCRIMINATOR, &format!("disc.conv{i}"), if i == 0 { 3 } else { c }, c, 3, 2, 1.0))
            .collect();
        let side = cfg.resolution / 16;
        let head = Linear::new(store, rng, DISCRIMINATOR, "disc.head", c * side * side, 1, 1.0);
        Self { convs, head, resolution: cfg.resolution }
    }

    /// Probabilities `(B, 1)`.
    pub fn forward<S: Scalar>(&self, sess: &Session<S>, img: &Var<S>) -> Result<Var<S>> {
        let s = img.shape();
        if s.len() != 4 || s[1] != 3 || s[2] != self.resolution || s[3] != self.resolution {
            return Err(Error::Shape(format!("discriminator expects (B, 3, {r}, {r}), got {s:?}", r = self.resolution)));
        }
        let b = s[0];
        let mut x = img.add_scalar(S::c(-0.5));
        for conv in &self.convs {
            x = lrelu(&conv.forward(sess, &x));
        }
        Ok(self.head.forward(sess, &x.reshape(&[b, x.value().len() / b])).sigmoid())
    }
}
