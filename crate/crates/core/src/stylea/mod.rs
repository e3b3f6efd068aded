//! Art-style stage: style inversion encoder and generator with a residual
//! style merge, a motion generator whose flow warps a mid-level generator
//! map, a refinement network, and content skip connections.

pub mod nets;
pub mod ops;

use ndarray::{Array1, Array2, Array3, ArrayD, Axis, Ix2, Ix3, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use nets::{
    ContentEncoder, Discriminator, Generator, ModRes, MotionGenerator, Refiner, StyleAConfig, StyleEncoder,
    CONTENT_ENCODER, DISCRIMINATOR, GENERATOR, MODRES, MOTION_GENERATOR, REFINE, STYLE_ENCODER,
};
pub use ops::{adain_var, warp_var, ADAIN_EPS};

use crate::autograd::Var;
use crate::coeffspace::Frame;
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Session};
use crate::scalar::Scalar;

/// Groups optimized in the art-style stage.
pub const STAGE_A_GROUPS: [&str; 3] = [CONTENT_ENCODER, MOTION_GENERATOR, REFINE];
/// Groups trained by inversion pretraining and frozen afterwards.
pub const INVERSION_GROUPS: [&str; 3] = [STYLE_ENCODER, GENERATOR, MODRES];

/// `(C, H, W)` features with square power-of-two spatial size.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<S> {
    values: Array3<S>,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn new(values: Array3<S>) -> Result<Self> {
        let (_, h, w) = values.dim();
        if h != w || !h.is_power_of_two() {
            return Err(Error::Shape(format!("feature map {h}x{w} must be square with power-of-two side")));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("feature map contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array3<S> {
        &self.values
    }

    pub fn channels(&self) -> usize {
        self.values.dim().0
    }

    pub fn side(&self) -> usize {
        self.values.dim().1
    }

    fn to_var(&self) -> Var<S> {
        Var::constant(self.values.clone().insert_axis(Axis(0)).into_dyn())
    }

    fn from_batch(x: &ArrayD<S>, item: usize) -> Result<Self> {
        Self::new(x.index_axis(Axis(0), item).to_owned().into_dimensionality::<Ix3>().unwrap())
    }
}

/// Per-pixel displacement `(H, W, 2)` holding `(dx, dy)` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<S> {
    displacement: Array3<S>,
}

impl<S: Scalar> FlowField<S> {
    pub fn new(displacement: Array3<S>) -> Result<Self> {
        if displacement.dim().2 != 2 {
            return Err(Error::Shape(format!("flow needs 2 components, got {}", displacement.dim().2)));
        }
        if !displacement.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("flow contains non-finite values".into()));
        }
        Ok(Self { displacement })
    }

    pub fn zeros(side: usize) -> Self {
        Self { displacement: Array3::zeros((side, side, 2)) }
    }

    pub fn constant(side: usize, dx: f64, dy: f64) -> Self {
        Self { displacement: Array3::from_shape_fn((side, side, 2), |(_, _, k)| S::c(if k == 0 { dx } else { dy })) }
    }

    pub fn displacement(&self) -> &Array3<S> {
        &self.displacement
    }

    /// `(1, 2, H, W)` channel-first tensor.
    fn to_var(&self) -> Var<S> {
        Var::constant(self.displacement.clone().permuted_axes([2, 0, 1]).insert_axis(Axis(0)).as_standard_layout().into_owned().into_dyn())
    }

    fn from_batch(x: &ArrayD<S>, item: usize) -> Result<Self> {
        let chw = x.index_axis(Axis(0), item).to_owned().into_dimensionality::<Ix3>().unwrap();
        Self::new(chw.permuted_axes([1, 2, 0]).as_standard_layout().into_owned())
    }
}

/// Per-layer latent `(L, d_w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleCode<S> {
    values: Array2<S>,
}

impl<S: Scalar> StyleCode<S> {
    pub fn new(values: Array2<S>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("style code contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<S> {
        &self.values
    }

    fn to_var(&self) -> Var<S> {
        Var::constant(self.values.clone().insert_axis(Axis(0)).into_dyn())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaINParams<S> {
    pub scale: Array1<S>,
    pub bias: Array1<S>,
}

impl<S: Scalar> AdaINParams<S> {
    pub fn new(scale: Array1<S>, bias: Array1<S>) -> Result<Self> {
        if scale.len() != bias.len() {
            return Err(Error::Shape(format!("AdaIN scale has {} channels, bias {}", scale.len(), bias.len())));
        }
        if !scale.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::Data("AdaIN parameters contain non-finite values".into()));
        }
        Ok(Self { scale, bias })
    }
}

/// Adaptive instance normalization of one feature map.
pub fn adain<S: Scalar>(x: &FeatureMap<S>, params: &AdaINParams<S>, eps: f64) -> Result<FeatureMap<S>> {
    if params.scale.len() != x.channels() {
        return Err(Error::Shape(format!(
            "AdaIN parameters for {} channels applied to {}",
            params.scale.len(),
            x.channels()
        )));
    }
    let c = x.channels();
    let scale = Var::constant(params.scale.clone().into_shape_with_order(IxDyn(&[1, c])).unwrap());
    let bias = Var::constant(params.bias.clone().into_shape_with_order(IxDyn(&[1, c])).unwrap());
    let out = adain_var(&x.to_var(), &scale, &bias, eps)?;
    if !out.value().iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("AdaIN produced non-finite values (constant channel with eps = 0?)".into()));
    }
    FeatureMap::from_batch(out.value(), 0)
}

/// Bilinear warp with border clamping.
pub fn warp<S: Scalar>(m: &FeatureMap<S>, flow: &FlowField<S>) -> Result<FeatureMap<S>> {
    let (h, w, _) = flow.displacement.dim();
    if (h, w) != (m.side(), m.side()) {
        return Err(Error::Shape(format!("flow {h}x{w} does not match feature map {0}x{0}", m.side())));
    }
    FeatureMap::from_batch(warp_var(&m.to_var(), &flow.to_var())?.value(), 0)
}

/// Which optional paths of the synthesis generator are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub use_skips: bool,
    pub use_refine: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { use_skips: true, use_refine: true }
    }
}

/// All art-style networks over one parameter store.
#[derive(Clone, Debug)]
pub struct StyleAModel<S: Scalar> {
    config: StyleAConfig,
    store: ParamStore<S>,
    pub style_encoder: StyleEncoder,
    pub generator: Generator,
    pub modres: ModRes,
    pub content: ContentEncoder,
    pub motion: MotionGenerator,
    pub refiner: Refiner,
    pub discriminator: Discriminator,
}

impl<S: Scalar> StyleAModel<S> {
    pub fn new(config: StyleAConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let style_encoder = StyleEncoder::new(&mut store, &mut rng, &config);
        let generator = Generator::new(&mut store, &mut rng, &config);
        let modres = ModRes::new(&mut store, &mut rng, &config);
        let content = ContentEncoder::new(&mut store, &mut rng, &config);
        let motion = MotionGenerator::new(&mut store, &mut rng, &config);
        let refiner = Refiner::new(&mut store, &mut rng, &config);
        let discriminator = Discriminator::new(&mut store, &mut rng, &config);
        Ok(Self { config, store, style_encoder, generator, modres, content, motion, refiner, discriminator })
    }

    pub fn config(&self) -> &StyleAConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    /// Style codes `(B, L, d_w)` of images `(B, 3, r, r)`.
    pub fn encode_style(&self, sess: &Session<S>, images: &Var<S>) -> Result<Var<S>> {
        nets::check_image(images, &self.config, "style encoder")?;
        Ok(self.style_encoder.forward(sess, images))
    }

    /// Generator output with the optional flow warp, refinement, and skips.
    /// `content` is the pyramid from [`ContentEncoder::forward`].
    pub fn synthesize_var(
        &self,
        sess: &Session<S>,
        w: &Var<S>,
        content: Option<&[Var<S>]>,
        flow: Option<&Var<S>>,
        opts: SynthOptions,
    ) -> Result<Var<S>> {
        let warp_block = self.config.warp_block();
        let last = self.config.num_blocks() - 1;
        if let Some(c) = content {
            if c.len() != self.content.levels() {
                return Err(Error::Shape(format!("{} content levels, expected {}", c.len(), self.content.levels())));
            }
        }
        self.generator.forward(sess, w, &mut |block, x| {
            if block < warp_block {
                return Ok(x);
            }
            let mut x = x;
            if block == warp_block {
                if let Some(f) = flow {
                    let m_hat = warp_var(&x, f)?;
                    x = if opts.use_refine { self.refiner.forward(sess, &m_hat, &x)? } else { m_hat };
                } else if opts.use_refine {
                    x = self.refiner.forward(sess, &x, &x)?;
                }
            }
            if let (true, Some(c)) = (opts.use_skips, content) {
                let level = last - block;
                if c[level].shape() != x.shape() {
                    return Err(Error::Shape(format!("content level {level} {:?} vs decoder {:?}", c[level].shape(), x.shape())));
                }
                x = &x + &self.content.adapt(sess, level, &c[level]);
            }
            Ok(x)
        })
    }

    /// Full stylized reenactment: identity and art images `(B, 3, r, r)`,
    /// coefficients `(B, D_exp)`.
    pub fn stage_a_forward(
        &self,
        sess: &Session<S>,
        identity: &Var<S>,
        art: &Var<S>,
        coeffs: &Var<S>,
        blend: S,
        opts: SynthOptions,
    ) -> Result<Var<S>> {
        nets::check_image(identity, &self.config, "identity")?;
        let w_i = self.encode_style(sess, identity)?;
        let w_s = self.encode_style(sess, art)?;
        let w = self.modres.forward(sess, &w_i, &w_s, blend)?;
        let feats = self.content.forward(sess, identity);
        let flow = self.motion.forward(sess, identity, coeffs)?;
        self.synthesize_var(sess, &w, Some(&feats), Some(&flow), opts)
    }

    fn image_var(&self, frame: &Frame) -> Result<Var<S>> {
        let v = Var::constant(frame.to_tensor());
        nets::check_image(&v, &self.config, "frame")?;
        Ok(v)
    }

    pub fn style_code(&self, frame: &Frame) -> Result<StyleCode<S>> {
        let sess = Session::inference(&self.store);
        let w = self.encode_style(&sess, &self.image_var(frame)?)?;
        StyleCode::new(w.value().index_axis(Axis(0), 0).to_owned().into_dimensionality::<Ix2>().unwrap())
    }

    pub fn motion_generator(&self, identity: &Frame, coeffs: &[f32]) -> Result<FlowField<S>> {
        if coeffs.len() != self.config.d_exp {
            return Err(Error::Shape(format!("{} coefficients, expected {}", coeffs.len(), self.config.d_exp)));
        }
        let sess = Session::inference(&self.store);
        let c = Var::constant(ArrayD::from_shape_fn(IxDyn(&[1, coeffs.len()]), |ix| S::c(coeffs[ix[1]] as f64)));
        FlowField::from_batch(self.motion.forward(&sess, &self.image_var(identity)?, &c)?.value(), 0)
    }

    pub fn modres_merge(&self, w_i: &StyleCode<S>, w_s: &StyleCode<S>, blend: f64) -> Result<StyleCode<S>> {
        if !(0.0..=1.0).contains(&blend) {
            return Err(Error::Config(format!("blend {blend} outside [0, 1]")));
        }
        let sess = Session::inference(&self.store);
        let out = self.modres.forward(&sess, &w_i.to_var(), &w_s.to_var(), S::c(blend))?;
        StyleCode::new(out.value().index_axis(Axis(0), 0).to_owned().into_dimensionality::<Ix2>().unwrap())
    }

    pub fn content_encoder(&self, identity: &Frame) -> Result<Vec<FeatureMap<S>>> {
        let sess = Session::inference(&self.store);
        self.content
            .forward(&sess, &self.image_var(identity)?)
            .iter()
            .map(|f| FeatureMap::from_batch(f.value(), 0))
            .collect()
    }

    pub fn refine(&self, m_hat: &FeatureMap<S>, context: &FeatureMap<S>) -> Result<FeatureMap<S>> {
        if m_hat.channels() != self.config.channels {
            return Err(Error::Shape(format!("refine expects {} channels, got {}", self.config.channels, m_hat.channels())));
        }
        let sess = Session::inference(&self.store);
        FeatureMap::from_batch(self.refiner.forward(&sess, &m_hat.to_var(), &context.to_var())?.value(), 0)
    }

    /// Renders one frame; landmarks are left empty.
    pub fn synthesize(
        &self,
        w: &StyleCode<S>,
        content: Option<&[FeatureMap<S>]>,
        flow: &FlowField<S>,
        opts: SynthOptions,
    ) -> Result<Frame> {
        let sess = Session::inference(&self.store);
        let feats: Option<Vec<Var<S>>> = content.map(|c| c.iter().map(FeatureMap::to_var).collect());
        let side = self.config.warp_resolution();
        if flow.displacement.dim() != (side, side, 2) {
            return Err(Error::Shape(format!("flow {:?} does not match the {side}x{side} warp layer", flow.displacement.dim())));
        }
        let img = self.synthesize_var(&sess, &w.to_var(), feats.as_deref(), Some(&flow.to_var()), opts)?;
        let px = img.value().index_axis(Axis(0), 0).to_owned().into_dimensionality::<Ix3>().unwrap();
        Frame::from_values(px.view(), Vec::new())
    }
}

#[cfg(test)]
mod tests;
