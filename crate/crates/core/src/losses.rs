//! Training objectives: coefficient-space diffusion loss, pixel plus
//! perceptual reconstruction, and the adversarial pair.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tensor, Var};
use crate::coeffspace::Frame;
use crate::error::{Error, Result};
use crate::nn::{init_uniform, LEAK};
use crate::scalar::Scalar;

pub use crate::diffusion::training_loss as style1_loss;

/// Default weight of the perceptual term.
pub const PERCEPTUAL_WEIGHT: f64 = 0.1;
/// Probabilities are squashed into `[PROB_GUARD, 1 - PROB_GUARD]` before logs.
pub const PROB_GUARD: f64 = 1e-7;

/// Frozen feature extractor used as a perceptual distance.
pub trait PerceptualBackbone<S: Scalar> {
    /// Feature maps of `(B, 3, H, W)` images, shallow to deep.
    fn features(&self, images: &Var<S>) -> Vec<Var<S>>;
}

/// Pyramid of stride-2 3x3 convolutions with leaky ReLU and fixed random
/// weights. A cheap stand-in for a pretrained network: it responds to
/// local structure at several scales but has no semantic training.
#[derive(Clone, Debug)]
pub struct FixedRandomBackbone<S> {
    layers: Vec<(Tensor<S>, Tensor<S>)>,
}

pub const BACKBONE_CHANNELS: usize = 8;

pub fn fixed_random_backbone<S: Scalar>(seed: u64, depth: usize) -> Result<FixedRandomBackbone<S>> {
    if depth == 0 {
        return Err(Error::Config("backbone depth must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = (0..depth)
        .map(|i| {
            let cin = if i == 0 { 3 } else { BACKBONE_CHANNELS };
            let w = init_uniform(&mut rng, &[BACKBONE_CHANNELS, cin, 3, 3], cin * 9, 1.0);
            let b = init_uniform(&mut rng, &[BACKBONE_CHANNELS], 1, 0.1);
            (w, b)
        })
        .collect();
    Ok(FixedRandomBackbone { layers })
}

impl<S: Scalar> PerceptualBackbone<S> for FixedRandomBackbone<S> {
    fn features(&self, images: &Var<S>) -> Vec<Var<S>> {
        let mut x = images.add_scalar(S::c(-0.5));
        let mut out = Vec::with_capacity(self.layers.len());
        for (w, b) in &self.layers {
            x = x
                .conv2d(&Var::constant(w.clone()), Some(&Var::constant(b.clone())), 2, 1)
                .leaky_relu(S::c(LEAK));
            out.push(x.clone());
        }
        out
    }
}

fn same_shape<S: Scalar>(a: &Var<S>, b: &Var<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Root-mean-square pixel error `||pred - target||_2 / sqrt(numel)`.
pub fn reconstruction_loss<S: Scalar>(pred: &Var<S>, target: &Var<S>) -> Result<Var<S>> {
    same_shape(pred, target)?;
    Ok((pred - target).square().mean().sqrt())
}

/// Sum over backbone levels of the mean absolute feature difference.
pub fn perceptual_loss<S: Scalar>(pred: &Var<S>, target: &Var<S>, backbone: &dyn PerceptualBackbone<S>) -> Result<Var<S>> {
    same_shape(pred, target)?;
    let fp = backbone.features(pred);
    let ft = backbone.features(target);
    let mut total = Var::scalar(S::zero());
    for (p, t) in fp.iter().zip(&ft) {
        total = &total + &(p - t).abs().mean();
    }
    Ok(total)
}

/// Reconstruction objective of the art-style stage with its two terms.
pub struct Style2Loss<S: Scalar> {
    pub total: Var<S>,
    pub rec: S,
    pub prec: S,
}

/// `L_rec + lambda * L_prec` over a batch of `(B, 3, H, W)` images.
pub fn style2_loss<S: Scalar>(
    pred: &Var<S>,
    target: &Var<S>,
    backbone: &dyn PerceptualBackbone<S>,
    lambda: f64,
) -> Result<Style2Loss<S>> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("perceptual weight must be non-negative, got {lambda}")));
    }
    let rec = reconstruction_loss(pred, target)?;
    let prec = perceptual_loss(pred, target, backbone)?;
    let total = &rec + &prec.scale(S::c(lambda));
    Ok(Style2Loss { rec: rec.item(), prec: prec.item(), total })
}

/// [`style2_loss`] on a single pair of frames.
pub fn style2_loss_frames<S: Scalar>(pred: &Frame, target: &Frame, backbone: &dyn PerceptualBackbone<S>, lambda: f64) -> Result<S> {
    let p = Var::constant(pred.to_tensor::<S>());
    let t = Var::constant(target.to_tensor::<S>());
    Ok(style2_loss(&p, &t, backbone, lambda)?.total.item())
}

fn guard<S: Scalar>(p: &Var<S>, what: &str) -> Result<Var<S>> {
    if let Some(bad) = p.value().iter().find(|v| !(v.is_finite() && **v >= S::zero() && **v <= S::one())) {
        return Err(Error::Numeric(format!("{what} probability {bad} is not in [0, 1]")));
    }
    let g = PROB_GUARD;
    Ok(p.scale(S::c(1.0 - 2.0 * g)).add_scalar(S::c(g)))
}

/// Discriminator and generator losses from `D(real)` and `D(fake)`.
///
/// Discriminator: `-(mean log D(real) + mean log(1 - D(fake)))`.
/// Generator (non-saturating): `-mean log D(fake)`.
pub fn adversarial_from_probs<S: Scalar>(p_real: &Var<S>, p_fake: &Var<S>) -> Result<(Var<S>, Var<S>)> {
    let r = guard(p_real, "D(real)")?;
    let f = guard(p_fake, "D(fake)")?;
    let disc = -&(&r.ln().mean() + &f.scale(-S::one()).add_scalar(S::one()).ln().mean());
    let gen = -&f.ln().mean();
    Ok((disc, gen))
}

/// Applies `disc` to both batches and returns `(disc loss, gen loss)`.
pub fn adversarial_losses<S: Scalar>(
    disc: &dyn Fn(&Var<S>) -> Result<Var<S>>,
    real: &Var<S>,
    fake: &Var<S>,
) -> Result<(Var<S>, Var<S>)> {
    adversarial_from_probs(&disc(real)?, &disc(fake)?)
}
