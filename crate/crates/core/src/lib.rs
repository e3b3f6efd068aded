//! Text- and audio-conditioned stylized talking-face generation at desk scale.
//!
//! The core is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below pin the common instantiations.

pub mod annotation;
pub mod autograd;
pub mod coeffspace;
pub mod conditioning;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod fsutil;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod stylea;

pub use error::{Error, Result};

pub type Var32 = autograd::Var<f32>;
pub type Var64 = autograd::Var<f64>;
pub type Tensor32 = autograd::Tensor<f32>;
pub type Tensor64 = autograd::Tensor<f64>;
pub type ConditionVector32 = conditioning::ConditionVector<f32>;
pub type ConditionVector64 = conditioning::ConditionVector<f64>;
pub type MlpDenoiser32 = denoiser::MlpDenoiser<f32>;
pub type MlpDenoiser64 = denoiser::MlpDenoiser<f64>;
pub type StyleAModel32 = stylea::StyleAModel<f32>;
pub type StyleAModel64 = stylea::StyleAModel<f64>;
pub type FeatureMap32 = stylea::FeatureMap<f32>;
pub type FeatureMap64 = stylea::FeatureMap<f64>;
pub type FlowField32 = stylea::FlowField<f32>;
pub type FlowField64 = stylea::FlowField<f64>;
pub type StyleCode32 = stylea::StyleCode<f32>;
pub type StyleCode64 = stylea::StyleCode<f64>;
pub type StageETrainer32 = pipeline::StageETrainer<f32>;
pub type StageETrainer64 = pipeline::StageETrainer<f64>;
pub type StageATrainer32 = pipeline::StageATrainer<f32>;
pub type StageATrainer64 = pipeline::StageATrainer<f64>;
