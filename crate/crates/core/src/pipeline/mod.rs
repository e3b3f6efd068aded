//! Orchestration: training stages, checkpoints, generation, and evaluation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod generate;
pub mod log;
pub mod stage_a;
pub mod stage_e;

pub use checkpoint::{CheckpointManifest, Stage};
pub use config::RunConfig;
pub use data::{annotate, synth_data};
pub use eval::{evaluate_dirs, write_report};
pub use generate::{generate, run_generate, GenerateOptions, GenerateRequest, Generated};
pub use stage_a::{pretrain_inversion, train_style_a, StageATrainer};
pub use stage_e::{train_style_e, StageETrainer};
