#![allow(dead_code)]

use std::path::Path;

use talkstyle::pipeline::RunConfig;
use talkstyle::stylea::StyleAConfig;

/// Small enough to run every stage in seconds.
pub fn tiny_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 7;
    cfg.corpus = Some(root.join("corpus"));
    cfg.records = Some(root.join("annotations"));
    cfg.out_dir = root.join("runs");
    cfg.data.num_videos = 4;
    cfg.data.frames_per_video = 12;
    cfg.data.resolution = 32;
    let e = &mut cfg.stage_e;
    e.diffusion_steps = 100;
    e.sequence_length = 8;
    e.hidden_width = 32;
    e.num_blocks = 2;
    e.time_embed_dim = 16;
    e.steps = 40;
    e.batch_size = 4;
    e.checkpoint_every = 20;
    e.log_every = 5;
    let a = &mut cfg.stage_a;
    a.model = StyleAConfig { resolution: 32, channels: 8, d_w: 16, d_exp: 64, coeff_hidden: 16 };
    a.steps = 6;
    a.batch_size = 2;
    a.pretrain.steps = 6;
    a.pretrain.modres_steps = 4;
    a.pretrain.batch_size = 2;
    a.checkpoint_every = 4;
    a.log_every = 2;
    cfg
}
