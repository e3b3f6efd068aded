mod common;

use std::fs;
use std::time::Instant;

use talkstyle::annotation::AnnotateConfig;
use talkstyle::coeffspace::{read_coeffs, read_video, write_coeffs, write_frame_png};
use talkstyle::error::Error;
use talkstyle::pipeline::checkpoint::read_manifest;
use talkstyle::pipeline::data::ART_STYLE;
use talkstyle::pipeline::stage_e::checkpoint_dir;
use talkstyle::pipeline::{
    annotate, evaluate_dirs, pretrain_inversion, run_generate, synth_data, train_style_a, train_style_e, write_report,
    GenerateRequest, RunConfig, Stage,
};

fn prepare(root: &std::path::Path) -> RunConfig {
    let cfg = common::tiny_config(root);
    synth_data(cfg.corpus.as_ref().unwrap(), &cfg).unwrap();
    let summary = annotate(cfg.corpus.as_ref().unwrap(), cfg.records.as_ref().unwrap(), &AnnotateConfig::default(), &cfg).unwrap();
    assert_eq!(summary.num_records, 4);
    cfg
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let cfg = prepare(tmp.path());
    eprintln!("data {:?}", t0.elapsed());

    let e = train_style_e::<f32>(&cfg, false).unwrap();
    assert_eq!(e.manifest.stage, Stage::E);
    assert_eq!(e.manifest.step, 40);
    assert_eq!(e.losses.len(), 40);
    eprintln!("stage e {:?}", t0.elapsed());

    let inv = pretrain_inversion::<f32>(&cfg, false).unwrap();
    assert_eq!(inv.manifest.stage, Stage::Inversion);
    assert_eq!(inv.manifest.frozen_groups.len(), 3);
    eprintln!("inversion {:?}", t0.elapsed());

    let a = train_style_a::<f32>(&cfg, None, false).unwrap();
    assert_eq!(a.manifest.step, 6);
    assert!(a.heldout_rec.is_finite());
    for g in ["style_encoder", "generator", "modres"] {
        assert_eq!(a.manifest.group_hashes[g], inv.manifest.group_hashes[g]);
    }
    eprintln!("stage a {:?}", t0.elapsed());

    let log = fs::read_to_string(cfg.out_dir.join("stage_a/log.ndjson")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["step", "rec", "prec", "gen", "disc", "wall_clock_s"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }

    let video = read_video(&cfg.corpus.as_ref().unwrap().join("vid00000")).unwrap();
    let inputs = tmp.path().join("inputs");
    fs::create_dir_all(&inputs).unwrap();
    write_frame_png(&inputs.join("id.png"), &video.frames[0]).unwrap();
    write_coeffs(&inputs.join("audio.bin"), &video.audio.slice(ndarray::s![..8, ..]).to_owned()).unwrap();
    let req = GenerateRequest {
        text: "a happy person smiling".into(),
        identity: inputs.join("id.png"),
        audio: inputs.join("audio.bin"),
        art: cfg.corpus.as_ref().unwrap().join(ART_STYLE),
        out: tmp.path().join("gen"),
        config: Some(cfg.clone()),
        stage_e: None,
        stage_a: None,
        allow_config_mismatch: false,
        seed: None,
        num_steps: None,
    };
    let before = fs::read(checkpoint_dir(&cfg.out_dir.join("stage_e")).join("params.bin")).unwrap();
    let (g, index) = run_generate::<f32>(&req).unwrap();
    assert_eq!(g.frames.len(), 8);
    assert_eq!(index.denoiser_calls, 5);
    assert_eq!(read_coeffs(&req.out.join("coeffs.bin"), 64).unwrap().nrows(), 8);
    let after = fs::read(checkpoint_dir(&cfg.out_dir.join("stage_e")).join("params.bin")).unwrap();
    assert_eq!(before, after);
    eprintln!("generate {:?}", t0.elapsed());

    let report = evaluate_dirs(&req.out, &req.out).unwrap();
    assert!((report.ssim - 1.0).abs() < 1e-9);
    assert_eq!(report.m_lmd, 0.0);
    write_report(tmp.path(), &report).unwrap();
    assert!(tmp.path().join("report.json").is_file());
    assert!(fs::read_to_string(tmp.path().join("report.txt")).unwrap().contains("SSIM"));
}

#[test]
fn stage_e_resume_continues_the_same_stream() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = prepare(tmp.path());
    cfg.stage_e.steps = 20;
    cfg.stage_e.checkpoint_every = 10;
    let full = train_style_e::<f32>(&cfg, false).unwrap();

    let mut half = cfg.clone();
    half.out_dir = tmp.path().join("runs_resume");
    half.stage_e.steps = 10;
    let first = train_style_e::<f32>(&half, false).unwrap();
    half.stage_e.steps = 20;
    let rest = train_style_e::<f32>(&half, true).unwrap();
    assert_eq!(rest.losses.len(), 10);
    assert_eq!(first.losses[..], full.losses[..10]);
    assert_eq!(rest.losses[..], full.losses[10..]);
    assert_eq!(rest.manifest.group_hashes, full.manifest.group_hashes);

    let mut changed = half.clone();
    changed.stage_e.learning_rate *= 2.0;
    assert!(matches!(train_style_e::<f32>(&changed, true), Err(Error::Checkpoint(_))));
}

#[test]
fn missing_records_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = prepare(tmp.path());
    fs::remove_file(cfg.records.as_ref().unwrap().join("records/vid00002.json")).unwrap();
    match train_style_e::<f32>(&cfg, false) {
        Err(Error::Data(msg)) => assert!(msg.contains("vid00002"), "{msg}"),
        other => panic!("expected a data error, got {:?}", other.err()),
    }
}

#[test]
fn stage_a_requires_a_finished_inversion_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = prepare(tmp.path());
    match train_style_a::<f32>(&cfg, None, false) {
        Err(e) => assert_eq!(e.exit_code(), 3, "{e}"),
        Ok(_) => panic!("stage A trained without an inversion checkpoint"),
    }
    pretrain_inversion::<f32>(&cfg, false).unwrap();
    let mut other = cfg.clone();
    other.stage_a.pretrain.steps += 1;
    assert!(matches!(train_style_a::<f32>(&other, Some(&checkpoint_dir(&cfg.out_dir.join("inversion"))), false), Err(Error::Checkpoint(_))));
    let m = read_manifest(&checkpoint_dir(&cfg.out_dir.join("inversion"))).unwrap();
    assert_eq!(m.step, 10);
}
