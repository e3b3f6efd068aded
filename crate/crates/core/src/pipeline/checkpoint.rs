//! Checkpoints: a flat little-endian `f32` parameter blob, optional
//! optimizer moments, and a JSON manifest describing both.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::diffusion::ScheduleDescriptor;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::nn::{Adam, ParamLayout, ParamStore};
use crate::scalar::Scalar;

pub const MANIFEST: &str = "manifest.json";
pub const PARAMS: &str = "params.bin";
pub const OPTIMIZER: &str = "optimizer.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    E,
    Inversion,
    A,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub name: String,
    pub step: u64,
    pub param_ids: Vec<usize>,
    /// Offset of this optimizer's moments inside `optimizer.bin`.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub stage: Stage,
    pub step: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub params_file: String,
    pub layout: Vec<ParamLayout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleDescriptor>,
    #[serde(default)]
    pub optimizers: Vec<OptimizerState>,
    #[serde(default)]
    pub frozen_groups: Vec<String>,
    /// SHA-256 of every parameter group at save time.
    pub group_hashes: BTreeMap<String, String>,
}

fn encode(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn decode(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint(format!("{} is truncated", path.display())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Everything needed to write one checkpoint.
pub struct CheckpointData<'a, S: Scalar> {
    pub stage: Stage,
    pub step: u64,
    pub config_hash: String,
    pub config: &'a RunConfig,
    pub store: &'a ParamStore<S>,
    pub schedule: Option<ScheduleDescriptor>,
    pub optimizers: Vec<(&'a str, &'a Adam<S>)>,
}

pub fn save_checkpoint<S: Scalar>(dir: &Path, data: CheckpointData<S>) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(PARAMS), &encode(&data.store.to_flat_f32()))?;
    let mut blob = Vec::new();
    let mut optimizers = Vec::new();
    for (name, adam) in &data.optimizers {
        let state = adam.state_f32();
        optimizers.push(OptimizerState {
            name: name.to_string(),
            step: adam.step,
            param_ids: adam.state_ids(),
            offset: blob.len(),
            len: state.len(),
        });
        blob.extend(state);
    }
    if !optimizers.is_empty() {
        write_atomic(&dir.join(OPTIMIZER), &encode(&blob))?;
    }
    let manifest = CheckpointManifest {
        stage: data.stage,
        step: data.step,
        config_hash: data.config_hash,
        config: data.config.clone(),
        params_file: PARAMS.to_string(),
        layout: data.store.layout(),
        schedule: data.schedule,
        optimizers,
        frozen_groups: data.store.frozen_groups().iter().cloned().collect(),
        group_hashes: data.store.groups().iter().map(|g| (g.clone(), data.store.group_hash(g))).collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_atomic(&dir.join(MANIFEST), &bytes)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Reads a manifest and checks its stage and, when given, its config hash.
pub fn open_checkpoint(dir: &Path, stage: Stage, expected_hash: Option<&str>, allow_mismatch: bool) -> Result<CheckpointManifest> {
    let m = read_manifest(dir)?;
    if m.stage != stage {
        return Err(Error::Checkpoint(format!("{} holds a {:?} checkpoint, expected {stage:?}", dir.display(), m.stage)));
    }
    if let Some(h) = expected_hash {
        if h != m.config_hash && !allow_mismatch {
            return Err(Error::Checkpoint(format!(
                "{} was produced by a different configuration (hash {} vs {h}); pass the override flag to load it anyway",
                dir.display(),
                &m.config_hash[..12.min(m.config_hash.len())]
            )));
        }
    }
    Ok(m)
}

/// Loads parameters into `store` and re-applies the recorded freezing.
pub fn load_params<S: Scalar>(dir: &Path, manifest: &CheckpointManifest, store: &mut ParamStore<S>) -> Result<()> {
    let blob = decode(&dir.join(&manifest.params_file))?;
    let total: usize = manifest.layout.iter().map(|l| l.shape.iter().product::<usize>()).sum();
    if blob.len() != total {
        return Err(Error::Checkpoint(format!("{} holds {} values, layout needs {total}", manifest.params_file, blob.len())));
    }
    store.load_flat_f32(&manifest.layout, &blob)?;
    for g in &manifest.frozen_groups {
        store.freeze(g);
    }
    Ok(())
}

pub fn load_optimizer<S: Scalar>(
    dir: &Path,
    manifest: &CheckpointManifest,
    name: &str,
    store: &ParamStore<S>,
    adam: &mut Adam<S>,
) -> Result<()> {
    let state = manifest
        .optimizers
        .iter()
        .find(|o| o.name == name)
        .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no `{name}` optimizer state")))?;
    let blob = decode(&dir.join(OPTIMIZER))?;
    let slice = blob
        .get(state.offset..state.offset + state.len)
        .ok_or_else(|| Error::Checkpoint("optimizer blob is truncated".into()))?;
    adam.restore_state(store, &state.param_ids, slice, state.step)
}
