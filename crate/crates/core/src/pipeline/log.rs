//! Newline-delimited JSON training logs.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub struct TrainLog {
    file: File,
    path: std::path::PathBuf,
    start: Instant,
}

impl TrainLog {
    /// Appends to `path`, truncating first unless resuming.
    pub fn open(path: &Path, resume: bool) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(resume)
            .write(true)
            .truncate(!resume)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self { file, path: path.to_path_buf(), start: Instant::now() })
    }

    pub fn record(&mut self, step: u64, values: &[(&str, f64)]) -> Result<()> {
        let mut obj = Map::new();
        obj.insert("step".into(), json!(step));
        for (k, v) in values {
            obj.insert((*k).into(), json!(v));
        }
        obj.insert("wall_clock_s".into(), json!(self.start.elapsed().as_secs_f64()));
        let line = serde_json::to_string(&Value::Object(obj))?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }
}
