//! Scoring generated clips against ground truth on disk.

use std::fs;
use std::path::Path;

use super::generate::{ClipIndex, INDEX};
use crate::coeffspace::{read_frame_png, read_video, Frame, Landmark};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::metrics::{score_video, EvalReport};

fn frames_with(dir: &Path, landmarks: &[Vec<[f64; 2]>]) -> Result<Vec<Frame>> {
    landmarks
        .iter()
        .enumerate()
        .map(|(i, lms)| {
            let lms = lms.iter().map(|&[x, y]| Landmark { x, y }).collect();
            read_frame_png(&dir.join("frames").join(format!("{i:05}.png")), lms)
        })
        .collect()
}

/// Frames of a generated clip (`index.json`) or a corpus video (`meta.json`).
pub fn read_clip(dir: &Path) -> Result<Vec<Frame>> {
    let index = dir.join(INDEX);
    if index.is_file() {
        let bytes = fs::read(&index).map_err(|e| Error::io(&index, e))?;
        let idx: ClipIndex = serde_json::from_slice(&bytes)?;
        return frames_with(dir, &idx.landmarks);
    }
    if dir.join("meta.json").is_file() {
        return Ok(read_video(dir)?.frames);
    }
    Err(Error::Data(format!("{} holds neither {INDEX} nor meta.json", dir.display())))
}

fn is_clip(dir: &Path) -> bool {
    dir.join(INDEX).is_file() || dir.join("meta.json").is_file()
}

/// Pairs clips by directory name when `pred` and `gt` are collections,
/// or scores them directly when both are single clips.
pub fn evaluate_dirs(pred: &Path, gt: &Path) -> Result<EvalReport> {
    let mut rows = Vec::new();
    if is_clip(pred) && is_clip(gt) {
        let name = pred.file_name().unwrap_or_default().to_string_lossy().into_owned();
        rows.push(score_video(&name, &read_clip(pred)?, &read_clip(gt)?)?);
    } else {
        let mut names: Vec<_> = fs::read_dir(pred)
            .map_err(|e| Error::io(pred, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_clip(p))
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::Data(format!("no clips found under {}", pred.display())));
        }
        for p in names {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let g = gt.join(&name);
            if !is_clip(&g) {
                return Err(Error::Data(format!("no ground truth for `{name}` under {}", gt.display())));
            }
            rows.push(score_video(&name, &read_clip(&p)?, &read_clip(&g)?)?);
        }
    }
    EvalReport::from_rows(rows)
}

/// Writes `report.json` and `report.txt` into `out`.
pub fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    write_atomic(&out.join("report.json"), &bytes)?;
    write_atomic(&out.join("report.txt"), report.to_table().as_bytes())
}
