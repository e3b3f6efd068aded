//! Image-quality and landmark-distance metrics.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::coeffspace::{Frame, Landmark, MOUTH_LANDMARKS};
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized `size x size` Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Array2<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g = Array2::from_shape_fn((size, size), |(y, x)| {
        let (dy, dx) = (y as f64 - c, x as f64 - c);
        (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
    });
    let s = g.sum();
    g / s
}

fn filter_valid(x: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    let k = w.nrows();
    let (h, wd) = x.dim();
    Array2::from_shape_fn((h - k + 1, wd - k + 1), |(y, xx)| {
        let mut acc = 0.0;
        for i in 0..k {
            for j in 0..k {
                acc += w[[i, j]] * x[[y + i, xx + j]];
            }
        }
        acc
    })
}

/// Mean local SSIM of one channel over fully contained windows.
pub fn ssim_channel(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("ssim inputs {:?} and {:?} differ", a.dim(), b.dim())));
    }
    let side = a.nrows().min(a.ncols());
    if side == 0 {
        return Err(Error::Shape("ssim of an empty image".into()));
    }
    let mut size = SSIM_WINDOW.min(side);
    if size % 2 == 0 {
        size -= 1;
    }
    let w = gaussian_window(size, SSIM_SIGMA);
    let (a, b) = (a.to_owned(), b.to_owned());
    let mu_a = filter_valid(&a, &w);
    let mu_b = filter_valid(&b, &w);
    let aa = filter_valid(&(&a * &a), &w);
    let bb = filter_valid(&(&b * &b), &w);
    let ab = filter_valid(&(&a * &b), &w);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a.as_slice().unwrap()[i], mu_b.as_slice().unwrap()[i]);
        let va = aa.as_slice().unwrap()[i] - ma * ma;
        let vb = bb.as_slice().unwrap()[i] - mb * mb;
        let cov = ab.as_slice().unwrap()[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / mu_a.len() as f64)
}

/// SSIM averaged over the three colour channels.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    if a.pixels().dim() != b.pixels().dim() {
        return Err(Error::Shape(format!("ssim frames {:?} and {:?} differ", a.pixels().dim(), b.pixels().dim())));
    }
    let (pa, pb) = (a.pixels().mapv(f64::from), b.pixels().mapv(f64::from));
    let mut sum = 0.0;
    for (ca, cb) in pa.axis_iter(Axis(0)).zip(pb.axis_iter(Axis(0))) {
        sum += ssim_channel(ca, cb)?;
    }
    Ok(sum / 3.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkSubset {
    Mouth,
    Face,
}

/// Mean Euclidean distance over the selected landmarks of every frame.
pub fn lmd(pred: &[Vec<Landmark>], target: &[Vec<Landmark>], subset: LandmarkSubset) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Data(format!("landmark sequences of {} and {} frames", pred.len(), target.len())));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(target) {
        if p.len() != t.len() {
            return Err(Error::Data(format!("{} predicted vs {} target landmarks", p.len(), t.len())));
        }
        let range = match subset {
            LandmarkSubset::Face => 0..p.len(),
            LandmarkSubset::Mouth => MOUTH_LANDMARKS,
        };
        if range.end > p.len() || range.is_empty() {
            return Err(Error::Data(format!("{} landmarks do not cover the {subset:?} subset", p.len())));
        }
        for i in range {
            total += ((p[i].x - t[i].x).powi(2) + (p[i].y - t[i].y).powi(2)).sqrt();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoScores {
    pub video_id: String,
    pub frames: usize,
    pub ssim: f64,
    pub m_lmd: f64,
    pub f_lmd: f64,
}

/// Frame-weighted aggregates plus the per-video rows they summarize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ssim: f64,
    pub m_lmd: f64,
    pub f_lmd: f64,
    pub videos: Vec<VideoScores>,
}

impl EvalReport {
    pub fn from_rows(videos: Vec<VideoScores>) -> Result<Self> {
        let frames: usize = videos.iter().map(|v| v.frames).sum();
        if frames == 0 {
            return Err(Error::Data("nothing to evaluate".into()));
        }
        let avg = |f: fn(&VideoScores) -> f64| videos.iter().map(|v| f(v) * v.frames as f64).sum::<f64>() / frames as f64;
        let r = Self { ssim: avg(|v| v.ssim), m_lmd: avg(|v| v.m_lmd), f_lmd: avg(|v| v.f_lmd), videos };
        if ![r.ssim, r.m_lmd, r.f_lmd].iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("evaluation produced non-finite scores".into()));
        }
        Ok(r)
    }

    /// Fixed-width table with one row per video and an aggregate row.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<24} {:>7} {:>8} {:>8} {:>8}\n", "video", "frames", "SSIM", "M-LMD", "F-LMD");
        for v in &self.videos {
            out += &format!("{:<24} {:>7} {:>8.4} {:>8.4} {:>8.4}\n", v.video_id, v.frames, v.ssim, v.m_lmd, v.f_lmd);
        }
        let frames: usize = self.videos.iter().map(|v| v.frames).sum();
        out += &format!("{:<24} {:>7} {:>8.4} {:>8.4} {:>8.4}\n", "all", frames, self.ssim, self.m_lmd, self.f_lmd);
        out
    }
}

/// Scores one predicted frame sequence against ground truth.
pub fn score_video(video_id: &str, pred: &[Frame], target: &[Frame]) -> Result<VideoScores> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Data(format!("{video_id}: {} predicted vs {} reference frames", pred.len(), target.len())));
    }
    let mut s = 0.0;
    for (p, t) in pred.iter().zip(target) {
        s += ssim(p, t)?;
    }
    let pl: Vec<Vec<Landmark>> = pred.iter().map(|f| f.landmarks().to_vec()).collect();
    let tl: Vec<Vec<Landmark>> = target.iter().map(|f| f.landmarks().to_vec()).collect();
    Ok(VideoScores {
        video_id: video_id.to_string(),
        frames: pred.len(),
        ssim: s / pred.len() as f64,
        m_lmd: lmd(&pl, &tl, LandmarkSubset::Mouth)?,
        f_lmd: lmd(&pl, &tl, LandmarkSubset::Face)?,
    })
}
