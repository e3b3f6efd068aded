//! Procedural cartoon face renderer with analytic landmarks.
//!
//! All geometry lives in normalized `[0, 1]` image coordinates and is scaled
//! by the resolution, so landmarks are exact functions of the parameters.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{Frame, SynthFaceParams};
use crate::error::{Error, Result};

pub const SUPPORTED_RESOLUTIONS: [usize; 4] = [32, 64, 128, 256];

/// Palette 0 is the natural look; the rest are art styles.
pub const NUM_PALETTES: usize = 4;

pub const NUM_LANDMARKS: usize = 18;

/// Indices of the mouth points: corners, lip midpoints, lower-lip quarter points.
pub const MOUTH_LANDMARKS: std::ops::Range<usize> = 0..6;
pub const BROW_LANDMARKS: std::ops::Range<usize> = 6..10;
pub const EYE_LANDMARKS: std::ops::Range<usize> = 10..18;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
}

const MOUTH_CENTER: (f64, f64) = (0.5, 0.72);
const MOUTH_HALF_WIDTH: f64 = 0.12;
const MOUTH_MAX_HALF_HEIGHT: f64 = 0.09;
const EYE_CENTERS: [(f64, f64); 2] = [(0.36, 0.44), (0.64, 0.44)];
const EYE_HALF_WIDTH: f64 = 0.07;
const EYE_MAX_HALF_HEIGHT: f64 = 0.055;
const BROW_BASE_Y: f64 = 0.31;
const BROW_THICKNESS: f64 = 0.022;
const FACE_CENTER: (f64, f64) = (0.5, 0.53);
const FACE_RADII: (f64, f64) = (0.36, 0.42);

type Rgb = [f64; 3];

struct Palette {
    background: Rgb,
    skin: Rgb,
    eye: Rgb,
    brow: Rgb,
    mouth: Rgb,
    lip: Rgb,
    outline: Option<(Rgb, f64)>,
}

fn hsv(h: f64, s: f64, v: f64) -> Rgb {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn palette(id: u32, hue: f64) -> Palette {
    match id {
        0 => Palette {
            background: [0.82, 0.86, 0.9],
            skin: hsv(0.02 + 0.08 * hue, 0.25 + 0.3 * hue, 0.95 - 0.35 * hue),
            eye: [0.12, 0.1, 0.1],
            brow: [0.3, 0.2, 0.12],
            mouth: [0.45, 0.08, 0.1],
            lip: [0.7, 0.35, 0.35],
            outline: None,
        },
        1 => Palette {
            background: [0.98, 0.9, 0.45],
            skin: hsv(0.55 + 0.3 * hue, 0.45, 0.95),
            eye: [0.05, 0.05, 0.3],
            brow: [0.05, 0.05, 0.05],
            mouth: [0.85, 0.1, 0.35],
            lip: [0.6, 0.05, 0.25],
            outline: Some(([0.0, 0.0, 0.0], 0.02)),
        },
        2 => {
            let g = 0.75 + 0.2 * hue;
            Palette {
                background: [0.97, 0.97, 0.97],
                skin: [g, g, g],
                eye: [0.2, 0.2, 0.2],
                brow: [0.25, 0.25, 0.25],
                mouth: [0.35, 0.35, 0.35],
                lip: [0.5, 0.5, 0.5],
                outline: Some(([0.3, 0.3, 0.3], 0.012)),
            }
        }
        _ => Palette {
            background: [0.2, 0.1, 0.35],
            skin: hsv(0.85 + 0.15 * hue, 0.7, 0.9),
            eye: [0.95, 0.95, 0.2],
            brow: [0.1, 0.9, 0.8],
            mouth: [0.1, 0.6, 0.2],
            lip: [0.9, 0.9, 0.9],
            outline: Some(([0.95, 0.95, 0.95], 0.015)),
        },
    }
}

fn mouth_half_height(p: &SynthFaceParams) -> f64 {
    MOUTH_MAX_HALF_HEIGHT * p.mouth_open
}

fn eye_half_height(p: &SynthFaceParams) -> f64 {
    EYE_MAX_HALF_HEIGHT * p.eye_open
}

/// Brow endpoints (outer, inner) for the left (0) or right (1) brow.
fn brow_segment(p: &SynthFaceParams, side: usize) -> ((f64, f64), (f64, f64)) {
    let outer_y = BROW_BASE_Y - 0.02 * p.brow_raise;
    let inner_y = BROW_BASE_Y - 0.05 * p.brow_raise;
    if side == 0 {
        ((0.27, outer_y), (0.44, inner_y))
    } else {
        ((0.73, outer_y), (0.56, inner_y))
    }
}

/// Analytic landmark positions in normalized coordinates.
fn normalized_landmarks(p: &SynthFaceParams) -> [(f64, f64); NUM_LANDMARKS] {
    let (mx, my) = MOUTH_CENTER;
    let mh = mouth_half_height(p);
    let quarter = (1.0f64 - 0.25).sqrt();
    let mut out = [(0.0, 0.0); NUM_LANDMARKS];
    out[0] = (mx - MOUTH_HALF_WIDTH, my);
    out[1] = (mx + MOUTH_HALF_WIDTH, my);
    out[2] = (mx, my - mh);
    out[3] = (mx, my + mh);
    out[4] = (mx - 0.5 * MOUTH_HALF_WIDTH, my + quarter * mh);
    out[5] = (mx + 0.5 * MOUTH_HALF_WIDTH, my + quarter * mh);
    for side in 0..2 {
        let (a, b) = brow_segment(p, side);
        out[6 + 2 * side] = a;
        out[7 + 2 * side] = b;
    }
    let eh = eye_half_height(p);
    for (side, &(ex, ey)) in EYE_CENTERS.iter().enumerate() {
        let base = 10 + 4 * side;
        out[base] = (ex - EYE_HALF_WIDTH, ey);
        out[base + 1] = (ex + EYE_HALF_WIDTH, ey);
        out[base + 2] = (ex, ey - eh);
        out[base + 3] = (ex, ey + eh);
    }
    out
}

/// Landmarks in pixel coordinates for a given resolution.
pub fn landmarks_for(params: &SynthFaceParams, resolution: usize) -> Vec<Landmark> {
    let r = resolution as f64;
    normalized_landmarks(params)
        .iter()
        .map(|&(x, y)| Landmark { x: x * r, y: y * r })
        .collect()
}

/// Approximate signed distance to an ellipse boundary (negative inside).
///
/// First-order estimate `f / |grad f|` of the implicit function, bounded
/// below by the distance to the bounding box so that flat ellipses do not
/// bleed along their major axis.
fn ellipse_sd(x: f64, y: f64, c: (f64, f64), rx: f64, ry: f64) -> f64 {
    let ry = ry.max(1e-6);
    let (dx, dy) = (x - c.0, y - c.1);
    let (u, v) = (dx / rx, dy / ry);
    let f = u * u + v * v - 1.0;
    let grad = 2.0 * ((u / rx).powi(2) + (v / ry).powi(2)).sqrt();
    let approx = if grad > 0.0 { f / grad } else { -rx.min(ry) };
    let bx = dx.abs() - rx;
    let by = dy.abs() - ry;
    let box_dist = if bx > 0.0 || by > 0.0 {
        (bx.max(0.0).powi(2) + by.max(0.0).powi(2)).sqrt()
    } else {
        bx.max(by)
    };
    approx.max(box_dist)
}

fn segment_distance(x: f64, y: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((x - a.0) * dx + (y - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((x - a.0 - t * dx).powi(2) + (y - a.1 - t * dy).powi(2)).sqrt()
}

fn blend(dst: &mut Rgb, src: &Rgb, alpha: f64) {
    if alpha <= 0.0 {
        return;
    }
    for i in 0..3 {
        dst[i] += (src[i] - dst[i]) * alpha;
    }
}

/// Shades one pixel center given in normalized coordinates; `aa` is the
/// anti-aliasing width (one pixel in normalized units).
fn shade(p: &SynthFaceParams, pal: &Palette, x: f64, y: f64, aa: f64) -> Rgb {
    let coverage = |sd: f64| (0.5 - sd / aa).clamp(0.0, 1.0);
    let mut c = pal.background;

    let face = ellipse_sd(x, y, FACE_CENTER, FACE_RADII.0, FACE_RADII.1);
    blend(&mut c, &pal.skin, coverage(face));
    if let Some((color, width)) = pal.outline {
        blend(&mut c, &color, coverage(face.abs() - 0.5 * width));
    }

    let eh = eye_half_height(p);
    for &center in &EYE_CENTERS {
        blend(&mut c, &pal.eye, coverage(ellipse_sd(x, y, center, EYE_HALF_WIDTH, eh)));
        // closed lid line keeps the eye visible at zero aperture
        let lid = segment_distance(x, y, (center.0 - EYE_HALF_WIDTH, center.1), (center.0 + EYE_HALF_WIDTH, center.1));
        blend(&mut c, &pal.eye, 0.6 * coverage(lid - 0.004));
    }

    for side in 0..2 {
        let (a, b) = brow_segment(p, side);
        blend(&mut c, &pal.brow, coverage(segment_distance(x, y, a, b) - 0.5 * BROW_THICKNESS));
    }

    let (mx, my) = MOUTH_CENTER;
    let lip = segment_distance(x, y, (mx - MOUTH_HALF_WIDTH, my), (mx + MOUTH_HALF_WIDTH, my));
    blend(&mut c, &pal.lip, coverage(lip - 0.008));
    let mouth = ellipse_sd(x, y, MOUTH_CENTER, MOUTH_HALF_WIDTH, mouth_half_height(p));
    blend(&mut c, &pal.lip, coverage(mouth - 0.006));
    blend(&mut c, &pal.mouth, coverage(mouth));
    c
}

fn check_resolution(resolution: usize) -> Result<()> {
    if SUPPORTED_RESOLUTIONS.contains(&resolution) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "resolution {resolution} not supported; use one of {SUPPORTED_RESOLUTIONS:?}"
        )))
    }
}

fn render_pixels(params: &SynthFaceParams, resolution: usize) -> Array3<f32> {
    let pal = palette(params.art_palette_id, params.identity_hue);
    let r = resolution as f64;
    let mut pixels = Array3::<f32>::zeros((3, resolution, resolution));
    for iy in 0..resolution {
        for ix in 0..resolution {
            let rgb = shade(params, &pal, (ix as f64 + 0.5) / r, (iy as f64 + 0.5) / r, 1.0 / r);
            for ch in 0..3 {
                pixels[[ch, iy, ix]] = rgb[ch].clamp(0.0, 1.0) as f32;
            }
        }
    }
    pixels
}

/// Renders a deterministic cartoon face and its analytic landmarks.
pub fn render_synthetic_frame(params: &SynthFaceParams, resolution: usize) -> Result<Frame> {
    check_resolution(resolution)?;
    params.validate()?;
    Frame::new(render_pixels(params, resolution), landmarks_for(params, resolution))
}

/// Recovers mouth, brow, and eye parameters from an image by analysis by
/// synthesis: each parameter is searched on the pixels of its own facial
/// region, coarse grid first, then a local refinement.
///
/// The identity hue and palette must be known. Returns the best-fitting
/// parameters; their [`landmarks_for`] serve as detected landmarks.
pub fn fit_expression(frame: &Frame, identity_hue: f64, palette_id: u32) -> Result<SynthFaceParams> {
    let res = frame.height();
    check_resolution(res)?;
    if frame.width() != res {
        return Err(Error::Shape("fit_expression needs a square frame".into()));
    }
    let base = SynthFaceParams::NEUTRAL.with_identity(identity_hue, palette_id);
    base.validate()?;
    let pal = palette(palette_id, identity_hue);
    let r = res as f64;
    let target = frame.pixels();

    // Regions in normalized coordinates: (x0, x1, y0, y1).
    let mouth_region = (0.34, 0.66, 0.6, 0.84);
    let brow_region = (0.22, 0.78, 0.2, 0.38);
    let eye_region = (0.26, 0.74, 0.38, 0.5);

    let region_error = |p: &SynthFaceParams, reg: (f64, f64, f64, f64)| -> f64 {
        let (x0, x1, y0, y1) = reg;
        let (ix0, ix1) = ((x0 * r) as usize, ((x1 * r).ceil() as usize).min(res));
        let (iy0, iy1) = ((y0 * r) as usize, ((y1 * r).ceil() as usize).min(res));
        let mut err = 0.0;
        for iy in iy0..iy1 {
            for ix in ix0..ix1 {
                let rgb = shade(p, &pal, (ix as f64 + 0.5) / r, (iy as f64 + 0.5) / r, 1.0 / r);
                for ch in 0..3 {
                    let d = rgb[ch].clamp(0.0, 1.0) - target[[ch, iy, ix]] as f64;
                    err += d * d;
                }
            }
        }
        err
    };

    let search = |lo: f64, hi: f64, set: &dyn Fn(f64) -> SynthFaceParams, reg| -> f64 {
        let eval = |v: f64| region_error(&set(v), reg);
        let mut best = (lo, eval(lo));
        let steps = 40;
        for i in 1..=steps {
            let v = lo + (hi - lo) * i as f64 / steps as f64;
            let e = eval(v);
            if e < best.1 {
                best = (v, e);
            }
        }
        let mut step = (hi - lo) / steps as f64;
        for _ in 0..12 {
            step *= 0.5;
            for cand in [best.0 - step, best.0 + step] {
                if cand >= lo && cand <= hi {
                    let e = eval(cand);
                    if e < best.1 {
                        best = (cand, e);
                    }
                }
            }
        }
        best.0
    };

    let mouth_open = search(0.0, 1.0, &|v| SynthFaceParams { mouth_open: v, ..base }, mouth_region);
    let brow_raise = search(-1.0, 1.0, &|v| SynthFaceParams { brow_raise: v, ..base }, brow_region);
    let eye_open = search(0.0, 1.0, &|v| SynthFaceParams { eye_open: v, ..base }, eye_region);
    Ok(SynthFaceParams { mouth_open, brow_raise, eye_open, ..base })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(mouth: f64, brow: f64, eye: f64) -> SynthFaceParams {
        SynthFaceParams { mouth_open: mouth, brow_raise: brow, eye_open: eye, ..SynthFaceParams::NEUTRAL }
    }

    #[test]
    fn closed_mouth_lip_midpoints_coincide() {
        let f = render_synthetic_frame(&params(0.0, 0.0, 0.5), 64).unwrap();
        let l = f.landmarks();
        assert_eq!(l[2], l[3]);
    }

    #[test]
    fn rendering_is_deterministic() {
        let p = params(0.3, -0.4, 0.7).with_identity(0.2, 1);
        let a = render_synthetic_frame(&p, 128).unwrap();
        let b = render_synthetic_frame(&p, 128).unwrap();
        assert_eq!(a.pixels().as_slice().unwrap(), b.pixels().as_slice().unwrap());
    }

    #[test]
    fn wider_mouth_opening_spreads_lip_midpoints() {
        let gap = |m: f64| {
            let l = landmarks_for(&params(m, 0.0, 0.5), 64);
            l[3].y - l[2].y
        };
        // oracle: 2 * max_half_height * mouth_open * resolution
        assert!((gap(0.5) - 2.0 * MOUTH_MAX_HALF_HEIGHT * 0.5 * 64.0).abs() < 1e-9);
        assert!(gap(1.0) > gap(0.5));
    }

    #[test]
    fn unsupported_resolution_is_rejected() {
        assert!(matches!(render_synthetic_frame(&SynthFaceParams::NEUTRAL, 48), Err(Error::Config(_))));
    }

    #[test]
    fn landmarks_stay_inside_the_image() {
        for &m in &[0.0, 1.0] {
            for &b in &[-1.0, 1.0] {
                let f = render_synthetic_frame(&params(m, b, 1.0), 32).unwrap();
                assert_eq!(f.landmarks().len(), NUM_LANDMARKS);
            }
        }
    }

    #[test]
    fn fitting_recovers_rendered_parameters() {
        let truth = params(0.7, 0.4, 0.3).with_identity(0.6, 2);
        let frame = render_synthetic_frame(&truth, 64).unwrap();
        let fit = fit_expression(&frame, 0.6, 2).unwrap();
        assert!((fit.mouth_open - 0.7).abs() < 0.02, "{fit:?}");
        assert!((fit.brow_raise - 0.4).abs() < 0.05, "{fit:?}");
        assert!((fit.eye_open - 0.3).abs() < 0.05, "{fit:?}");
    }
}
