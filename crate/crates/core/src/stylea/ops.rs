//! Differentiable adaptive instance normalization and feature warping.

use ndarray::{ArrayD, IxDyn};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default variance stabilizer for [`adain_var`].
pub const ADAIN_EPS: f64 = 1e-5;

/// `scale * (x - mean) / sqrt(var + eps) + bias` per sample and channel,
/// with spatial population statistics. `x` is `(B, C, H, W)`, `scale` and
/// `bias` are `(B, C)`.
pub fn adain_var<S: Scalar>(x: &Var<S>, scale: &Var<S>, bias: &Var<S>, eps: f64) -> Result<Var<S>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("adain expects (B, C, H, W), got {s:?}")));
    }
    let (b, c) = (s[0], s[1]);
    for (name, p) in [("scale", scale), ("bias", bias)] {
        if p.shape() != [b, c] {
            return Err(Error::Shape(format!("adain {name} {:?} does not match ({b}, {c})", p.shape())));
        }
    }
    if eps < 0.0 {
        return Err(Error::Config(format!("adain eps must be non-negative, got {eps}")));
    }
    let centered = x - &x.mean_axes_keep(&[2, 3]);
    let std = centered.square().mean_axes_keep(&[2, 3]).add_scalar(S::c(eps)).sqrt();
    let normalized = &centered / &std;
    Ok(&(&normalized * &scale.reshape(&[b, c, 1, 1])) + &bias.reshape(&[b, c, 1, 1]))
}

struct Tap<S> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    wx: S,
    wy: S,
    /// Whether the sample position moved with the flow (not clamped) per axis.
    live_x: bool,
    live_y: bool,
}

fn tap<S: Scalar>(pos: S, limit: usize) -> (usize, usize, S, bool) {
    let hi = S::from_usize_lossy(limit - 1);
    let live = pos > S::zero() && pos < hi;
    let p = pos.max(S::zero()).min(hi);
    let f = p.floor();
    let i0 = f.to_usize().unwrap_or(0).min(limit - 1);
    let i1 = (i0 + 1).min(limit - 1);
    (i0, i1, p - f, live)
}

/// Bilinear sampling of `m (B, C, H, W)` at `(x + dx, y + dy)` where
/// `flow (B, 2, H, W)` holds `dx` in channel 0 and `dy` in channel 1, in
/// pixels. Positions outside the map are clamped to the border.
pub fn warp_var<S: Scalar>(m: &Var<S>, flow: &Var<S>) -> Result<Var<S>> {
    let ms = m.shape().to_vec();
    let fs = flow.shape();
    if ms.len() != 4 || fs.len() != 4 || fs[0] != ms[0] || fs[1] != 2 || fs[2] != ms[2] || fs[3] != ms[3] {
        return Err(Error::Shape(format!("cannot warp {ms:?} with flow {fs:?}")));
    }
    let (b, c, h, w) = (ms[0], ms[1], ms[2], ms[3]);
    let f = flow.value();
    let mut taps = Vec::with_capacity(b * h * w);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let (x0, x1, wx, live_x) = tap(S::from_usize_lossy(x) + f[[bi, 0, y, x]], w);
                let (y0, y1, wy, live_y) = tap(S::from_usize_lossy(y) + f[[bi, 1, y, x]], h);
                taps.push(Tap { x0, x1, y0, y1, wx, wy, live_x, live_y });
            }
        }
    }
    let mv = m.value();
    let one = S::one();
    let value = ArrayD::from_shape_fn(IxDyn(&[b, c, h, w]), |ix| {
        let (bi, ci) = (ix[0], ix[1]);
        let t = &taps[(bi * h + ix[2]) * w + ix[3]];
        let top = mv[[bi, ci, t.y0, t.x0]] * (one - t.wx) + mv[[bi, ci, t.y0, t.x1]] * t.wx;
        let bot = mv[[bi, ci, t.y1, t.x0]] * (one - t.wx) + mv[[bi, ci, t.y1, t.x1]] * t.wx;
        top * (one - t.wy) + bot * t.wy
    });
    let m_val = mv.clone();
    let (need_m, need_f) = (m.requires_grad(), flow.requires_grad());
    Ok(Var::from_op(value, vec![m.clone(), flow.clone()], move |g| {
        let mut gm = need_m.then(|| ArrayD::<S>::zeros(IxDyn(&[b, c, h, w])));
        let mut gf = need_f.then(|| ArrayD::<S>::zeros(IxDyn(&[b, 2, h, w])));
        for bi in 0..b {
            for y in 0..h {
                for x in 0..w {
                    let t = &taps[(bi * h + y) * w + x];
                    let (ax, ay) = (one - t.wx, one - t.wy);
                    let (mut dx, mut dy) = (S::zero(), S::zero());
                    for ci in 0..c {
                        let go = g[[bi, ci, y, x]];
                        if let Some(gm) = gm.as_mut() {
                            gm[[bi, ci, t.y0, t.x0]] += go * ax * ay;
                            gm[[bi, ci, t.y0, t.x1]] += go * t.wx * ay;
                            gm[[bi, ci, t.y1, t.x0]] += go * ax * t.wy;
                            gm[[bi, ci, t.y1, t.x1]] += go * t.wx * t.wy;
                        }
                        if gf.is_some() {
                            let (a, bb) = (m_val[[bi, ci, t.y0, t.x0]], m_val[[bi, ci, t.y0, t.x1]]);
                            let (cc, d) = (m_val[[bi, ci, t.y1, t.x0]], m_val[[bi, ci, t.y1, t.x1]]);
                            dx += go * (ay * (bb - a) + t.wy * (d - cc));
                            dy += go * (ax * (cc - a) + t.wx * (d - bb));
                        }
                    }
                    if let Some(gf) = gf.as_mut() {
                        if t.live_x {
                            gf[[bi, 0, y, x]] = dx;
                        }
                        if t.live_y {
                            gf[[bi, 1, y, x]] = dy;
                        }
                    }
                }
            }
        }
        vec![gm, gf]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(lo..hi))
    }

    fn fd_check(f: impl Fn(&[Var<f64>]) -> Var<f64>, inputs: Vec<ArrayD<f64>>) {
        let leaves: Vec<Var<f64>> = inputs.iter().map(|v| Var::leaf(v.clone())).collect();
        let weights = rand_tensor(f(&leaves).shape(), 99, -1.0, 1.0);
        let objective = |vars: &[Var<f64>]| (&f(vars) * &Var::constant(weights.clone())).sum();
        let grads = objective(&leaves).backward();
        let h = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let an = grads.get_or_zeros(&leaves[k]);
            for idx in 0..input.len() {
                let eval = |delta: f64| {
                    let vars: Vec<Var<f64>> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, v)| {
                            let mut v = v.clone();
                            if j == k {
                                v.as_slice_mut().unwrap()[idx] += delta;
                            }
                            Var::constant(v)
                        })
                        .collect();
                    objective(&vars).item()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let a = an.as_slice().unwrap()[idx];
                let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
                assert!(rel < 1e-4, "input {k}[{idx}]: fd {fd} vs analytic {a}");
            }
        }
    }

    #[test]
    fn adain_gradients_match_finite_differences() {
        fd_check(
            |v| adain_var(&v[0], &v[1], &v[2], ADAIN_EPS).unwrap(),
            vec![rand_tensor(&[2, 2, 3, 3], 1, -1.0, 1.0), rand_tensor(&[2, 2], 2, 0.5, 2.0), rand_tensor(&[2, 2], 3, -1.0, 1.0)],
        );
    }

    #[test]
    fn warp_gradients_match_finite_differences() {
        // Fractional flows keep every sample strictly between grid points.
        let flow = rand_tensor(&[1, 2, 4, 4], 5, 0.1, 0.9) - rand_tensor(&[1, 2, 4, 4], 6, 0.0, 1.0).mapv(f64::round);
        fd_check(|v| warp_var(&v[0], &v[1]).unwrap(), vec![rand_tensor(&[1, 2, 4, 4], 4, -1.0, 1.0), flow]);
    }

    #[test]
    fn clamped_samples_have_no_flow_gradient() {
        let m = Var::constant(rand_tensor(&[1, 1, 3, 3], 1, 0.0, 1.0));
        let flow = Var::leaf(ArrayD::from_elem(IxDyn(&[1, 2, 3, 3]), 10.0));
        let g = warp_var(&m, &flow).unwrap().sum().backward();
        assert!(g.get(&flow).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let m = Var::constant(ArrayD::<f64>::zeros(IxDyn(&[1, 2, 4, 4])));
        let bad = Var::constant(ArrayD::<f64>::zeros(IxDyn(&[1, 2, 3, 4])));
        assert!(matches!(warp_var(&m, &bad), Err(Error::Shape(_))));
        let s = Var::constant(ArrayD::<f64>::zeros(IxDyn(&[1, 3])));
        assert!(matches!(adain_var(&m, &s, &s, 1e-5), Err(Error::Shape(_))));
    }
}
