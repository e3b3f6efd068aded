//! Spatial operations on NCHW tensors.

use ndarray::{Array2, ArrayD, IxDyn};
use rayon::prelude::*;

use super::Var;
use crate::scalar::Scalar;

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Input index feeding output (oy, ox) through kernel tap (ky, kx).
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
            None
        } else {
            Some((iy as usize, ix as usize))
        }
    }
}

fn im2col<S: Scalar>(x: &[S], g: Geometry) -> Array2<S> {
    let mut cols = vec![S::zero(); g.rows() * g.cols()];
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * g.cols()..(row + 1) * g.cols()];
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                            dst[oy * g.wo + ox] = plane[iy * g.w + ix];
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((g.rows(), g.cols()), cols).unwrap()
}

fn col2im<S: Scalar>(cols: &Array2<S>, g: Geometry) -> Vec<S> {
    let mut out = vec![S::zero(); g.c * g.h * g.w];
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().unwrap();
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let from = &src[row * g.cols()..(row + 1) * g.cols()];
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                            out[(ci * g.h + iy) * g.w + ix] += from[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

impl<S: Scalar> Var<S> {
    /// 2-d convolution (cross-correlation) of `(B, C, H, W)` input with
    /// `(O, C, k, k)` weights and optional `(O,)` bias.
    pub fn conv2d(&self, weight: &Var<S>, bias: Option<&Var<S>>, stride: usize, pad: usize) -> Var<S> {
        let xs = self.shape();
        let ws = weight.shape();
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW");
        assert_eq!(ws.len(), 4, "conv2d weight must be OCkk");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch");
        assert_eq!(ws[2], ws[3], "conv2d kernels are square");
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "conv2d kernel larger than padded input");
        let geo = Geometry {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        };

        let x = self.value().as_standard_layout().into_owned();
        let xsl = x.as_slice().unwrap();
        let w2 = weight
            .value()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((o, geo.rows()))
            .unwrap();
        let per = c * h * w;

        let outs: Vec<(Array2<S>, Array2<S>)> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let cols = im2col(&xsl[bi * per..(bi + 1) * per], geo);
                let y = w2.dot(&cols);
                (cols, y)
            })
            .collect();

        let mut value = Vec::with_capacity(b * o * geo.cols());
        for (_, y) in &outs {
            value.extend(y.iter().copied());
        }
        let mut value = ArrayD::from_shape_vec(IxDyn(&[b, o, geo.ho, geo.wo]), value).unwrap();
        if let Some(bias) = bias {
            let bv = bias.value().view().into_shape_with_order(IxDyn(&[1, o, 1, 1])).unwrap();
            value += &bv;
        }

        let cols: Vec<Array2<S>> = outs.into_iter().map(|(c, _)| c).collect();
        let need_x = self.requires_grad();
        let need_w = weight.requires_grad();
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(bias) = bias {
            parents.push(bias.clone());
        }
        let has_bias = bias.is_some();
        let wshape = ws.to_vec();

        Var::from_op(value, parents, move |g| {
            let g = g.as_standard_layout().into_owned();
            let gs = g.as_slice().unwrap();
            let step = o * geo.cols();
            let per_batch: Vec<(Option<Array2<S>>, Option<Vec<S>>)> = (0..b)
                .into_par_iter()
                .map(|bi| {
                    let gb = Array2::from_shape_vec((o, geo.cols()), gs[bi * step..(bi + 1) * step].to_vec())
                        .unwrap();
                    let gw = need_w.then(|| gb.dot(&cols[bi].t()));
                    let gx = need_x.then(|| col2im(&w2.t().dot(&gb), geo));
                    (gw, gx)
                })
                .collect();

            let mut gw_total: Option<Array2<S>> = None;
            let mut gx_total: Vec<S> = Vec::new();
            for (gw, gx) in per_batch {
                if let Some(gw) = gw {
                    match &mut gw_total {
                        Some(acc) => *acc += &gw,
                        None => gw_total = Some(gw),
                    }
                }
                if let Some(gx) = gx {
                    gx_total.extend(gx);
                }
            }
            let gx = need_x.then(|| ArrayD::from_shape_vec(IxDyn(&[b, c, h, w]), gx_total).unwrap());
            let gw = gw_total.map(|a| a.into_shape_with_order(IxDyn(&wshape)).unwrap());
            let mut grads = vec![gx, gw];
            if has_bias {
                let mut gb = vec![S::zero(); o];
                for bi in 0..b {
                    for (oi, acc) in gb.iter_mut().enumerate() {
                        let off = bi * step + oi * geo.cols();
                        *acc += gs[off..off + geo.cols()].iter().copied().sum::<S>();
                    }
                }
                grads.push(Some(ArrayD::from_shape_vec(IxDyn(&[o]), gb).unwrap()));
            }
            grads
        })
    }

    /// Nearest-neighbour 2x upsampling of an NCHW tensor.
    pub fn upsample2x(&self) -> Var<S> {
        let s = self.shape().to_vec();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let x = self.value();
        let value = ArrayD::from_shape_fn(IxDyn(&[b, c, 2 * h, 2 * w]), |ix| {
            x[[ix[0], ix[1], ix[2] / 2, ix[3] / 2]]
        });
        Var::from_op(value, vec![self.clone()], move |g| {
            let out = ArrayD::from_shape_fn(IxDyn(&[b, c, h, w]), |ix| {
                let (y, x) = (2 * ix[2], 2 * ix[3]);
                g[[ix[0], ix[1], y, x]]
                    + g[[ix[0], ix[1], y, x + 1]]
                    + g[[ix[0], ix[1], y + 1, x]]
                    + g[[ix[0], ix[1], y + 1, x + 1]]
            });
            vec![Some(out)]
        })
    }

    /// 2x2 average pooling of an NCHW tensor with even spatial size.
    pub fn avg_pool2x(&self) -> Var<S> {
        let s = self.shape().to_vec();
        let (b, c, h, w) = (s[0], s[1], s[2] / 2, s[3] / 2);
        let quarter = S::c(0.25);
        let x = self.value();
        let value = ArrayD::from_shape_fn(IxDyn(&[b, c, h, w]), |ix| {
            let (y, xx) = (2 * ix[2], 2 * ix[3]);
            (x[[ix[0], ix[1], y, xx]]
                + x[[ix[0], ix[1], y, xx + 1]]
                + x[[ix[0], ix[1], y + 1, xx]]
                + x[[ix[0], ix[1], y + 1, xx + 1]])
                * quarter
        });
        let full = self.value().raw_dim();
        Var::from_op(value, vec![self.clone()], move |g| {
            let out = ArrayD::from_shape_fn(full.clone(), |ix| g[[ix[0], ix[1], ix[2] / 2, ix[3] / 2]] * quarter);
            vec![Some(out)]
        })
    }
}
