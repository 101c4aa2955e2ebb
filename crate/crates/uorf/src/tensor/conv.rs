//! 2-D convolution (NCHW, zero "same" padding, square stride) plus the two
//! transposed kernels that arise as its derivatives. The three ops reference
//! only each other in their adjoints, so the family is closed under
//! differentiation to any order:
//!
//! * `conv2d(x, w)`        — forward
//! * `conv2d_input_grad`   — ∂/∂x (a transposed convolution)
//! * `conv2d_weight_grad`  — ∂/∂w (a correlation of input with cotangent)
//!
//! Padding follows the ceil-mode "same" convention: `Ho = ceil(H/s)`, total
//! padding `max((Ho−1)·s + k − H, 0)` split floor-first at the top/left.
//! Parallel tasks each own one disjoint output plane and loop in a fixed
//! order inside it, so results are thread-count independent.

use rayon::prelude::*;

use super::{op_result, Tensor};
use crate::real::Real;

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    b: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ho: usize,
    wo: usize,
    pt: usize,
    pl: usize,
}

fn geometry(x_shape: &[usize], w_shape: &[usize], stride: usize) -> ConvGeom {
    assert_eq!(x_shape.len(), 4, "conv2d: input must be [B,C,H,W], got {x_shape:?}");
    assert_eq!(w_shape.len(), 4, "conv2d: weight must be [Co,Ci,kh,kw], got {w_shape:?}");
    assert!(stride >= 1, "conv2d: stride must be >= 1");
    let (b, ci, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (co, wci, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
    assert_eq!(
        ci, wci,
        "conv2d: channel mismatch, input {x_shape:?} vs weight {w_shape:?}"
    );
    let ho = h.div_ceil(stride);
    let wo = w.div_ceil(stride);
    let pad_h = ((ho - 1) * stride + kh).saturating_sub(h);
    let pad_w = ((wo - 1) * stride + kw).saturating_sub(w);
    ConvGeom {
        b,
        ci,
        h,
        w,
        co,
        kh,
        kw,
        stride,
        ho,
        wo,
        pt: pad_h / 2,
        pl: pad_w / 2,
    }
}

/// Valid output-row range for kernel row `kr`: the `oh` with
/// `ih = oh·s + kr − pt` inside `[0, H)`.
#[inline]
fn valid_range(extent: usize, out_extent: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // Largest oh with oh·s + k − pad <= extent−1.
    let hi_excl = if extent + pad > k {
        ((extent + pad - k - 1) / stride + 1).min(out_extent)
    } else {
        0
    };
    (lo.min(hi_excl), hi_excl)
}

fn conv_forward_kernel<T: Real>(g: ConvGeom, x: &[T], w: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.b * g.co * g.ho * g.wo];
    let plane_o = g.ho * g.wo;
    let plane_i = g.h * g.w;
    out.par_chunks_mut(plane_o).enumerate().for_each(|(bc, oplane)| {
        let b = bc / g.co;
        let co = bc % g.co;
        for ci in 0..g.ci {
            let xplane = &x[(b * g.ci + ci) * plane_i..][..plane_i];
            for kr in 0..g.kh {
                let (oh0, oh1) = valid_range(g.h, g.ho, g.stride, kr, g.pt);
                for kc in 0..g.kw {
                    let wv = w[((co * g.ci + ci) * g.kh + kr) * g.kw + kc];
                    let (ow0, ow1) = valid_range(g.w, g.wo, g.stride, kc, g.pl);
                    for oh in oh0..oh1 {
                        let ih = oh * g.stride + kr - g.pt;
                        let xrow = &xplane[ih * g.w..][..g.w];
                        let orow = &mut oplane[oh * g.wo..][..g.wo];
                        for ow in ow0..ow1 {
                            let iw = ow * g.stride + kc - g.pl;
                            orow[ow] += wv * xrow[iw];
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv_input_grad_kernel<T: Real>(g: ConvGeom, gy: &[T], w: &[T]) -> Vec<T> {
    let mut gx = vec![T::zero(); g.b * g.ci * g.h * g.w];
    let plane_o = g.ho * g.wo;
    let plane_i = g.h * g.w;
    gx.par_chunks_mut(plane_i).enumerate().for_each(|(bc, xplane)| {
        let b = bc / g.ci;
        let ci = bc % g.ci;
        for co in 0..g.co {
            let gplane = &gy[(b * g.co + co) * plane_o..][..plane_o];
            for kr in 0..g.kh {
                let (oh0, oh1) = valid_range(g.h, g.ho, g.stride, kr, g.pt);
                for kc in 0..g.kw {
                    let wv = w[((co * g.ci + ci) * g.kh + kr) * g.kw + kc];
                    let (ow0, ow1) = valid_range(g.w, g.wo, g.stride, kc, g.pl);
                    for oh in oh0..oh1 {
                        let ih = oh * g.stride + kr - g.pt;
                        let grow = &gplane[oh * g.wo..][..g.wo];
                        let xrow = &mut xplane[ih * g.w..][..g.w];
                        for ow in ow0..ow1 {
                            let iw = ow * g.stride + kc - g.pl;
                            xrow[iw] += wv * grow[ow];
                        }
                    }
                }
            }
        }
    });
    gx
}

fn conv_weight_grad_kernel<T: Real>(g: ConvGeom, x: &[T], gy: &[T]) -> Vec<T> {
    let mut gw = vec![T::zero(); g.co * g.ci * g.kh * g.kw];
    let wslice = g.ci * g.kh * g.kw;
    let plane_o = g.ho * g.wo;
    let plane_i = g.h * g.w;
    gw.par_chunks_mut(wslice).enumerate().for_each(|(co, wchunk)| {
        for b in 0..g.b {
            let gplane = &gy[(b * g.co + co) * plane_o..][..plane_o];
            for ci in 0..g.ci {
                let xplane = &x[(b * g.ci + ci) * plane_i..][..plane_i];
                for kr in 0..g.kh {
                    let (oh0, oh1) = valid_range(g.h, g.ho, g.stride, kr, g.pt);
                    for kc in 0..g.kw {
                        let (ow0, ow1) = valid_range(g.w, g.wo, g.stride, kc, g.pl);
                        let mut acc = T::zero();
                        for oh in oh0..oh1 {
                            let ih = oh * g.stride + kr - g.pt;
                            let grow = &gplane[oh * g.wo..][..g.wo];
                            let xrow = &xplane[ih * g.w..][..g.w];
                            for ow in ow0..ow1 {
                                let iw = ow * g.stride + kc - g.pl;
                                acc += grow[ow] * xrow[iw];
                            }
                        }
                        wchunk[(ci * g.kh + kr) * g.kw + kc] += acc;
                    }
                }
            }
        }
    });
    gw
}

impl<T: Real> Tensor<T> {
    /// Same-padded convolution: `[B,Ci,H,W] ⋆ [Co,Ci,kh,kw] -> [B,Co,Ho,Wo]`
    /// with `Ho = ceil(H/stride)`.
    pub fn conv2d(&self, weight: &Tensor<T>, stride: usize) -> Tensor<T> {
        let g = geometry(self.shape(), weight.shape(), stride);
        let data = conv_forward_kernel(g, self.data(), weight.data());
        let in_hw = (g.h, g.w);
        op_result(
            "conv2d",
            vec![g.b, g.co, g.ho, g.wo],
            data,
            &[self, weight],
            move |gy, inp| {
                let (x, wt) = (&inp[0], &inp[1]);
                let kdims = (wt.shape()[2], wt.shape()[3]);
                vec![
                    Some(conv2d_input_grad(gy, wt, in_hw, stride)),
                    Some(conv2d_weight_grad(x, gy, kdims, stride)),
                ]
            },
        )
    }
}

/// ∂conv2d/∂input as its own differentiable op: scatter `gy` through
/// `weight` back to input geometry `in_hw`.
pub fn conv2d_input_grad<T: Real>(
    gy: &Tensor<T>,
    weight: &Tensor<T>,
    in_hw: (usize, usize),
    stride: usize,
) -> Tensor<T> {
    let x_shape = [gy.shape()[0], weight.shape()[1], in_hw.0, in_hw.1];
    let g = geometry(&x_shape, weight.shape(), stride);
    assert_eq!(
        &[g.b, g.co, g.ho, g.wo][..],
        gy.shape(),
        "conv2d_input_grad: cotangent shape {:?} inconsistent with input {:?} / weight {:?}",
        gy.shape(),
        x_shape,
        weight.shape()
    );
    let data = conv_input_grad_kernel(g, gy.data(), weight.data());
    op_result(
        "conv2d_input_grad",
        x_shape.to_vec(),
        data,
        &[gy, weight],
        move |gz, inp| {
            let (gy_in, wt) = (&inp[0], &inp[1]);
            let kdims = (wt.shape()[2], wt.shape()[3]);
            vec![
                Some(gz.conv2d(wt, stride)),
                Some(conv2d_weight_grad(gz, gy_in, kdims, stride)),
            ]
        },
    )
}

/// ∂conv2d/∂weight as its own differentiable op. `kdims` is the kernel
/// extent (not recoverable from the shapes under same padding).
pub fn conv2d_weight_grad<T: Real>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    kdims: (usize, usize),
    stride: usize,
) -> Tensor<T> {
    let w_shape = [gy.shape()[1], x.shape()[1], kdims.0, kdims.1];
    let g = geometry(x.shape(), &w_shape, stride);
    assert_eq!(
        &[g.b, g.co, g.ho, g.wo][..],
        gy.shape(),
        "conv2d_weight_grad: cotangent shape {:?} inconsistent with input {:?} / kernel {:?}",
        gy.shape(),
        x.shape(),
        kdims
    );
    let data = conv_weight_grad_kernel(g, x.data(), gy.data());
    let in_hw = (g.h, g.w);
    op_result(
        "conv2d_weight_grad",
        w_shape.to_vec(),
        data,
        &[x, gy],
        move |gws, inp| {
            let (x_in, gy_in) = (&inp[0], &inp[1]);
            vec![
                Some(conv2d_input_grad(gy_in, gws, in_hw, stride)),
                Some(x_in.conv2d(gws, stride)),
            ]
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar reference convolution with explicit padding arithmetic.
    fn naive_conv(
        x: &[f64],
        (b, ci, h, w): (usize, usize, usize, usize),
        wt: &[f64],
        (co, kh, kw): (usize, usize, usize),
        s: usize,
    ) -> Vec<f64> {
        let ho = h.div_ceil(s);
        let wo = w.div_ceil(s);
        let pt = (((ho - 1) * s + kh).saturating_sub(h)) / 2;
        let pl = (((wo - 1) * s + kw).saturating_sub(w)) / 2;
        let mut out = vec![0.0; b * co * ho * wo];
        for bi in 0..b {
            for o in 0..co {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for r in 0..kh {
                                for q in 0..kw {
                                    let ih = oh * s + r;
                                    let iw = ow * s + q;
                                    if ih >= pt && iw >= pl && ih - pt < h && iw - pl < w {
                                        acc += x[((bi * ci + c) * h + (ih - pt)) * w + (iw - pl)]
                                            * wt[((o * ci + c) * kh + r) * kw + q];
                                    }
                                }
                            }
                        }
                        out[((bi * co + o) * ho + oh) * wo + ow] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_naive() {
        use rand::Rng;
        let mut rng = crate::rng::stream(3, "conv-test", &[]);
        for &(b, ci, h, w, co, k, s) in &[
            (1usize, 1usize, 5usize, 5usize, 1usize, 3usize, 1usize),
            (2, 3, 6, 7, 4, 3, 2),
            (1, 2, 4, 4, 3, 3, 2),
            (1, 1, 8, 8, 2, 5, 1),
        ] {
            let x: Vec<f64> = (0..b * ci * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wt: Vec<f64> = (0..co * ci * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tx = Tensor::<f64>::from_vec(&[b, ci, h, w], x.clone());
            let tw = Tensor::<f64>::from_vec(&[co, ci, k, k], wt.clone());
            let got = tx.conv2d(&tw, s);
            let want = naive_conv(&x, (b, ci, h, w), &wt, (co, k, k), s);
            assert_eq!(got.shape(), &[b, co, h.div_ceil(s), w.div_ceil(s)]);
            for (gv, wv) in got.data().iter().zip(&want) {
                assert!((gv - wv).abs() < 1e-12, "{gv} vs {wv}");
            }
        }
    }

    #[test]
    #[should_panic(expected = "channel mismatch")]
    fn channel_mismatch_panics() {
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f32>::zeros(&[2, 4, 3, 3]);
        let _ = x.conv2d(&w, 1);
    }
}
