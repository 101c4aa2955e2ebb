//! Differentiable kernels: elementwise maps, broadcast binary arithmetic,
//! reductions, shape movement, softmax, exclusive cumsum.
//!
//! Every op follows the same discipline:
//! * forward kernels may parallelize, but only over fixed-size chunks with
//!   per-element or ordered writes — results are bit-identical for any
//!   thread count;
//! * the registered adjoint builds input cotangents out of tensor ops,
//!   recomputing activations from the saved inputs, so the backward pass is
//!   itself differentiable (double backward).
//!
//! Shape errors are programmer errors and panic with both shapes named.

use rayon::prelude::*;

use super::shape::{
    broadcast_shapes, broadcast_strides, increment_index, is_suffix_shape, numel, strides_of,
};
use super::{op_result, Tensor};
use crate::real::{lit, Real};

/// Below this many output elements a kernel stays serial.
const PAR_MIN: usize = 1 << 15;
/// Fixed chunk length for parallel elementwise work. Never derived from the
/// thread count, so partition boundaries (and f32 sums built from them) do
/// not depend on `--threads`.
const PAR_CHUNK: usize = 1 << 14;
/// Fixed row-block length for ordered partial-sum reductions.
const REDUCE_BLOCK: usize = 1 << 10;

// ------------------------------------------------------------ map helpers

fn unary_map<T: Real>(x: &[T], f: impl Fn(T) -> T + Sync) -> Vec<T> {
    if x.len() >= PAR_MIN {
        let mut out = vec![T::zero(); x.len()];
        out.par_chunks_mut(PAR_CHUNK)
            .zip(x.par_chunks(PAR_CHUNK))
            .for_each(|(o, i)| {
                for (ov, iv) in o.iter_mut().zip(i) {
                    *ov = f(*iv);
                }
            });
        out
    } else {
        x.iter().map(|&v| f(v)).collect()
    }
}

fn linear_to_nd(mut i: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0usize; shape.len()];
    for d in (0..shape.len()).rev() {
        if shape[d] > 0 {
            idx[d] = i % shape[d];
            i /= shape[d];
        }
    }
    idx
}

/// Evaluate `f(a, b)` broadcast to the joint shape.
fn broadcast_eval<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T + Sync,
) -> (Vec<usize>, Vec<T>) {
    let out_shape = broadcast_shapes(a.shape(), b.shape()).unwrap_or_else(|| {
        panic!(
            "{op}: shapes {:?} and {:?} do not broadcast",
            a.shape(),
            b.shape()
        )
    });
    let n = numel(&out_shape);
    let ad = a.data();
    let bd = b.data();

    // Fast paths: identical shapes, then modular suffix broadcasting.
    if a.shape() == b.shape() {
        let mut out = vec![T::zero(); n];
        if n >= PAR_MIN {
            out.par_chunks_mut(PAR_CHUNK)
                .zip(ad.par_chunks(PAR_CHUNK).zip(bd.par_chunks(PAR_CHUNK)))
                .for_each(|(o, (xa, xb))| {
                    for k in 0..o.len() {
                        o[k] = f(xa[k], xb[k]);
                    }
                });
        } else {
            for k in 0..n {
                out[k] = f(ad[k], bd[k]);
            }
        }
        return (out_shape, out);
    }
    if out_shape == a.shape() && is_suffix_shape(b.shape(), &out_shape) {
        let m = bd.len().max(1);
        let mut out = vec![T::zero(); n];
        if n >= PAR_MIN {
            out.par_chunks_mut(PAR_CHUNK)
                .enumerate()
                .for_each(|(ci, o)| {
                    let base = ci * PAR_CHUNK;
                    for k in 0..o.len() {
                        o[k] = f(ad[base + k], bd[(base + k) % m]);
                    }
                });
        } else {
            for k in 0..n {
                out[k] = f(ad[k], bd[k % m]);
            }
        }
        return (out_shape, out);
    }
    if out_shape == b.shape() && is_suffix_shape(a.shape(), &out_shape) {
        let m = ad.len().max(1);
        let mut out = vec![T::zero(); n];
        if n >= PAR_MIN {
            out.par_chunks_mut(PAR_CHUNK)
                .enumerate()
                .for_each(|(ci, o)| {
                    let base = ci * PAR_CHUNK;
                    for k in 0..o.len() {
                        o[k] = f(ad[(base + k) % m], bd[base + k]);
                    }
                });
        } else {
            for k in 0..n {
                out[k] = f(ad[k % m], bd[k]);
            }
        }
        return (out_shape, out);
    }

    // General strided walk with carry-based offset updates.
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let rank = out_shape.len();
    let mut out = vec![T::zero(); n];
    let run = |o: &mut [T], start: usize| {
        let mut idx = linear_to_nd(start, &out_shape);
        let mut offa: usize = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
        let mut offb: usize = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
        for slot in o.iter_mut() {
            *slot = f(ad[offa], bd[offb]);
            for d in (0..rank).rev() {
                idx[d] += 1;
                offa += sa[d];
                offb += sb[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
                offa -= sa[d] * out_shape[d];
                offb -= sb[d] * out_shape[d];
            }
        }
    };
    if n >= PAR_MIN {
        out.par_chunks_mut(PAR_CHUNK)
            .enumerate()
            .for_each(|(ci, o)| run(o, ci * PAR_CHUNK));
    } else {
        run(&mut out, 0);
    }
    (out_shape, out)
}

// ------------------------------------------------------------- unary ops

impl<T: Real> Tensor<T> {
    fn unary_op(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T + Sync,
        back: impl Fn(&Tensor<T>, &Tensor<T>) -> Tensor<T> + Send + Sync + 'static,
    ) -> Tensor<T> {
        let data = unary_map(self.data(), f);
        op_result(op, self.shape().to_vec(), data, &[self], move |g, inp| {
            vec![Some(back(g, &inp[0]))]
        })
    }

    pub fn neg(&self) -> Self {
        self.unary_op("neg", |v| -v, |g, _| g.neg())
    }

    pub fn exp(&self) -> Self {
        self.unary_op("exp", |v| v.exp(), |g, x| g.mul(&x.exp()))
    }

    /// Natural log. Non-positive inputs propagate IEEE sentinels (−inf/NaN),
    /// which the finiteness check [`Tensor::is_finite_all`] then reports.
    pub fn ln(&self) -> Self {
        self.unary_op("ln", |v| v.ln(), |g, x| g.div(x))
    }

    pub fn sqrt(&self) -> Self {
        self.unary_op(
            "sqrt",
            |v| v.sqrt(),
            |g, x| g.mul_scalar(0.5).div(&x.sqrt()),
        )
    }

    pub fn sin(&self) -> Self {
        self.unary_op("sin", |v| v.sin(), |g, x| g.mul(&x.cos()))
    }

    pub fn cos(&self) -> Self {
        self.unary_op("cos", |v| v.cos(), |g, x| g.mul(&x.sin().neg()))
    }

    /// max(x, 0). Subgradient 0 at the kink.
    pub fn relu(&self) -> Self {
        self.unary_op(
            "relu",
            |v| if v > T::zero() { v } else { T::zero() },
            |g, x| {
                let mask = Tensor::from_vec(
                    x.shape(),
                    x.data()
                        .iter()
                        .map(|&v| if v > T::zero() { T::one() } else { T::zero() })
                        .collect(),
                );
                g.mul(&mask)
            },
        )
    }

    /// x for x > 0 else alpha·x. Subgradient alpha at the kink.
    pub fn leaky_relu(&self, alpha: f64) -> Self {
        let a = lit::<T>(alpha);
        self.unary_op(
            "leaky_relu",
            move |v| if v > T::zero() { v } else { a * v },
            move |g, x| {
                let mask = Tensor::from_vec(
                    x.shape(),
                    x.data()
                        .iter()
                        .map(|&v| if v > T::zero() { T::one() } else { a })
                        .collect(),
                );
                g.mul(&mask)
            },
        )
    }

    /// Numerically stable logistic.
    pub fn sigmoid(&self) -> Self {
        self.unary_op(
            "sigmoid",
            |v| {
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            |g, x| {
                let s = x.sigmoid();
                g.mul(&s).mul(&s.neg().add_scalar(1.0))
            },
        )
    }

    pub fn tanh(&self) -> Self {
        self.unary_op(
            "tanh",
            |v| v.tanh(),
            |g, x| {
                let t = x.tanh();
                g.mul(&t.mul(&t).neg().add_scalar(1.0))
            },
        )
    }

    /// ln(1 + e^x), computed as max(x, 0) + ln(1 + e^(−|x|)).
    pub fn softplus(&self) -> Self {
        self.unary_op(
            "softplus",
            |v| {
                let m = if v > T::zero() { v } else { T::zero() };
                m + ((-v.abs()).exp() + T::one()).ln()
            },
            |g, x| g.mul(&x.sigmoid()),
        )
    }

    pub fn abs(&self) -> Self {
        self.unary_op(
            "abs",
            |v| v.abs(),
            |g, x| {
                let sign = Tensor::from_vec(
                    x.shape(),
                    x.data().iter().map(|&v| v.signum()).collect(),
                );
                g.mul(&sign)
            },
        )
    }

    /// Elementwise x^p for scalar p (defined for x > 0 when p is fractional).
    pub fn powf_scalar(&self, p: f64) -> Self {
        let pt = lit::<T>(p);
        self.unary_op(
            "powf_scalar",
            move |v| v.powf(pt),
            move |g, x| g.mul(&x.powf_scalar(p - 1.0).mul_scalar(p)),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        let ct = lit::<T>(c);
        self.unary_op("add_scalar", move |v| v + ct, |g, _| g.clone())
    }

    pub fn mul_scalar(&self, c: f64) -> Self {
        let ct = lit::<T>(c);
        self.unary_op("mul_scalar", move |v| v * ct, move |g, _| g.mul_scalar(c))
    }

    pub fn square(&self) -> Self {
        self.mul(self)
    }
}

// ------------------------------------------------------------ binary ops

impl<T: Real> Tensor<T> {
    fn binary_op(
        &self,
        rhs: &Tensor<T>,
        op: &'static str,
        f: impl Fn(T, T) -> T + Sync,
        back: impl Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> (Tensor<T>, Tensor<T>)
            + Send
            + Sync
            + 'static,
    ) -> Tensor<T> {
        let (shape, data) = broadcast_eval(op, self, rhs, f);
        op_result(op, shape, data, &[self, rhs], move |g, inp| {
            let (ga, gb) = back(g, &inp[0], &inp[1]);
            vec![
                Some(ga.sum_to_shape(inp[0].shape())),
                Some(gb.sum_to_shape(inp[1].shape())),
            ]
        })
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Self {
        self.binary_op(rhs, "add", |x, y| x + y, |g, _, _| (g.clone(), g.clone()))
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Self {
        self.binary_op(rhs, "sub", |x, y| x - y, |g, _, _| (g.clone(), g.neg()))
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Self {
        self.binary_op(rhs, "mul", |x, y| x * y, |g, a, b| (g.mul(b), g.mul(a)))
    }

    /// Elementwise division. Zero divisors propagate IEEE sentinels.
    pub fn div(&self, rhs: &Tensor<T>) -> Self {
        self.binary_op(
            rhs,
            "div",
            |x, y| x / y,
            |g, a, b| (g.div(b), g.mul(a).div(&b.mul(b)).neg()),
        )
    }
}

// --------------------------------------------------------- shape movement

impl<T: Real> Tensor<T> {
    /// View with a new shape (same element count, same buffer — no copy).
    pub fn reshape(&self, new_shape: &[usize]) -> Self {
        assert_eq!(
            self.numel(),
            numel(new_shape),
            "reshape: {:?} ({} elements) -> {:?} ({} elements)",
            self.shape(),
            self.numel(),
            new_shape,
            numel(new_shape)
        );
        let old_shape = self.shape().to_vec();
        super::op_result_arc(
            "reshape",
            new_shape.to_vec(),
            self.data_arc(),
            &[self],
            move |g, _| vec![Some(g.reshape(&old_shape))],
        )
    }

    /// Permute axes (materializing copy). `axes` must be a permutation of
    /// `0..rank`.
    pub fn permute(&self, axes: &[usize]) -> Self {
        let rank = self.rank();
        assert_eq!(axes.len(), rank, "permute: axes {:?} for rank {}", axes, rank);
        let mut seen = vec![false; rank];
        for &a in axes {
            assert!(a < rank && !seen[a], "permute: {:?} is not a permutation", axes);
            seen[a] = true;
        }
        let in_strides = strides_of(self.shape());
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let gather_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let n = self.numel();
        let src = self.data();
        let mut data = vec![T::zero(); n];
        let run = |o: &mut [T], start: usize| {
            let mut idx = linear_to_nd(start, &out_shape);
            let mut off: usize = idx.iter().zip(&gather_strides).map(|(i, s)| i * s).sum();
            for slot in o.iter_mut() {
                *slot = src[off];
                for d in (0..out_shape.len()).rev() {
                    idx[d] += 1;
                    off += gather_strides[d];
                    if idx[d] < out_shape[d] {
                        break;
                    }
                    idx[d] = 0;
                    off -= gather_strides[d] * out_shape[d];
                }
            }
        };
        if n >= PAR_MIN {
            data.par_chunks_mut(PAR_CHUNK)
                .enumerate()
                .for_each(|(ci, o)| run(o, ci * PAR_CHUNK));
        } else if n > 0 {
            run(&mut data, 0);
        }
        let mut inverse = vec![0usize; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        op_result("permute", out_shape, data, &[self], move |g, _| {
            vec![Some(g.permute(&inverse))]
        })
    }

    /// Rank-2 transpose.
    pub fn t2(&self) -> Self {
        assert_eq!(self.rank(), 2, "t2 on shape {:?}", self.shape());
        self.permute(&[1, 0])
    }

    /// Materialize this tensor broadcast to `target` (trailing-axis rules).
    pub fn broadcast_to(&self, target: &[usize]) -> Self {
        if self.shape() == target {
            return self.clone();
        }
        let joint = broadcast_shapes(self.shape(), target).unwrap_or_else(|| {
            panic!(
                "broadcast_to: {:?} does not broadcast to {:?}",
                self.shape(),
                target
            )
        });
        assert_eq!(
            joint, target,
            "broadcast_to: {:?} does not broadcast to {:?} (joint {:?})",
            self.shape(),
            target,
            joint
        );
        let n = numel(target);
        let src = self.data();
        let mut data = vec![T::zero(); n];
        if is_suffix_shape(self.shape(), target) {
            let m = src.len().max(1);
            if n >= PAR_MIN {
                data.par_chunks_mut(PAR_CHUNK).enumerate().for_each(|(ci, o)| {
                    let base = ci * PAR_CHUNK;
                    for k in 0..o.len() {
                        o[k] = src[(base + k) % m];
                    }
                });
            } else {
                for (k, slot) in data.iter_mut().enumerate() {
                    *slot = src[k % m];
                }
            }
        } else {
            let strides = broadcast_strides(self.shape(), target);
            let mut idx = vec![0usize; target.len()];
            let mut off = 0usize;
            for slot in data.iter_mut() {
                *slot = src[off];
                for d in (0..target.len()).rev() {
                    idx[d] += 1;
                    off += strides[d];
                    if idx[d] < target[d] {
                        break;
                    }
                    idx[d] = 0;
                    off -= strides[d] * target[d];
                }
            }
        }
        let own = self.shape().to_vec();
        op_result("broadcast_to", target.to_vec(), data, &[self], move |g, _| {
            vec![Some(g.sum_to_shape(&own))]
        })
    }

    /// Slice `len` indices starting at `start` along `axis` (copy).
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        assert!(axis < self.rank(), "narrow: axis {} of {:?}", axis, self.shape());
        assert!(
            start + len <= self.shape()[axis],
            "narrow: [{start}, {}) out of extent {} on axis {axis} of {:?}",
            start + len,
            self.shape()[axis],
            self.shape()
        );
        let pre: usize = self.shape()[..axis].iter().product();
        let ax = self.shape()[axis];
        let post: usize = self.shape()[axis + 1..].iter().product();
        let src = self.data();
        let mut data = vec![T::zero(); pre * len * post];
        for p in 0..pre {
            let src_base = (p * ax + start) * post;
            let dst_base = p * len * post;
            data[dst_base..dst_base + len * post]
                .copy_from_slice(&src[src_base..src_base + len * post]);
        }
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = len;
        let full = self.shape().to_vec();
        op_result("narrow", out_shape, data, &[self], move |g, _| {
            // Embed the cotangent back into a zero tensor of the full shape.
            let mut parts: Vec<Tensor<T>> = Vec::new();
            if start > 0 {
                let mut s = full.clone();
                s[axis] = start;
                parts.push(Tensor::zeros(&s));
            }
            parts.push(g.clone());
            if start + len < full[axis] {
                let mut s = full.clone();
                s[axis] = full[axis] - (start + len);
                parts.push(Tensor::zeros(&s));
            }
            let refs: Vec<&Tensor<T>> = parts.iter().collect();
            vec![Some(Tensor::concat(&refs, axis))]
        })
    }

    /// Concatenate along `axis`. All other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Self {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let rank = parts[0].rank();
        assert!(axis < rank, "concat: axis {axis} of rank {rank}");
        for p in parts {
            assert_eq!(p.rank(), rank, "concat: rank mismatch");
            for d in 0..rank {
                if d != axis {
                    assert_eq!(
                        p.shape()[d],
                        parts[0].shape()[d],
                        "concat: shapes {:?} vs {:?} differ off-axis",
                        p.shape(),
                        parts[0].shape()
                    );
                }
            }
        }
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out_shape = parts[0].shape().to_vec();
        out_shape[axis] = total;
        let pre: usize = out_shape[..axis].iter().product();
        let post: usize = out_shape[axis + 1..].iter().product();
        let mut data = vec![T::zero(); numel(&out_shape)];
        let mut offset = 0usize;
        for (p, &l) in parts.iter().zip(&lens) {
            let src = p.data();
            for q in 0..pre {
                let dst_base = (q * total + offset) * post;
                let src_base = q * l * post;
                data[dst_base..dst_base + l * post]
                    .copy_from_slice(&src[src_base..src_base + l * post]);
            }
            offset += l;
        }
        op_result("concat", out_shape, data, parts, move |g, inp| {
            let mut start = 0usize;
            inp.iter()
                .map(|p| {
                    let l = p.shape()[axis];
                    let piece = g.narrow(axis, start, l);
                    start += l;
                    Some(piece)
                })
                .collect()
        })
    }

    /// Reverse the last axis.
    pub fn flip_last(&self) -> Self {
        let l = *self.shape().last().unwrap_or(&1);
        let rows = self.numel() / l.max(1);
        let src = self.data();
        let mut data = vec![T::zero(); self.numel()];
        for r in 0..rows {
            let base = r * l;
            for k in 0..l {
                data[base + k] = src[base + l - 1 - k];
            }
        }
        op_result("flip_last", self.shape().to_vec(), data, &[self], |g, _| {
            vec![Some(g.flip_last())]
        })
    }
}

// -------------------------------------------------------------- reductions

impl<T: Real> Tensor<T> {
    /// Sum this tensor down to `target`, the adjoint of broadcasting
    /// `target` up to `self.shape()`. `target` must align right with dims
    /// equal or 1 (missing leading dims are reduced away).
    pub fn sum_to_shape(&self, target: &[usize]) -> Self {
        if self.shape() == target {
            return self.clone();
        }
        let in_shape = self.shape().to_vec();
        assert!(
            broadcast_shapes(target, &in_shape)
                .map(|j| j == in_shape)
                .unwrap_or(false),
            "sum_to_shape: {target:?} is not a broadcast source of {in_shape:?}"
        );
        let rank = in_shape.len();
        let off = rank - target.len();
        // Extended target aligned to input rank.
        let mut ext = vec![1usize; rank];
        ext[off..].copy_from_slice(target);

        // Decompose into [blocks, middle, lanes] when the reduced dims are
        // only at the edges; otherwise fall back to a serial strided walk.
        let lead = ext.iter().zip(&in_shape).take_while(|(e, _)| **e == 1).count();
        let trail = ext
            .iter()
            .zip(&in_shape)
            .rev()
            .take_while(|(e, i)| **e == 1 && **i != 1)
            .count()
            .min(rank - lead);
        let middle_ok = (lead..rank - trail).all(|d| ext[d] == in_shape[d]);
        let data = if middle_ok {
            let blocks: usize = in_shape[..lead].iter().product();
            let mid: usize = in_shape[lead..rank - trail].iter().product();
            let lanes: usize = in_shape[rank - trail..].iter().product();
            let src = self.data();
            // Stage 1: collapse lanes.
            let tmp: Vec<T> = if lanes > 1 {
                let rows = blocks * mid;
                let mut t = vec![T::zero(); rows];
                let fold = |o: &mut [T], base_row: usize| {
                    for (k, slot) in o.iter_mut().enumerate() {
                        let base = (base_row + k) * lanes;
                        let mut acc = T::zero();
                        for v in &src[base..base + lanes] {
                            acc += *v;
                        }
                        *slot = acc;
                    }
                };
                if rows >= PAR_MIN {
                    t.par_chunks_mut(PAR_CHUNK)
                        .enumerate()
                        .for_each(|(ci, o)| fold(o, ci * PAR_CHUNK));
                } else {
                    fold(&mut t, 0);
                }
                t
            } else {
                src.to_vec()
            };
            // Stage 2: collapse blocks with ordered partial sums.
            if blocks > 1 {
                let partials: Vec<Vec<T>> = (0..blocks)
                    .collect::<Vec<_>>()
                    .par_chunks(REDUCE_BLOCK)
                    .map(|chunk| {
                        let mut acc = vec![T::zero(); mid];
                        for &b in chunk {
                            let base = b * mid;
                            for (a, v) in acc.iter_mut().zip(&tmp[base..base + mid]) {
                                *a += *v;
                            }
                        }
                        acc
                    })
                    .collect();
                let mut out = vec![T::zero(); mid];
                for p in partials {
                    for (a, v) in out.iter_mut().zip(p) {
                        *a += v;
                    }
                }
                out
            } else {
                tmp
            }
        } else {
            // Serial fallback: scatter-accumulate through broadcast strides.
            let strides = broadcast_strides(&ext, &in_shape);
            let mut out = vec![T::zero(); numel(&ext)];
            let src = self.data();
            let mut idx = vec![0usize; rank];
            let mut off_acc = 0usize;
            for &v in src.iter() {
                out[off_acc] += v;
                for d in (0..rank).rev() {
                    idx[d] += 1;
                    off_acc += strides[d];
                    if idx[d] < in_shape[d] {
                        break;
                    }
                    idx[d] = 0;
                    off_acc -= strides[d] * in_shape[d];
                }
            }
            out
        };
        let own = in_shape.clone();
        op_result("sum_to_shape", target.to_vec(), data, &[self], move |g, _| {
            vec![Some(g.broadcast_to(&own))]
        })
    }

    /// Sum of all elements (rank-0 result).
    pub fn sum_all(&self) -> Self {
        self.sum_to_shape(&[])
    }

    pub fn mean_all(&self) -> Self {
        let n = self.numel().max(1) as f64;
        self.sum_all().mul_scalar(1.0 / n)
    }

    /// Sum over one axis.
    pub fn sum_axis(&self, axis: usize, keepdims: bool) -> Self {
        assert!(axis < self.rank(), "sum_axis: axis {} of {:?}", axis, self.shape());
        let mut target = self.shape().to_vec();
        target[axis] = 1;
        let summed = self.sum_to_shape(&target);
        if keepdims {
            summed
        } else {
            let mut dropped = self.shape().to_vec();
            dropped.remove(axis);
            summed.reshape(&dropped)
        }
    }

    pub fn mean_axis(&self, axis: usize, keepdims: bool) -> Self {
        let n = self.shape()[axis].max(1) as f64;
        self.sum_axis(axis, keepdims).mul_scalar(1.0 / n)
    }

    /// Max over one axis. Ties resolve to the lowest index; the adjoint
    /// routes the cotangent to that single element.
    pub fn max_axis(&self, axis: usize, keepdims: bool) -> Self {
        assert!(axis < self.rank(), "max_axis: axis {} of {:?}", axis, self.shape());
        let rank = self.rank();
        let moved = if axis == rank - 1 {
            self.clone()
        } else {
            let mut axes: Vec<usize> = (0..rank).filter(|&d| d != axis).collect();
            axes.push(axis);
            self.permute(&axes)
        };
        let reduced = moved.max_last();
        // reduced has the reduced axis last (size 1, kept by max_last).
        let out = if axis == rank - 1 {
            reduced
        } else {
            // Move the kept size-1 axis back into place.
            let mut axes: Vec<usize> = Vec::with_capacity(rank);
            let mut src_dim = 0;
            for d in 0..rank {
                if d == axis {
                    axes.push(rank - 1);
                } else {
                    axes.push(src_dim);
                    src_dim += 1;
                }
            }
            reduced.permute(&axes)
        };
        if keepdims {
            out
        } else {
            let mut dropped = self.shape().to_vec();
            dropped.remove(axis);
            out.reshape(&dropped)
        }
    }

    /// Rowwise max over the last axis, keepdims.
    fn max_last(&self) -> Self {
        let l = *self.shape().last().expect("max on rank-0");
        assert!(l > 0, "max over empty axis");
        let rows = self.numel() / l;
        let src = self.data();
        let mut data = vec![T::zero(); rows];
        let mut arg = vec![0usize; rows];
        for r in 0..rows {
            let base = r * l;
            let mut best = src[base];
            let mut bi = 0usize;
            for k in 1..l {
                if src[base + k] > best {
                    best = src[base + k];
                    bi = k;
                }
            }
            data[r] = best;
            arg[r] = bi;
        }
        let mut out_shape = self.shape().to_vec();
        *out_shape.last_mut().unwrap() = 1;
        let in_shape = self.shape().to_vec();
        op_result("max_last", out_shape, data, &[self], move |g, _| {
            let mut mask = vec![T::zero(); numel(&in_shape)];
            for (r, &bi) in arg.iter().enumerate() {
                mask[r * l + bi] = T::one();
            }
            let mask = Tensor::from_vec(&in_shape, mask);
            vec![Some(g.broadcast_to(&in_shape).mul(&mask))]
        })
    }

    /// Argmax over an axis, ties to the lowest index (no gradient).
    pub fn argmax_axis(&self, axis: usize) -> Vec<usize> {
        assert!(axis < self.rank());
        let pre: usize = self.shape()[..axis].iter().product();
        let l = self.shape()[axis];
        let post: usize = self.shape()[axis + 1..].iter().product();
        let src = self.data();
        let mut out = vec![0usize; pre * post];
        for p in 0..pre {
            for q in 0..post {
                let mut best = src[p * l * post + q];
                let mut bi = 0usize;
                for k in 1..l {
                    let v = src[(p * l + k) * post + q];
                    if v > best {
                        best = v;
                        bi = k;
                    }
                }
                out[p * post + q] = bi;
            }
        }
        out
    }
}

// ------------------------------------------------------- softmax & cumsum

impl<T: Real> Tensor<T> {
    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Self {
        let rank = self.rank();
        assert!(axis < rank, "softmax: axis {} of {:?}", axis, self.shape());
        if axis == rank - 1 {
            return self.softmax_last();
        }
        let mut axes: Vec<usize> = (0..rank).filter(|&d| d != axis).collect();
        axes.push(axis);
        let moved = self.permute(&axes).softmax_last();
        let mut back: Vec<usize> = Vec::with_capacity(rank);
        let mut src_dim = 0;
        for d in 0..rank {
            if d == axis {
                back.push(rank - 1);
            } else {
                back.push(src_dim);
                src_dim += 1;
            }
        }
        moved.permute(&back)
    }

    fn softmax_last(&self) -> Self {
        let l = *self.shape().last().expect("softmax on rank-0");
        assert!(l > 0, "softmax over empty axis");
        let rows = self.numel() / l;
        let src = self.data();
        let mut data = vec![T::zero(); self.numel()];
        let run = |o: &mut [T], row0: usize| {
            for (rr, chunk) in o.chunks_mut(l).enumerate() {
                let base = (row0 + rr) * l;
                let mut m = src[base];
                for k in 1..l {
                    if src[base + k] > m {
                        m = src[base + k];
                    }
                }
                let mut z = T::zero();
                for k in 0..l {
                    let e = (src[base + k] - m).exp();
                    chunk[k] = e;
                    z += e;
                }
                for v in chunk.iter_mut() {
                    *v = *v / z;
                }
            }
        };
        if rows * l >= PAR_MIN && rows > 1 {
            let rows_per = (PAR_CHUNK / l.max(1)).max(1);
            data.par_chunks_mut(rows_per * l)
                .enumerate()
                .for_each(|(ci, o)| run(o, ci * rows_per));
        } else {
            run(&mut data, 0);
        }
        op_result("softmax", self.shape().to_vec(), data, &[self], move |g, inp| {
            // d softmax: s ⊙ (g − Σ_last g ⊙ s); recompute s differentiably.
            let s = inp[0].softmax(inp[0].rank() - 1);
            let dot = g.mul(&s).sum_axis(s.rank() - 1, true);
            vec![Some(s.mul(&g.sub(&dot.broadcast_to(s.shape()))))]
        })
    }

    /// Exclusive prefix sum along the last axis: out[..., i] = Σ_{j<i} x[..., j].
    pub fn cumsum_exclusive_last(&self) -> Self {
        let l = *self.shape().last().expect("cumsum on rank-0");
        let rows = self.numel() / l.max(1);
        let src = self.data();
        let mut data = vec![T::zero(); self.numel()];
        for r in 0..rows {
            let base = r * l;
            let mut acc = T::zero();
            for k in 0..l {
                data[base + k] = acc;
                acc += src[base + k];
            }
        }
        op_result(
            "cumsum_exclusive_last",
            self.shape().to_vec(),
            data,
            &[self],
            |g, _| {
                // Adjoint of exclusive prefix sum = exclusive suffix sum.
                vec![Some(g.flip_last().cumsum_exclusive_last().flip_last())]
            },
        )
    }
}

// ---------------------------------------------------- operator sugar (refs)

impl<'b, T: Real> std::ops::Add<&'b Tensor<T>> for &Tensor<T> {
    type Output = Tensor<T>;
    fn add(self, rhs: &'b Tensor<T>) -> Tensor<T> {
        Tensor::add(self, rhs)
    }
}

impl<'b, T: Real> std::ops::Sub<&'b Tensor<T>> for &Tensor<T> {
    type Output = Tensor<T>;
    fn sub(self, rhs: &'b Tensor<T>) -> Tensor<T> {
        Tensor::sub(self, rhs)
    }
}

impl<'b, T: Real> std::ops::Mul<&'b Tensor<T>> for &Tensor<T> {
    type Output = Tensor<T>;
    fn mul(self, rhs: &'b Tensor<T>) -> Tensor<T> {
        Tensor::mul(self, rhs)
    }
}

impl<'b, T: Real> std::ops::Div<&'b Tensor<T>> for &Tensor<T> {
    type Output = Tensor<T>;
    fn div(self, rhs: &'b Tensor<T>) -> Tensor<T> {
        Tensor::div(self, rhs)
    }
}

impl<T: Real> std::ops::Neg for &Tensor<T> {
    type Output = Tensor<T>;
    fn neg(self) -> Tensor<T> {
        Tensor::neg(self)
    }
}
