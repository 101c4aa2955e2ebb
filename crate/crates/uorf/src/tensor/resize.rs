//! Bilinear resampling of `[B,C,H,W]` tensors (half-pixel centers, edge
//! clamp — the align_corners=false convention) and its exact transpose,
//! registered as each other's adjoints so the pair is closed under
//! differentiation. Used for image pyramid references and encoder upsampling.

use rayon::prelude::*;

use super::{op_result, Tensor};
use crate::real::Real;

/// Per-axis resampling taps: output index -> (lo, hi, weight of hi).
fn taps(in_extent: usize, out_extent: usize) -> Vec<(usize, usize, f64)> {
    (0..out_extent)
        .map(|o| {
            let src = (o as f64 + 0.5) * in_extent as f64 / out_extent as f64 - 0.5;
            let src = src.clamp(0.0, (in_extent - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_extent - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn resize_kernel<T: Real>(
    src: &[T],
    (b, c, h, w): (usize, usize, usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let plane_i = h * w;
    let plane_o = oh * ow;
    let mut out = vec![T::zero(); b * c * plane_o];
    out.par_chunks_mut(plane_o).enumerate().for_each(|(bc, oplane)| {
        let splane = &src[bc * plane_i..][..plane_i];
        for (y, &(y0, y1, wy)) in ty.iter().enumerate() {
            let r0 = &splane[y0 * w..][..w];
            let r1 = &splane[y1 * w..][..w];
            let wy = T::from_f64(wy);
            let orow = &mut oplane[y * ow..][..ow];
            for (x, &(x0, x1, wx)) in tx.iter().enumerate() {
                let wx = T::from_f64(wx);
                let top = r0[x0] + wx * (r0[x1] - r0[x0]);
                let bot = r1[x0] + wx * (r1[x1] - r1[x0]);
                orow[x] = top + wy * (bot - top);
            }
        }
    });
    out
}

fn resize_adjoint_kernel<T: Real>(
    gy: &[T],
    (b, c, oh, ow): (usize, usize, usize, usize),
    (h, w): (usize, usize),
) -> Vec<T> {
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let plane_i = h * w;
    let plane_o = oh * ow;
    let mut out = vec![T::zero(); b * c * plane_i];
    out.par_chunks_mut(plane_i).enumerate().for_each(|(bc, xplane)| {
        let gplane = &gy[bc * plane_o..][..plane_o];
        for (y, &(y0, y1, wy)) in ty.iter().enumerate() {
            let wy1 = T::from_f64(wy);
            let wy0 = T::one() - wy1;
            let grow = &gplane[y * ow..][..ow];
            for (x, &(x0, x1, wx)) in tx.iter().enumerate() {
                let g = grow[x];
                let wx1 = T::from_f64(wx);
                let wx0 = T::one() - wx1;
                xplane[y0 * w + x0] += g * wy0 * wx0;
                xplane[y0 * w + x1] += g * wy0 * wx1;
                xplane[y1 * w + x0] += g * wy1 * wx0;
                xplane[y1 * w + x1] += g * wy1 * wx1;
            }
        }
    });
    out
}

impl<T: Real> Tensor<T> {
    /// Bilinear resample `[B,C,H,W] -> [B,C,oh,ow]`.
    pub fn bilinear_resize(&self, oh: usize, ow: usize) -> Tensor<T> {
        assert_eq!(self.rank(), 4, "bilinear_resize: need [B,C,H,W], got {:?}", self.shape());
        assert!(oh > 0 && ow > 0, "bilinear_resize: empty target {oh}x{ow}");
        let (b, c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        if (h, w) == (oh, ow) {
            return self.clone();
        }
        let data = resize_kernel(self.data(), (b, c, h, w), (oh, ow));
        op_result(
            "bilinear_resize",
            vec![b, c, oh, ow],
            data,
            &[self],
            move |g, _| vec![Some(bilinear_resize_adjoint(g, (h, w)))],
        )
    }
}

/// Transpose of [`Tensor::bilinear_resize`]: scatter cotangent weights back
/// to source geometry `(h, w)`.
pub fn bilinear_resize_adjoint<T: Real>(gy: &Tensor<T>, in_hw: (usize, usize)) -> Tensor<T> {
    assert_eq!(gy.rank(), 4, "resize adjoint: need [B,C,H,W], got {:?}", gy.shape());
    let (b, c, oh, ow) = (gy.shape()[0], gy.shape()[1], gy.shape()[2], gy.shape()[3]);
    let (h, w) = in_hw;
    let data = resize_adjoint_kernel(gy.data(), (b, c, oh, ow), (h, w));
    op_result(
        "bilinear_resize_adjoint",
        vec![b, c, h, w],
        data,
        &[gy],
        move |g, _| vec![Some(g.bilinear_resize(oh, ow))],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn resize_identity_and_constant() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let same = x.bilinear_resize(2, 2);
        assert_eq!(same.data(), x.data());
        let c = Tensor::<f64>::full(&[1, 1, 3, 3], 5.0);
        let up = c.bilinear_resize(7, 5);
        for v in up.data() {
            assert!((v - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_is_exact_transpose() {
        // <resize(x), y> must equal <x, resize_adjoint(y)>.
        let mut rng = crate::rng::stream(5, "resize-test", &[]);
        let x: Vec<f64> = (0..2 * 3 * 6 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..2 * 3 * 4 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tx = Tensor::<f64>::from_vec(&[2, 3, 6, 5], x);
        let ty = Tensor::<f64>::from_vec(&[2, 3, 4, 9], y);
        let lhs: f64 = tx
            .bilinear_resize(4, 9)
            .data()
            .iter()
            .zip(ty.data())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = bilinear_resize_adjoint(&ty, (6, 5))
            .data()
            .iter()
            .zip(tx.data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
