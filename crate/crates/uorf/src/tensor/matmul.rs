//! Rank-2 matrix product on top of `matrixmultiply`'s SIMD kernels.
//!
//! Parallelism never lets the thread count pick partition boundaries:
//! * tall outputs are split into fixed 512-row chunks (row-disjoint writes);
//! * reduction-heavy products (small output, huge inner dim — the shape of
//!   `Aᵀ·G` in a linear layer's weight gradient) are split along the inner
//!   dim into fixed 2048-length chunks whose partial products are summed in
//!   chunk order.
//!
//! Both strategies produce bit-identical results for 1 or N threads.

use rayon::prelude::*;

use super::{op_result, Tensor};
use crate::real::Real;

const ROW_CHUNK: usize = 512;
const K_CHUNK: usize = 2048;
/// Split the inner dim when the output is small enough that row-chunking
/// cannot spread the work.
const SPLIT_K_MAX_OUT: usize = 64 * 64;
const SPLIT_K_MIN_K: usize = 8192;

fn gemm_chunked<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v = T::zero());
        return;
    }

    if m * n <= SPLIT_K_MAX_OUT && k >= SPLIT_K_MIN_K {
        // Fixed-chunk split-k with ordered accumulation.
        let chunks: Vec<(usize, usize)> = (0..k)
            .step_by(K_CHUNK)
            .map(|k0| (k0, (k0 + K_CHUNK).min(k)))
            .collect();
        let partials: Vec<Vec<T>> = chunks
            .par_iter()
            .map(|&(k0, k1)| {
                let kk = k1 - k0;
                let mut part = vec![T::zero(); m * n];
                unsafe {
                    T::gemm(
                        m,
                        kk,
                        n,
                        T::one(),
                        a.as_ptr().add(k0),
                        k as isize,
                        1,
                        b.as_ptr().add(k0 * n),
                        n as isize,
                        1,
                        T::zero(),
                        part.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
                part
            })
            .collect();
        out.iter_mut().for_each(|v| *v = T::zero());
        for part in partials {
            for (o, p) in out.iter_mut().zip(part) {
                *o += p;
            }
        }
        return;
    }

    let rows_per = ROW_CHUNK;
    if m > rows_per {
        out.par_chunks_mut(rows_per * n).enumerate().for_each(|(ci, oc)| {
            let r0 = ci * rows_per;
            let rows = oc.len() / n;
            unsafe {
                T::gemm(
                    rows,
                    k,
                    n,
                    T::one(),
                    a.as_ptr().add(r0 * k),
                    k as isize,
                    1,
                    b.as_ptr(),
                    n as isize,
                    1,
                    T::zero(),
                    oc.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
    } else {
        unsafe {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                T::zero(),
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl<T: Real> Tensor<T> {
    /// `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "matmul: lhs shape {:?}", self.shape());
        assert_eq!(rhs.rank(), 2, "matmul: rhs shape {:?}", rhs.shape());
        let (m, ka) = (self.shape()[0], self.shape()[1]);
        let (kb, n) = (rhs.shape()[0], rhs.shape()[1]);
        assert_eq!(
            ka,
            kb,
            "matmul: inner extents differ, {:?} · {:?}",
            self.shape(),
            rhs.shape()
        );
        let mut data = vec![T::zero(); m * n];
        gemm_chunked(m, ka, n, self.data(), rhs.data(), &mut data);
        op_result("matmul", vec![m, n], data, &[self, rhs], |g, inp| {
            let (a, b) = (&inp[0], &inp[1]);
            vec![Some(g.matmul(&b.t2())), Some(a.t2().matmul(g))]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_naive_for_assorted_shapes() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, "matmul-test", &[]);
        for &(m, k, n) in &[(1usize, 1usize, 1usize), (3, 4, 5), (17, 9, 2), (2, 9000, 3)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ta = Tensor::<f64>::from_vec(&[m, k], a.clone());
            let tb = Tensor::<f64>::from_vec(&[k, n], b.clone());
            let got = ta.matmul(&tb);
            let want = naive(m, k, n, &a, &b);
            for (g, w) in got.data().iter().zip(&want) {
                assert!((g - w).abs() < 1e-9 * (1.0 + w.abs()), "{g} vs {w}");
            }
        }
    }

    #[test]
    #[should_panic(expected = "inner extents differ")]
    fn inner_mismatch_panics() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4, 5]);
        let _ = a.matmul(&b);
    }
}
