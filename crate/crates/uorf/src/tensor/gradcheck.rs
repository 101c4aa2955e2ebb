//! Central finite-difference auditing of analytic gradients, always at
//! 64-bit. This is the independent oracle the differentiable ops are tested
//! against; the CLI exposes it via `uorf gradcheck`.

use rand::seq::SliceRandom;

use super::{grad_of, no_grad, Tensor};

/// Relative error with an absolute floor: |a−n| / max(1, |a|, |n|).
/// The floor keeps near-zero gradients from inflating the ratio while still
/// demanding absolute agreement at small magnitudes.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    /// Largest relative error seen across all checked coordinates.
    pub max_rel_err: f64,
    /// Number of coordinates compared.
    pub checked: usize,
}

/// Compare analytic gradients of a scalar-valued function against central
/// finite differences.
///
/// `inputs` are the leaves to differentiate with respect to (they must have
/// been created with `requires_grad`). When `coords_per_tensor` is `Some(c)`,
/// tensors larger than `c` elements are checked at a seeded random subset of
/// `c` coordinates instead of exhaustively.
///
/// Returns the report, or a message naming the first offending coordinate if
/// any relative error exceeds `tol`.
pub fn check_grads(
    f: &dyn Fn(&[Tensor<f64>]) -> Tensor<f64>,
    inputs: &[Tensor<f64>],
    h: f64,
    tol: f64,
    coords_per_tensor: Option<usize>,
    seed: u64,
) -> Result<CheckReport, String> {
    let y = f(inputs);
    assert_eq!(y.numel(), 1, "gradcheck target must be scalar, got {:?}", y.shape());
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let grads = grad_of(&y, &refs, false);

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (ti, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match coords_per_tensor {
            Some(cap) if n > cap => {
                let mut all: Vec<usize> = (0..n).collect();
                let mut rng = crate::rng::stream(seed, "gradcheck-coords", &[ti as u64]);
                all.shuffle(&mut rng);
                all.truncate(cap);
                all
            }
            _ => (0..n).collect(),
        };
        let analytic: Vec<f64> = match &grads[ti] {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; n],
        };
        let base = input.data().to_vec();
        for &c in &coords {
            let eval = |delta: f64| -> f64 {
                let mut probe: Vec<Tensor<f64>> = Vec::with_capacity(inputs.len());
                for (tj, other) in inputs.iter().enumerate() {
                    if tj == ti {
                        let mut d = base.clone();
                        d[c] += delta;
                        probe.push(Tensor::from_vec(input.shape(), d));
                    } else {
                        probe.push(other.detach());
                    }
                }
                no_grad(|| f(&probe)).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic[c];
            let e = rel_err(a, numeric);
            if e > max_rel {
                max_rel = e;
            }
            checked += 1;
            if e > tol {
                return Err(format!(
                    "gradient mismatch: input {ti} shape {:?} coord {c}: \
                     analytic {a:.9e}, numeric {numeric:.9e}, rel err {e:.3e} > tol {tol:.1e}",
                    input.shape()
                ));
            }
        }
    }
    Ok(CheckReport {
        max_rel_err: max_rel,
        checked,
    })
}
