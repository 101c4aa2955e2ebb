//! Small network building blocks: named parameters, linear maps, a GRU
//! cell, plain MLPs, and sinusoidal positional encoding.
//!
//! Parameters are named slots ([`Param`]) so the trainer can walk one flat,
//! deterministically ordered registry ([`ParamSet`]) for optimizer state,
//! checkpoints, and gradient checks. Tensors are immutable, so an optimizer
//! step swaps in a fresh leaf via [`Param::set_data`].

use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::real::Real;
use crate::tensor::Tensor;

// ------------------------------------------------------------- parameters

struct ParamInner<T: Real> {
    name: String,
    trainable: bool,
    value: Mutex<Tensor<T>>,
}

/// A named, updatable parameter slot. Clones share the slot.
pub struct Param<T: Real>(Arc<ParamInner<T>>);

impl<T: Real> Clone for Param<T> {
    fn clone(&self) -> Self {
        Param(Arc::clone(&self.0))
    }
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Self {
        let value = if trainable { value.requires_grad() } else { value };
        Param(Arc::new(ParamInner {
            name: name.into(),
            trainable,
            value: Mutex::new(value),
        }))
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn trainable(&self) -> bool {
        self.0.trainable
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.lock().unwrap().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.0.value.lock().unwrap().numel()
    }

    /// Current value (cheap handle clone; gradients flow into this leaf).
    pub fn get(&self) -> Tensor<T> {
        self.0.value.lock().unwrap().clone()
    }

    /// Replace the value with a fresh leaf of the same shape (gradient
    /// accumulator reset to zero).
    pub fn set_data(&self, data: Vec<T>) {
        let mut slot = self.0.value.lock().unwrap();
        assert_eq!(
            data.len(),
            slot.numel(),
            "param {}: set_data length {} != numel {}",
            self.0.name,
            data.len(),
            slot.numel()
        );
        let shape = slot.shape().to_vec();
        let fresh = Tensor::from_vec(&shape, data);
        *slot = if self.0.trainable {
            fresh.requires_grad()
        } else {
            fresh
        };
    }

    /// Copy of the accumulated gradient (zeros before any backward).
    pub fn grad_vec(&self) -> Vec<T> {
        let v = self.0.value.lock().unwrap();
        v.grad()
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![T::zero(); v.numel()])
    }

    pub fn zero_grad(&self) {
        self.0.value.lock().unwrap().zero_grad();
    }

    pub fn value_vec(&self) -> Vec<T> {
        self.0.value.lock().unwrap().data().to_vec()
    }
}

/// Flat registry of parameters in registration order. Names must be unique;
/// the order fixes checkpoint layout and optimizer-state indexing.
pub struct ParamSet<T: Real> {
    params: Vec<Param<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet { params: Vec::new() }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, p: &Param<T>) {
        assert!(
            self.params.iter().all(|q| q.name() != p.name()),
            "duplicate parameter name {:?}",
            p.name()
        );
        self.params.push(p.clone());
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name() == name)
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}

/// Anything that owns parameters contributes them, prefixing names with its
/// own scope.
pub trait Collect<T: Real> {
    fn collect_params(&self, out: &mut ParamSet<T>);
}

// ---------------------------------------------------------------- inits

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// U(−1/√fan_in, 1/√fan_in) — default for attention/GRU/head maps.
    FanIn,
    /// U(−√(6/(fan_in+fan_out)), ·) — used for the radiance-field decoders.
    Xavier,
}

/// Weight matrix `[rows, cols]` = `[fan_in, fan_out]`, sampled in f64 so the
/// same seed yields the same values at either precision.
pub fn init_matrix<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, init: Init) -> Tensor<T> {
    let bound = match init {
        Init::FanIn => 1.0 / (rows as f64).sqrt(),
        Init::Xavier => (6.0 / (rows + cols) as f64).sqrt(),
    };
    let data: Vec<T> = (0..rows * cols)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(&[rows, cols], data)
}

// ---------------------------------------------------------------- linear

/// Affine map `x · W + b` with `W: [in, out]`, `b: [out]`.
pub struct LinearMap<T: Real> {
    pub w: Param<T>,
    pub b: Param<T>,
}

impl<T: Real> LinearMap<T> {
    pub fn new(
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        LinearMap {
            w: Param::new(format!("{name}.w"), init_matrix(rng, in_dim, out_dim, init), true),
            b: Param::new(format!("{name}.b"), Tensor::zeros(&[out_dim]), true),
        }
    }

    /// `[N, in] -> [N, out]`.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.matmul(&self.w.get()).add(&self.b.get())
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }
}

impl<T: Real> Collect<T> for LinearMap<T> {
    fn collect_params(&self, out: &mut ParamSet<T>) {
        out.register(&self.w);
        out.register(&self.b);
    }
}

// ------------------------------------------------------------------- GRU

/// Gated recurrent unit:
/// r = σ(Wr·[x,h]+br), u = σ(Wu·[x,h]+bu),
/// ĥ = tanh(Wc·[x, r⊙h]+bc), h' = (1−u)⊙h + u⊙ĥ.
/// The update is a convex combination, so h' stays inside the elementwise
/// hull of (h, ĥ).
pub struct GruCell<T: Real> {
    pub wr: LinearMap<T>,
    pub wu: LinearMap<T>,
    pub wc: LinearMap<T>,
}

impl<T: Real> GruCell<T> {
    pub fn new(name: &str, x_dim: usize, h_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        GruCell {
            wr: LinearMap::new(&format!("{name}.r"), x_dim + h_dim, h_dim, Init::FanIn, rng),
            wu: LinearMap::new(&format!("{name}.u"), x_dim + h_dim, h_dim, Init::FanIn, rng),
            wc: LinearMap::new(&format!("{name}.c"), x_dim + h_dim, h_dim, Init::FanIn, rng),
        }
    }

    /// `x: [N, x_dim]`, `h: [N, h_dim]` -> `[N, h_dim]`.
    pub fn forward(&self, x: &Tensor<T>, h: &Tensor<T>) -> Tensor<T> {
        let xh = Tensor::concat(&[x, h], 1);
        let r = self.wr.forward(&xh).sigmoid();
        let u = self.wu.forward(&xh).sigmoid();
        let xrh = Tensor::concat(&[x, &r.mul(h)], 1);
        let cand = self.wc.forward(&xrh).tanh();
        // h + u·(ĥ − h) == (1−u)·h + u·ĥ
        h.add(&u.mul(&cand.sub(h)))
    }
}

impl<T: Real> Collect<T> for GruCell<T> {
    fn collect_params(&self, out: &mut ParamSet<T>) {
        self.wr.collect_params(out);
        self.wu.collect_params(out);
        self.wc.collect_params(out);
    }
}

// ------------------------------------------------------------------- MLP

/// Fully connected stack with ReLU between layers (none after the last).
pub struct Mlp<T: Real> {
    pub layers: Vec<LinearMap<T>>,
}

impl<T: Real> Mlp<T> {
    /// `dims` = [in, hidden..., out].
    pub fn new(name: &str, dims: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "Mlp needs at least [in, out] dims");
        let layers = (0..dims.len() - 1)
            .map(|i| LinearMap::new(&format!("{name}.{i}"), dims[i], dims[i + 1], init, rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        h
    }
}

impl<T: Real> Collect<T> for Mlp<T> {
    fn collect_params(&self, out: &mut ParamSet<T>) {
        for l in &self.layers {
            l.collect_params(out);
        }
    }
}

// -------------------------------------------------- positional encoding

/// Sinusoidal features at π-scaled power-of-two frequencies:
/// `p ↦ [p, sin(2⁰πp), cos(2⁰πp), …, sin(2^{L−1}πp), cos(2^{L−1}πp)]`,
/// mapping `[N, d] -> [N, d·(1+2L)]`. With d=3, L=5 this is the 33-wide
/// point featurization the field decoders consume.
#[derive(Clone, Copy, Debug)]
pub struct PositionalEncoder {
    pub freqs: usize,
}

impl PositionalEncoder {
    pub fn out_dim(&self, in_dim: usize) -> usize {
        in_dim * (1 + 2 * self.freqs)
    }

    pub fn encode<T: Real>(&self, p: &Tensor<T>) -> Tensor<T> {
        assert_eq!(p.rank(), 2, "positional encoding expects [N, d], got {:?}", p.shape());
        let mut parts: Vec<Tensor<T>> = vec![p.clone()];
        for k in 0..self.freqs {
            let scaled = p.mul_scalar(std::f64::consts::PI * (1u64 << k) as f64);
            parts.push(scaled.sin());
            parts.push(scaled.cos());
        }
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        Tensor::concat(&refs, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        crate::rng::stream(17, "nets-test", &[])
    }

    #[test]
    fn linear_matches_manual() {
        let mut r = rng();
        let lin = LinearMap::<f64>::new("l", 3, 2, Init::FanIn, &mut r);
        let x = Tensor::from_f64_vec(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let y = lin.forward(&x);
        let w = lin.w.get();
        let b = lin.b.get();
        for i in 0..2 {
            for j in 0..2 {
                let want: f64 = (0..3).map(|k| x.at(&[i, k]) * w.at(&[k, j])).sum::<f64>()
                    + b.at(&[j]);
                assert!((y.at(&[i, j]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gru_matches_scalar_reference() {
        // 1-d input, 1-d hidden: every weight is a scalar we can hand-roll.
        let mut r = rng();
        let gru = GruCell::<f64>::new("g", 1, 1, &mut r);
        let x = 0.7;
        let h = -0.3;
        let w = |l: &LinearMap<f64>| (l.w.get().at(&[0, 0]), l.w.get().at(&[1, 0]));
        let (wrx, wrh) = w(&gru.wr);
        let (wux, wuh) = w(&gru.wu);
        let (wcx, wch) = w(&gru.wc);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let rr = sig(wrx * x + wrh * h);
        let uu = sig(wux * x + wuh * h);
        let cc = (wcx * x + wch * (rr * h)).tanh();
        let want = (1.0 - uu) * h + uu * cc;
        let got = gru
            .forward(
                &Tensor::from_f64_vec(&[1, 1], &[x]),
                &Tensor::from_f64_vec(&[1, 1], &[h]),
            )
            .item();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn gru_output_in_hull() {
        let mut r = rng();
        let gru = GruCell::<f64>::new("g", 4, 4, &mut r);
        use rand::Rng;
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| r.gen_range(-2.0..2.0)).collect();
            let h: Vec<f64> = (0..4).map(|_| r.gen_range(-2.0..2.0)).collect();
            let tx = Tensor::from_f64_vec(&[1, 4], &x);
            let th = Tensor::from_f64_vec(&[1, 4], &h);
            let out = gru.forward(&tx, &th);
            for j in 0..4 {
                let o = out.at(&[0, j]);
                let lo = h[j].min(-1.0) - 1e-12; // ĥ ∈ [−1,1]
                let hi = h[j].max(1.0) + 1e-12;
                assert!(o >= lo && o <= hi, "{o} outside hull of ({}, tanh)", h[j]);
            }
        }
    }

    #[test]
    fn positional_encoding_shape_and_values() {
        let enc = PositionalEncoder { freqs: 5 };
        assert_eq!(enc.out_dim(3), 33);
        let p = Tensor::<f64>::from_f64_vec(&[1, 3], &[0.0, 0.25, 1.0]);
        let e = enc.encode(&p);
        assert_eq!(e.shape(), &[1, 33]);
        // Identity part.
        assert_eq!(e.at(&[0, 1]), 0.25);
        // sin(π·0) = 0, cos(π·0) = 1.
        assert!((e.at(&[0, 3]) - 0.0).abs() < 1e-12);
        assert!((e.at(&[0, 6]) - 1.0).abs() < 1e-12);
        // sin(π·0.25) at k=0.
        assert!((e.at(&[0, 4]) - (std::f64::consts::PI * 0.25).sin()).abs() < 1e-12);
        // k=1 band scales by 2.
        assert!((e.at(&[0, 10]) - (2.0 * std::f64::consts::PI * 0.25).sin()).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn registry_rejects_duplicates() {
        let mut r = rng();
        let a = LinearMap::<f32>::new("same", 2, 2, Init::FanIn, &mut r);
        let b = LinearMap::<f32>::new("same", 2, 2, Init::FanIn, &mut r);
        let mut set = ParamSet::new();
        a.collect_params(&mut set);
        b.collect_params(&mut set);
    }

    #[test]
    fn set_data_resets_grad() {
        let p = Param::<f64>::new("p", Tensor::zeros(&[2]), true);
        let v = p.get();
        let loss = v.mul(&v).sum_all();
        loss.backward();
        assert!(p.grad_vec().iter().all(|&g| g == 0.0)); // d(x²)=2x=0 at x=0
        let v2 = p.get().add_scalar(1.0); // not a leaf write; check set_data
        drop(v2);
        p.set_data(vec![3.0, 4.0]);
        let v3 = p.get();
        let loss = v3.mul(&v3).sum_all();
        loss.backward();
        assert_eq!(p.grad_vec(), vec![6.0, 8.0]);
    }
}
