//! Dense ReLU network with a scalar linear output, trained with AdamW.
//!
//! Parameters live in one flat buffer, layer by layer: the weight matrix
//! (`fan_out x fan_in`, row-major) followed by the bias vector. Batched
//! passes use GEMM; single-sample passes are plain loops.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("input has {got} values, network expects {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Hidden-layer shape, e.g. `128 x 4` is four hidden layers of width 128.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub width: u32,
    pub depth: u32,
}

impl MlpShape {
    pub const fn new(width: u32, depth: u32) -> Self {
        MlpShape { width, depth }
    }

    pub fn layer_sizes(&self, input: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(std::iter::repeat_n(
            self.width as usize,
            self.depth as usize,
        ));
        s.push(1);
        s
    }
}

impl std::fmt::Display for MlpShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.depth)
    }
}

impl std::str::FromStr for MlpShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, d) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WIDTHxDEPTH, got {s:?}"))?;
        let width = w.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
        let depth = d.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
        if width == 0 {
            return Err("width must be positive".into());
        }
        Ok(MlpShape { width, depth })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w: Range<usize>,
    b: Range<usize>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
    params: Vec<T>,
    activation: Activation,
    // Identity of the current parameter values, for cache staleness checks.
    stamp: u64,
}

impl<T: Clone> Clone for Mlp<T> {
    fn clone(&self) -> Self {
        Mlp {
            sizes: self.sizes.clone(),
            layers: self.layers.clone(),
            params: self.params.clone(),
            activation: self.activation,
            stamp: fresh_id(),
        }
    }
}

impl<T: PartialEq> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.sizes == other.sizes && self.params == other.params
    }
}

fn layout(sizes: &[usize]) -> (Vec<Layer>, usize) {
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    let mut off = 0;
    for pair in sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let w = off..off + fan_in * fan_out;
        let b = w.end..w.end + fan_out;
        off = b.end;
        layers.push(Layer {
            fan_in,
            fan_out,
            w,
            b,
        });
    }
    (layers, off)
}

/// Activations recorded by a single-sample training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    stamp: u64,
    /// Layer inputs: `acts[0]` is the network input, `acts[l]` the output of hidden layer `l`.
    acts: Vec<Vec<T>>,
}

/// Gradients in the same flat layout as the parameters, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<T>,
    pub input: Vec<T>,
}

/// Below this many rows a batched forward uses per-row dot products; GEMM
/// packing overhead dominates for tiny batches.
const SMALL_BATCH: usize = 4;

/// Reusable buffers for batched passes.
#[derive(Debug, Default)]
pub struct BatchWorkspace<T> {
    rows: usize,
    acts: Vec<Vec<T>>,
    delta: Vec<T>,
    delta_prev: Vec<T>,
}

/// Reusable buffers for allocation-free single-sample inference.
#[derive(Debug, Default, Clone)]
pub struct Scratch<T> {
    a: Vec<T>,
    b: Vec<T>,
}

/// Dot product with eight independent partial sums, which lets the
/// compiler vectorise the loop.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ar.iter().zip(br) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

impl<T: Real> Mlp<T> {
    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self, NnError> {
        let mut m = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &m.layers {
            let r = (6.0 / layer.fan_in as f64).sqrt();
            for p in &mut m.params[layer.w.clone()] {
                *p = T::of(rng.random_range(-r..=r));
            }
        }
        Ok(m)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, NnError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NnError::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        if *sizes.last().unwrap() != 1 {
            return Err(NnError::Shape("output layer must have width 1".into()));
        }
        let (layers, n) = layout(sizes);
        Ok(Mlp {
            sizes: sizes.to_vec(),
            layers,
            params: vec![T::zero(); n],
            activation: Activation::Relu,
            stamp: fresh_id(),
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<T>) -> Result<Self, NnError> {
        let mut m = Self::zeros(sizes)?;
        if params.len() != m.params.len() {
            return Err(NnError::Shape(format!(
                "{} parameters for sizes {sizes:?}, expected {}",
                params.len(),
                m.params.len()
            )));
        }
        m.params = params;
        Ok(m)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [T] {
        self.stamp = fresh_id();
        &mut self.params
    }

    pub fn weight_ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.layers.iter().map(|l| l.w.clone())
    }

    pub fn bias_ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.layers.iter().map(|l| l.b.clone())
    }

    /// Per-tensor `(length, decay)` in layout order: weights decay, biases do not.
    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    TensorSpec::new(l.w.len(), true),
                    TensorSpec::new(l.b.len(), false),
                ]
            })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            sizes: self.sizes.clone(),
            layers: self.layers.clone(),
            params: self.params.iter().map(|x| U::of(x.f64())).collect(),
            activation: self.activation,
            stamp: fresh_id(),
        }
    }

    fn check_width(&self, x: &[T]) -> Result<(), NnError> {
        if x.len() != self.sizes[0] {
            return Err(NnError::WidthMismatch {
                expected: self.sizes[0],
                got: x.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn dense(&self, layer: &Layer, x: &[T], out: &mut Vec<T>, relu: bool) {
        out.clear();
        let w = &self.params[layer.w.clone()];
        let b = &self.params[layer.b.clone()];
        for (row, bias) in w.chunks_exact(layer.fan_in).zip(b) {
            let acc = *bias + dot(row, x);
            out.push(if relu { acc.max(T::zero()) } else { acc });
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<T, NnError> {
        self.check_width(x)?;
        Ok(self.forward_with(x, &mut Scratch::default()))
    }

    /// Unchecked forward reusing `scratch`; `x.len()` must equal the input width.
    #[inline]
    pub fn forward_with(&self, x: &[T], scratch: &mut Scratch<T>) -> T {
        let n = self.layers.len();
        let Scratch { a, b } = scratch;
        a.clear();
        a.extend_from_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            self.dense(layer, a, b, i + 1 < n);
            std::mem::swap(a, b);
        }
        a[0]
    }

    pub fn forward_train(&self, x: &[T]) -> Result<(T, ForwardCache<T>), NnError> {
        self.check_width(x)?;
        let n = self.layers.len();
        let mut acts = vec![x.to_vec()];
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            self.dense(layer, acts.last().unwrap(), &mut out, i + 1 < n);
            if i + 1 < n {
                acts.push(std::mem::take(&mut out));
            }
        }
        Ok((
            out[0],
            ForwardCache {
                stamp: self.stamp,
                acts,
            },
        ))
    }

    pub fn backward(&self, cache: &ForwardCache<T>, dout: T) -> Result<Gradients<T>, NnError> {
        if cache.stamp != self.stamp || cache.acts.len() != self.layers.len() {
            return Err(NnError::StaleCache);
        }
        let mut grads = vec![T::zero(); self.params.len()];
        let mut delta = vec![dout];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let a = &cache.acts[i];
            for (o, d) in delta.iter().enumerate() {
                grads[layer.b.start + o] += *d;
                let g = &mut grads[layer.w.start + o * layer.fan_in..][..layer.fan_in];
                for (gi, ai) in g.iter_mut().zip(a) {
                    *gi += *d * *ai;
                }
            }
            let w = &self.params[layer.w.clone()];
            let mut prev = vec![T::zero(); layer.fan_in];
            for (o, d) in delta.iter().enumerate() {
                for (p, wi) in prev.iter_mut().zip(&w[o * layer.fan_in..][..layer.fan_in]) {
                    *p += *d * *wi;
                }
            }
            if i > 0 {
                // ReLU gate: a stored activation of zero means the unit was off.
                for (p, ai) in prev.iter_mut().zip(a) {
                    if *ai <= T::zero() {
                        *p = T::zero();
                    }
                }
            }
            delta = prev;
        }
        Ok(Gradients {
            params: grads,
            input: delta,
        })
    }

    /// Batched forward over `rows` inputs stored row-major in `x`.
    /// Returns the `rows` outputs (borrowed from the workspace).
    pub fn forward_batch<'w>(
        &self,
        x: &[T],
        rows: usize,
        ws: &'w mut BatchWorkspace<T>,
    ) -> Result<&'w [T], NnError> {
        if x.len() != rows * self.sizes[0] {
            return Err(NnError::WidthMismatch {
                expected: rows * self.sizes[0],
                got: x.len(),
            });
        }
        let n = self.layers.len();
        ws.rows = rows;
        ws.acts.resize_with(n + 1, Vec::new);
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(i + 1);
            let input = &head[i];
            let out = &mut tail[0];
            out.resize(rows * layer.fan_out, T::zero());
            let b = &self.params[layer.b.clone()];
            if rows < SMALL_BATCH {
                let w = &self.params[layer.w.clone()];
                for (xr, orow) in input
                    .chunks_exact(layer.fan_in)
                    .zip(out.chunks_exact_mut(layer.fan_out))
                {
                    for ((o, wr), bias) in orow.iter_mut().zip(w.chunks_exact(layer.fan_in)).zip(b)
                    {
                        *o = *bias + dot(wr, xr);
                    }
                }
            } else {
                for row in out.chunks_exact_mut(layer.fan_out) {
                    row.copy_from_slice(b);
                }
                T::gemm(
                    rows,
                    layer.fan_in,
                    layer.fan_out,
                    T::one(),
                    input,
                    layer.fan_in as isize,
                    1,
                    &self.params[layer.w.clone()],
                    1,
                    layer.fan_in as isize,
                    T::one(),
                    out,
                    layer.fan_out as isize,
                    1,
                );
            }
            if i + 1 < n {
                for v in out.iter_mut() {
                    *v = v.max(T::zero());
                }
            }
        }
        Ok(&ws.acts[n])
    }

    /// Backward pass for the last [`Mlp::forward_batch`] call on `ws`.
    /// Parameter gradients are accumulated into `grads`; if `dinput` is given
    /// it receives `d loss / d x` (`rows x input_width`).
    pub fn backward_batch(
        &self,
        ws: &mut BatchWorkspace<T>,
        dout: &[T],
        grads: &mut [T],
        dinput: Option<&mut [T]>,
    ) -> Result<(), NnError> {
        let rows = ws.rows;
        let n = self.layers.len();
        if ws.acts.len() != n + 1 || dout.len() != rows || grads.len() != self.params.len() {
            return Err(NnError::Shape("batch workspace/gradient mismatch".into()));
        }
        ws.delta.clear();
        ws.delta.extend_from_slice(dout);
        let mut dinput = dinput;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let a = &ws.acts[i];
            let delta = &ws.delta;
            // dW += delta^T a
            T::gemm(
                layer.fan_out,
                rows,
                layer.fan_in,
                T::one(),
                delta,
                1,
                layer.fan_out as isize,
                a,
                layer.fan_in as isize,
                1,
                T::one(),
                &mut grads[layer.w.clone()],
                layer.fan_in as isize,
                1,
            );
            let gb = &mut grads[layer.b.clone()];
            for row in delta.chunks_exact(layer.fan_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += *d;
                }
            }
            let want_input = i > 0 || dinput.is_some();
            if !want_input {
                break;
            }
            let prev = if i == 0 {
                match dinput.take() {
                    Some(buf) => {
                        if buf.len() != rows * layer.fan_in {
                            return Err(NnError::Shape("input gradient buffer".into()));
                        }
                        buf
                    }
                    None => break,
                }
            } else {
                ws.delta_prev.resize(rows * layer.fan_in, T::zero());
                &mut ws.delta_prev[..]
            };
            T::gemm(
                rows,
                layer.fan_out,
                layer.fan_in,
                T::one(),
                delta,
                layer.fan_out as isize,
                1,
                &self.params[layer.w.clone()],
                layer.fan_in as isize,
                1,
                T::zero(),
                prev,
                layer.fan_in as isize,
                1,
            );
            if i > 0 {
                for (p, ai) in ws.delta_prev.iter_mut().zip(a) {
                    if *ai <= T::zero() {
                        *p = T::zero();
                    }
                }
                std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
            }
        }
        Ok(())
    }
}

/// `((pred - target)^2, 2 (pred - target))`.
#[inline]
pub fn mse_loss(pred: f64, target: f64) -> (f64, f64) {
    let e = pred - target;
    (e * e, 2.0 * e)
}

/// Mean squared error over a batch and its gradient per prediction.
pub fn mse_loss_batch<T: Real>(preds: &[T], targets: &[T], grad: &mut [T]) -> f64 {
    let n = preds.len() as f64;
    let mut sum = 0.0;
    for ((p, t), g) in preds.iter().zip(targets).zip(grad.iter_mut()) {
        let (l, d) = mse_loss(p.f64(), t.f64());
        sum += l;
        *g = T::of(d / n);
    }
    sum / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: masked parameters are scaled by `1 - lr * weight_decay`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorSpec {
    pub len: usize,
    pub decay: bool,
}

impl TensorSpec {
    pub fn new(len: usize, decay: bool) -> Self {
        TensorSpec { len, decay }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    specs: Vec<TensorSpec>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, specs: Vec<TensorSpec>) -> Self {
        let m = specs.iter().map(|s| vec![0.0; s.len]).collect::<Vec<_>>();
        AdamState {
            config,
            step: 0,
            v: m.clone(),
            m,
            specs,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }
}

/// One bias-corrected AdamW update over a list of tensors.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
) -> Result<(), NnError> {
    if params.len() != state.specs.len() || grads.len() != state.specs.len() {
        return Err(NnError::Shape(format!(
            "{} tensors / {} gradients for {} optimizer slots",
            params.len(),
            grads.len(),
            state.specs.len()
        )));
    }
    for (i, spec) in state.specs.iter().enumerate() {
        if params[i].len() != spec.len || grads[i].len() != spec.len {
            return Err(NnError::Shape(format!("tensor {i} length")));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let decay = 1.0 - c.lr * c.weight_decay;
    for (i, spec) in state.specs.iter().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = &mut *params[i];
        let g = grads[i];
        for k in 0..spec.len {
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            if spec.decay {
                p[k] *= decay;
            }
            p[k] -= c.lr * mh / (vh.sqrt() + c.eps);
        }
    }
    Ok(())
}

/// Splits the MLP's flat buffer into per-tensor slices matching [`Mlp::tensor_specs`].
pub fn split_tensors<'a>(flat: &'a mut [f64], specs: &[TensorSpec]) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(specs.len());
    let mut rest = flat;
    for s in specs {
        let (head, tail) = rest.split_at_mut(s.len);
        out.push(head);
        rest = tail;
    }
    out
}

pub fn split_tensors_ref<'a>(flat: &'a [f64], specs: &[TensorSpec]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(specs.len());
    let mut off = 0;
    for s in specs {
        out.push(&flat[off..off + s.len]);
        off += s.len;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    // Straight-line reference using nested vectors built from the flat layout.
    fn reference_forward(m: &Mlp<f64>, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let sizes = m.sizes().to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (fi, fo) = (sizes[l], sizes[l + 1]);
            let w: Vec<Vec<f64>> = (0..fo)
                .map(|o| m.params()[off + o * fi..off + (o + 1) * fi].to_vec())
                .collect();
            off += fi * fo;
            let b = m.params()[off..off + fo].to_vec();
            off += fo;
            let mut z = vec![0.0; fo];
            for o in 0..fo {
                z[o] = b[o];
                for i in 0..fi {
                    z[o] += w[o][i] * a[i];
                }
                if l + 2 < sizes.len() && z[o] < 0.0 {
                    z[o] = 0.0;
                }
            }
            a = z;
        }
        a[0]
    }

    fn input(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn shapes() {
        let s: MlpShape = "128x4".parse().unwrap();
        assert_eq!(s.layer_sizes(68), vec![68, 128, 128, 128, 128, 1]);
        let m = Mlp::<f64>::zeros(&MlpShape::new(128, 4).layer_sizes(68)).unwrap();
        assert_eq!(m.param_count(), 58_497);
        let m = Mlp::<f64>::zeros(&MlpShape::new(32, 2).layer_sizes(68)).unwrap();
        assert_eq!(m.param_count(), 3_297);
        assert!("12".parse::<MlpShape>().is_err());
        assert!(Mlp::<f64>::zeros(&[3, 2]).is_err());
    }

    #[test]
    fn zero_and_identity_nets() {
        let m = Mlp::<f64>::zeros(&[5, 7, 1]).unwrap();
        assert_eq!(m.forward(&input(5, 1)).unwrap(), 0.0);
        let m = Mlp::from_params(&[3, 1], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.forward(&[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(
            m.forward(&[1.0]),
            Err(NnError::WidthMismatch {
                expected: 3,
                got: 1
            })
        );
    }

    #[test]
    fn forward_matches_reference() {
        let m = Mlp::<f64>::new(&[68, 128, 128, 1], 42).unwrap();
        for s in 0..5 {
            let x = input(68, s);
            let got = m.forward(&x).unwrap();
            assert!((got - reference_forward(&m, &x)).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_net_gradient_is_scaled_input() {
        let m = Mlp::from_params(&[3, 1], vec![0.5, -1.0, 2.0, 0.1]).unwrap();
        let x = [0.3, 0.7, -0.2];
        let (_, cache) = m.forward_train(&x).unwrap();
        let g = m.backward(&cache, 1.5).unwrap();
        for (a, b) in g.params[..3].iter().zip([0.45f64, 1.05, -0.3]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(g.params[3], 1.5);
        assert_eq!(g.input, vec![0.75, -1.5, 3.0]);
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        // Hidden unit 0 has a large negative bias and is always off.
        let mut m = Mlp::<f64>::new(&[2, 2, 1], 3).unwrap();
        let b = m.bias_ranges().next().unwrap();
        m.params_mut()[b.start] = -100.0;
        let (_, cache) = m.forward_train(&[0.5, -0.5]).unwrap();
        let g = m.backward(&cache, 1.0).unwrap();
        assert_eq!(&g.params[0..2], &[0.0, 0.0]);
        assert_eq!(g.params[b.start], 0.0);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = Mlp::<f64>::new(&[2, 4, 1], 3).unwrap();
        let (_, cache) = m.forward_train(&[0.1, 0.2]).unwrap();
        m.params_mut()[0] += 1.0;
        assert_eq!(m.backward(&cache, 1.0), Err(NnError::StaleCache));
        let other = m.clone();
        let (_, cache) = m.forward_train(&[0.1, 0.2]).unwrap();
        assert_eq!(other.backward(&cache, 1.0), Err(NnError::StaleCache));
    }

    fn fd_check(sizes: &[usize], seed: u64) {
        let mut m = Mlp::<f64>::new(sizes, seed).unwrap();
        // Non-zero biases so every path is exercised.
        for r in m.bias_ranges().collect::<Vec<_>>() {
            for (k, i) in r.enumerate() {
                m.params_mut()[i] = 0.05 * ((k % 5) as f64 - 2.0);
            }
        }
        let x = input(sizes[0], seed + 100);
        let target = 0.3;
        let (pred, cache) = m.forward_train(&x).unwrap();
        let (_, dl) = mse_loss(pred, target);
        let g = m.backward(&cache, dl).unwrap();
        let loss = |m: &Mlp<f64>, x: &[f64]| mse_loss(m.forward(x).unwrap(), target).0;
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..m.param_count() {
            let p = m.params()[i];
            m.params_mut()[i] = p + h;
            let lp = loss(&m, &x);
            m.params_mut()[i] = p - h;
            let lm = loss(&m, &x);
            m.params_mut()[i] = p;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - g.params[i]).abs() / fd.abs().max(g.params[i].abs()).max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "{sizes:?}: worst relative error {worst}");
        let mut xp = x.clone();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let lp = loss(&m, &xp);
            xp[i] = x[i] - h;
            let lm = loss(&m, &xp);
            xp[i] = x[i];
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - g.input[i]).abs() / fd.abs().max(g.input[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "input {i}: {fd} vs {}", g.input[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(&[6, 1], 1);
        fd_check(&MlpShape::new(32, 2).layer_sizes(10), 2);
        fd_check(&MlpShape::new(16, 3).layer_sizes(8), 3);
    }

    #[test]
    fn batched_passes_match_single_sample() {
        let m = Mlp::<f64>::new(&[9, 16, 16, 1], 5).unwrap();
        let rows = 13;
        let x = input(rows * 9, 77);
        let mut ws = BatchWorkspace::default();
        let out = m.forward_batch(&x, rows, &mut ws).unwrap().to_vec();
        let dout: Vec<f64> = (0..rows).map(|r| 0.1 * r as f64 - 0.5).collect();
        let mut grads = vec![0.0; m.param_count()];
        let mut dx = vec![0.0; rows * 9];
        m.backward_batch(&mut ws, &dout, &mut grads, Some(&mut dx))
            .unwrap();
        let mut want = vec![0.0; m.param_count()];
        for r in 0..rows {
            let xr = &x[r * 9..(r + 1) * 9];
            let (y, cache) = m.forward_train(xr).unwrap();
            assert!((y - out[r]).abs() < 1e-12);
            let g = m.backward(&cache, dout[r]).unwrap();
            for (w, gi) in want.iter_mut().zip(&g.params) {
                *w += gi;
            }
            for (a, b) in dx[r * 9..(r + 1) * 9].iter().zip(&g.input) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        for (a, b) in grads.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn f32_forward_tracks_f64() {
        let m = Mlp::<f64>::new(&[68, 64, 64, 1], 8).unwrap();
        let m32 = m.cast::<f32>();
        let x = input(68, 3);
        let x32: Vec<f32> = x.iter().map(|v| *v as f32).collect();
        let mut s = Scratch::default();
        let a = m.forward(&x).unwrap();
        let b = m32.forward_with(&x32, &mut s) as f64;
        assert!((a - b).abs() < 1e-4 * (1.0 + a.abs()));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(1.0, 1.0), (0.0, 0.0));
        assert_eq!(mse_loss(2.0, 0.0), (4.0, 4.0));
        let mut g = [0.0; 2];
        assert_eq!(mse_loss_batch(&[1.0, 0.0], &[0.0, 1.0], &mut g), 1.0);
        assert_eq!(g, [1.0, -1.0]);
    }

    #[test]
    fn adam_first_step() {
        let mut p = [0.0];
        let mut st = AdamState::new(
            AdamConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            vec![TensorSpec::new(1, true)],
        );
        adam_step(&mut [&mut p[..]], &[&[1.0][..]], &mut st).unwrap();
        // -lr * 1 / (1 + eps)
        assert!((p[0] - (-0.001 / (1.0 + 1e-8))).abs() < 1e-18);
        assert!(p[0] < -0.000_999_999_99 && p[0] > -0.001);
    }

    #[test]
    fn adam_zero_gradient_and_decay() {
        let mut a = [1.0, -2.0];
        let mut b = [3.0];
        let mut st = AdamState::new(
            AdamConfig::default(),
            vec![TensorSpec::new(2, true), TensorSpec::new(1, false)],
        );
        adam_step(
            &mut [&mut a[..], &mut b[..]],
            &[&[0.0, 0.0][..], &[0.0][..]],
            &mut st,
        )
        .unwrap();
        let f = 1.0 - 1e-3 * 1e-5;
        assert_eq!(a, [f, -2.0 * f]);
        assert_eq!(b, [3.0]);

        let mut c = [1.0];
        let mut st = AdamState::new(
            AdamConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            vec![TensorSpec::new(1, true)],
        );
        adam_step(&mut [&mut c[..]], &[&[0.0][..]], &mut st).unwrap();
        assert_eq!(c, [1.0]);
        assert!(adam_step(&mut [&mut c[..]], &[&[0.0, 1.0][..]], &mut st).is_err());
        assert!(adam_step(&mut [], &[], &mut st).is_err());
    }

    #[test]
    fn mlp_tensor_specs_mask_biases() {
        let mut m = Mlp::<f64>::new(&[4, 3, 1], 1).unwrap();
        let specs = m.tensor_specs();
        assert_eq!(
            specs,
            vec![
                TensorSpec::new(12, true),
                TensorSpec::new(3, false),
                TensorSpec::new(3, true),
                TensorSpec::new(1, false)
            ]
        );
        let n = m.param_count();
        let t = split_tensors(m.params_mut(), &specs);
        assert_eq!(t.iter().map(|s| s.len()).sum::<usize>(), n);
    }
}
