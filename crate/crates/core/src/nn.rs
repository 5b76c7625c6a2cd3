//! Feed-forward networks with hand-written reverse-mode gradients and Adam.
//!
//! Parameters live in one flat vector. Layer `l` owns a `fan_in x fan_out`
//! row-major weight block followed by `fan_out` biases, so snapshots, soft
//! target updates and the optimizer all operate on plain slices.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{axpy, matmul_acc, transpose};

/// Squashing applied to the last layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputActivation {
    Identity,
    /// `scale * tanh(z)`, used for bounded actors.
    Tanh { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
struct ForwardCache {
    batch: usize,
    /// Input to every layer; for `l > 0` this is the post-ReLU, post-dropout
    /// activation of layer `l - 1`.
    inputs: Vec<Vec<f64>>,
    /// Inverted-dropout factors applied to `inputs[l]` (never for `l == 0`).
    masks: Vec<Option<Vec<f64>>>,
    output: Vec<f64>,
}

/// Gradients returned by [`MlpNet::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Same layout as [`MlpNet::params`].
    pub params: Vec<f64>,
    /// `dL/dx`, row-major `batch x input_dim`.
    pub input: Vec<f64>,
}

pub struct MlpNet {
    widths: Vec<usize>,
    params: Vec<f64>,
    output: OutputActivation,
    dropout: f64,
    cache: Option<ForwardCache>,
}

impl Clone for MlpNet {
    fn clone(&self) -> Self {
        Self {
            widths: self.widths.clone(),
            params: self.params.clone(),
            output: self.output,
            dropout: self.dropout,
            cache: None,
        }
    }
}

impl core::fmt::Debug for MlpNet {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("MlpNet")
            .field("widths", &self.widths)
            .field("output", &self.output)
            .field("dropout", &self.dropout)
            .field("n_params", &self.params.len())
            .finish()
    }
}

/// `Σ (w_l * w_{l+1} + w_{l+1})`
pub fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn validate(widths: &[usize], dropout: f64) -> Result<()> {
    if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
        return Err(Error::Config(format!("invalid layer widths {widths:?}")));
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
    }
    Ok(())
}

impl MlpNet {
    /// Seeded initialization, uniform in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        output: OutputActivation,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        validate(widths, dropout)?;
        let mut params = Vec::with_capacity(param_count(widths));
        for w in widths.windows(2) {
            let bound = 1.0 / libm::sqrt(w[0] as f64);
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(rng.random_range(-bound..bound));
            }
        }
        Ok(Self { widths: widths.to_vec(), params, output, dropout, cache: None })
    }

    pub fn zeros(widths: &[usize], output: OutputActivation) -> Result<Self> {
        Self::from_params(widths, vec![0.0; param_count(widths)], output, 0.0)
    }

    pub fn from_params(
        widths: &[usize],
        params: Vec<f64>,
        output: OutputActivation,
        dropout: f64,
    ) -> Result<Self> {
        validate(widths, dropout)?;
        let expected = param_count(widths);
        if params.len() != expected {
            return Err(Error::Shape { expected, got: params.len() });
        }
        Ok(Self { widths: widths.to_vec(), params, output, dropout, cache: None })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.widths[..=layer])
    }

    fn layer_params(&self, layer: usize) -> (&[f64], &[f64]) {
        let start = self.layer_offset(layer);
        let (fan_in, fan_out) = (self.widths[layer], self.widths[layer + 1]);
        let w = &self.params[start..start + fan_in * fan_out];
        let b = &self.params[start + fan_in * fan_out..start + fan_in * fan_out + fan_out];
        (w, b)
    }

    fn affine(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let (fan_in, fan_out) = (self.widths[layer], self.widths[layer + 1]);
        let (w, b) = self.layer_params(layer);
        let batch = x.len() / fan_in;
        let mut y = Vec::with_capacity(batch * fan_out);
        for _ in 0..batch {
            y.extend_from_slice(b);
        }
        matmul_acc(x, w, &mut y, batch, fan_in, fan_out);
        y
    }

    fn squash(&self, z: &mut [f64]) {
        if let OutputActivation::Tanh { scale } = self.output {
            for v in z.iter_mut() {
                *v = scale * libm::tanh(*v);
            }
        }
    }

    fn check_input(&self, xs: &[f64], batch: usize) -> Result<()> {
        let expected = batch * self.input_dim();
        if xs.len() != expected {
            return Err(Error::Shape { expected, got: xs.len() });
        }
        Ok(())
    }

    /// Dropout-free evaluation of a single input.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict_batch(x, 1)
    }

    /// Dropout-free evaluation of `batch` row-major inputs. Does not touch the
    /// gradient cache.
    pub fn predict_batch(&self, xs: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_input(xs, batch)?;
        let mut h = self.affine(0, xs);
        for layer in 1..self.n_layers() {
            relu(&mut h);
            h = self.affine(layer, &h);
        }
        self.squash(&mut h);
        Ok(h)
    }

    /// Forward pass that records activations for a following [`backward`].
    /// Dropout is only active in [`Mode::Train`].
    ///
    /// [`backward`]: MlpNet::backward
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        xs: &[f64],
        batch: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_input(xs, batch)?;
        let n_layers = self.n_layers();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut masks = Vec::with_capacity(n_layers);
        inputs.push(xs.to_vec());
        masks.push(None);
        let mut h = self.affine(0, xs);
        for layer in 1..n_layers {
            relu(&mut h);
            let mask = if mode == Mode::Train && self.dropout > 0.0 {
                let keep = 1.0 - self.dropout;
                let m: Vec<f64> = (0..h.len())
                    .map(|_| if rng.random::<f64>() < self.dropout { 0.0 } else { 1.0 / keep })
                    .collect();
                for (v, f) in h.iter_mut().zip(&m) {
                    *v *= f;
                }
                Some(m)
            } else {
                None
            };
            let next = self.affine(layer, &h);
            inputs.push(h);
            masks.push(mask);
            h = next;
        }
        self.squash(&mut h);
        self.cache = Some(ForwardCache { batch, inputs, masks, output: h.clone() });
        Ok(h)
    }

    fn output_grad(&self, cache: &ForwardCache, out_grad: &[f64]) -> Result<Vec<f64>> {
        if out_grad.len() != cache.output.len() {
            return Err(Error::Shape { expected: cache.output.len(), got: out_grad.len() });
        }
        Ok(match self.output {
            OutputActivation::Identity => out_grad.to_vec(),
            OutputActivation::Tanh { scale } => out_grad
                .iter()
                .zip(&cache.output)
                .map(|(g, y)| {
                    let t = y / scale;
                    g * scale * (1.0 - t * t)
                })
                .collect(),
        })
    }

    fn take_cache(&mut self) -> Result<ForwardCache> {
        self.cache
            .take()
            .ok_or_else(|| Error::State("backward called without a cached forward pass".to_string()))
    }

    /// Reverse pass for the most recent [`forward`](MlpNet::forward). Consumes
    /// the cache, so each forward supports exactly one backward.
    pub fn backward(&mut self, out_grad: &[f64]) -> Result<Gradients> {
        let cache = self.take_cache()?;
        let mut g = self.output_grad(&cache, out_grad)?;
        let mut grads = vec![0.0; self.params.len()];
        for layer in (0..self.n_layers()).rev() {
            let (fan_in, fan_out) = (self.widths[layer], self.widths[layer + 1]);
            let start = self.layer_offset(layer);
            let x = &cache.inputs[layer];
            let (dw, db) = grads[start..start + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for gr in g.chunks_exact(fan_out) {
                axpy(1.0, gr, db);
            }
            matmul_acc(&transpose(x, cache.batch, fan_in), &g, dw, fan_in, cache.batch, fan_out);
            g = self.input_grad(layer, &cache, &g);
        }
        debug_assert_eq!(g.len(), cache.batch * self.input_dim());
        Ok(Gradients { params: grads, input: g })
    }

    /// Like [`backward`](MlpNet::backward) but only propagates `dL/dx`,
    /// skipping the parameter gradients.
    pub fn backward_input(&mut self, out_grad: &[f64]) -> Result<Vec<f64>> {
        let cache = self.take_cache()?;
        let mut g = self.output_grad(&cache, out_grad)?;
        for layer in (0..self.n_layers()).rev() {
            g = self.input_grad(layer, &cache, &g);
        }
        Ok(g)
    }

    fn input_grad(&self, layer: usize, cache: &ForwardCache, g: &[f64]) -> Vec<f64> {
        let (fan_in, fan_out) = (self.widths[layer], self.widths[layer + 1]);
        let (w, _) = self.layer_params(layer);
        let x = &cache.inputs[layer];
        let mut dx = vec![0.0; cache.batch * fan_in];
        matmul_acc(g, &transpose(w, fan_in, fan_out), &mut dx, cache.batch, fan_out, fan_in);
        if layer > 0 {
            match &cache.masks[layer] {
                Some(mask) => {
                    for ((d, &xi), &m) in dx.iter_mut().zip(x).zip(mask) {
                        *d = if xi > 0.0 { *d * m } else { 0.0 };
                    }
                }
                None => {
                    for (d, &xi) in dx.iter_mut().zip(x) {
                        if xi <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
            }
        }
        dx
    }

    /// `θ ← (1 - τ) θ + τ θ_src`
    pub fn soft_update_from(&mut self, src: &MlpNet, tau: f64) {
        debug_assert_eq!(self.params.len(), src.params.len());
        for (t, s) in self.params.iter_mut().zip(&src.params) {
            *t = (1.0 - tau) * *t + tau * s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

fn relu(h: &mut [f64]) {
    for v in h.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
        }
    }

    pub fn for_net(net: &MlpNet, learning_rate: f64) -> Self {
        Self::new(net.params().len(), learning_rate)
    }

    pub fn step(&mut self, net: &mut MlpNet, grads: &[f64]) -> Result<()> {
        self.apply(net.params_mut(), grads)
    }

    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.first_moment.len() {
            return Err(Error::Shape { expected: self.first_moment.len(), got: grads.len() });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("gradient component {i} is {}", grads[i])));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let correction1 = 1.0 - libm::pow(self.beta1, t);
        let correction2 = 1.0 - libm::pow(self.beta2, t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon);
        }
        Ok(())
    }
}
