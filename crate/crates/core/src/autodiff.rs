//! Minimal differentiable feed-forward network engine.
//!
//! Supports fixed-topology multilayer perceptrons (hidden activations, linear
//! output layer) with hand-derived reverse-mode gradients and an Adam update.
//! This is all the surrogate networks need; there is no general computation
//! graph.

use rand::Rng;
use thiserror::Error;

use crate::linalg::{axpy, dot};

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("input length {got} does not match input_dim {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("output gradient length {got} does not match output_dim {expected}")]
    OutputDim { expected: usize, got: usize },
    #[error("gradient length {got} does not match parameter count {expected}")]
    GradientLen { expected: usize, got: usize },
    #[error("non-finite gradient entry at index {0}")]
    NonFiniteGradient(usize),
    #[error("learning rate must be positive, got {0}")]
    NonPositiveLearningRate(f64),
    #[error("all network dimensions must be >= 1")]
    ZeroDim,
}

/// Activation applied to hidden layers (the output layer is always linear).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed in terms of the post-activation value.
    #[inline]
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

/// Offsets of one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    w_off: usize,
    b_off: usize,
}

/// Network topology: input width, hidden widths, output width, activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_layers: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self, AutodiffError> {
        if input_dim == 0 || output_dim == 0 || hidden_layers.iter().any(|&h| h == 0) {
            return Err(AutodiffError::ZeroDim);
        }
        Ok(MlpSpec { input_dim, hidden_layers, output_dim, activation })
    }

    /// Sum over layers of (fan_in + 1) * fan_out.
    pub fn parameter_count(&self) -> usize {
        self.layer_dims().map(|(m, n)| (m + 1) * n).sum()
    }

    fn layer_dims(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let widths: Vec<usize> = std::iter::once(self.input_dim)
            .chain(self.hidden_layers.iter().copied())
            .chain(std::iter::once(self.output_dim))
            .collect();
        (0..widths.len() - 1).map(move |l| (widths[l], widths[l + 1]))
    }

    fn layouts(&self) -> Vec<LayerLayout> {
        let mut off = 0;
        self.layer_dims()
            .map(|(fan_in, fan_out)| {
                let l = LayerLayout { fan_in, fan_out, w_off: off, b_off: off + fan_in * fan_out };
                off = l.b_off + fan_out;
                l
            })
            .collect()
    }
}

/// Flat parameter vector plus its topology.
///
/// Layer weights are stored row-major (one row per output unit), followed by
/// the biases, layer after layer.
#[derive(Debug, Clone)]
pub struct MlpParameters {
    values: Vec<f64>,
    spec: MlpSpec,
    layouts: Vec<LayerLayout>,
}

impl MlpParameters {
    pub fn zeros(spec: MlpSpec) -> Self {
        let layouts = spec.layouts();
        let values = vec![0.0; spec.parameter_count()];
        MlpParameters { values, spec, layouts }
    }

    /// Glorot-uniform weights (±sqrt(6/(fan_in+fan_out))), zero biases.
    pub fn glorot<R: Rng>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        for l in 0..p.layouts.len() {
            let LayerLayout { fan_in, fan_out, w_off, .. } = p.layouts[l];
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut p.values[w_off..w_off + fan_in * fan_out] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        p
    }

    pub fn from_values(spec: MlpSpec, values: Vec<f64>) -> Result<Self, AutodiffError> {
        if values.len() != spec.parameter_count() {
            return Err(AutodiffError::GradientLen {
                expected: spec.parameter_count(),
                got: values.len(),
            });
        }
        let layouts = spec.layouts();
        Ok(MlpParameters { values, spec, layouts })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_input(&self, input: &[f64]) -> Result<(), AutodiffError> {
        if input.len() != self.spec.input_dim {
            return Err(AutodiffError::InputDim { expected: self.spec.input_dim, got: input.len() });
        }
        Ok(())
    }

    pub(crate) fn n_layers(&self) -> usize {
        self.layouts.len()
    }

    /// (fan_in, fan_out, weights row-major, biases) of layer `l`.
    pub(crate) fn layer_slices(&self, l: usize) -> (usize, usize, &[f64], &[f64]) {
        let LayerLayout { fan_in, fan_out, w_off, b_off } = self.layouts[l];
        (
            fan_in,
            fan_out,
            &self.values[w_off..w_off + fan_in * fan_out],
            &self.values[b_off..b_off + fan_out],
        )
    }
}

/// Gradients of a scalar loss w.r.t. parameters and input.
#[derive(Debug, Clone)]
pub struct GradientTape {
    pub parameter_gradient: Vec<f64>,
    pub input_gradient: Vec<f64>,
}

/// Per-layer post-activation buffers, reusable across calls on one network.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// acts[0] is the input copy; acts[l] the output of layer l.
    acts: Vec<Vec<f64>>,
    /// Backprop scratch (delta per layer).
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl MlpCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    fn prepare(&mut self, params: &MlpParameters) {
        let n_layers = params.layouts.len();
        self.acts.resize(n_layers + 1, Vec::new());
        self.acts[0].resize(params.spec.input_dim, 0.0);
        for (l, layout) in params.layouts.iter().enumerate() {
            self.acts[l + 1].resize(layout.fan_out, 0.0);
        }
        let max_width = params.layouts.iter().map(|l| l.fan_out.max(l.fan_in)).max().unwrap_or(0);
        self.delta.resize(max_width, 0.0);
        self.delta_next.resize(max_width, 0.0);
    }
}

/// Forward pass storing every post-activation in `cache`.
pub(crate) fn forward_cached(params: &MlpParameters, input: &[f64], cache: &mut MlpCache) {
    cache.prepare(params);
    cache.acts[0].copy_from_slice(input);
    let n_layers = params.layouts.len();
    for (l, layout) in params.layouts.iter().enumerate() {
        let is_hidden = l + 1 < n_layers;
        let (prev, next) = cache.acts.split_at_mut(l + 1);
        let x = prev[l].as_slice();
        let out = next[0].as_mut_slice();
        for (row, o) in out.iter_mut().enumerate() {
            let w = &params.values[layout.w_off + row * layout.fan_in..][..layout.fan_in];
            let v = dot(w, x) + params.values[layout.b_off + row];
            *o = if is_hidden { params.spec.activation.apply(v) } else { v };
        }
    }
}

/// Reverse pass over a cache produced by `forward_cached`.
///
/// Parameter gradients are *accumulated* into `param_grad`; the gradient
/// w.r.t. the input is written to `input_grad` when provided.
pub(crate) fn backward_cached(
    params: &MlpParameters,
    cache: &mut MlpCache,
    output_gradient: &[f64],
    param_grad: &mut [f64],
    mut input_grad: Option<&mut [f64]>,
) {
    debug_assert_eq!(param_grad.len(), params.values.len());
    let n_layers = params.layouts.len();
    cache.delta[..output_gradient.len()].copy_from_slice(output_gradient);
    for l in (0..n_layers).rev() {
        let layout = params.layouts[l];
        let x = cache.acts[l].as_slice();
        // dW[row] += delta[row] * x ; db[row] += delta[row]
        for row in 0..layout.fan_out {
            let d = cache.delta[row];
            if d != 0.0 {
                let gw = &mut param_grad[layout.w_off + row * layout.fan_in..][..layout.fan_in];
                axpy(d, x, gw);
            }
            param_grad[layout.b_off + row] += d;
        }
        let want_input = l > 0 || input_grad.is_some();
        if !want_input {
            continue;
        }
        // dx = W^T delta
        cache.delta_next[..layout.fan_in].fill(0.0);
        for row in 0..layout.fan_out {
            let d = cache.delta[row];
            if d != 0.0 {
                let w = &params.values[layout.w_off + row * layout.fan_in..][..layout.fan_in];
                axpy(d, w, &mut cache.delta_next[..layout.fan_in]);
            }
        }
        if l > 0 {
            // chain through the previous hidden activation
            for (dn, &a) in cache.delta_next[..layout.fan_in].iter_mut().zip(x) {
                *dn *= params.spec.activation.derivative_from_output(a);
            }
            let (d, dn) = (&mut cache.delta, &mut cache.delta_next);
            std::mem::swap(d, dn);
        } else if let Some(ig) = input_grad.as_deref_mut() {
            ig.copy_from_slice(&cache.delta_next[..layout.fan_in]);
        }
    }
}

/// Smallest |pre-activation| over all hidden units; finite-difference
/// checks of relu networks are only valid when this is well above the step.
#[cfg(test)]
pub(crate) fn hidden_preactivation_margin(params: &MlpParameters, input: &[f64]) -> f64 {
    let mut margin = f64::INFINITY;
    let mut x = input.to_vec();
    let n_layers = params.layouts.len();
    for (l, layout) in params.layouts.iter().enumerate() {
        let is_hidden = l + 1 < n_layers;
        let mut out = vec![0.0; layout.fan_out];
        for (row, o) in out.iter_mut().enumerate() {
            let w = &params.values[layout.w_off + row * layout.fan_in..][..layout.fan_in];
            let pre = dot(w, &x) + params.values[layout.b_off + row];
            if is_hidden {
                margin = margin.min(pre.abs());
                *o = params.spec.activation.apply(pre);
            } else {
                *o = pre;
            }
        }
        x = out;
    }
    margin
}

/// Evaluate the network on one input vector.
pub fn mlp_forward(params: &MlpParameters, input: &[f64]) -> Result<Vec<f64>, AutodiffError> {
    params.check_input(input)?;
    let mut cache = MlpCache::new();
    forward_cached(params, input, &mut cache);
    Ok(cache.output().to_vec())
}

/// Exact reverse-mode derivative of `mlp_forward` for a given output gradient.
pub fn mlp_backward(
    params: &MlpParameters,
    input: &[f64],
    output_gradient: &[f64],
) -> Result<GradientTape, AutodiffError> {
    params.check_input(input)?;
    if output_gradient.len() != params.spec.output_dim {
        return Err(AutodiffError::OutputDim {
            expected: params.spec.output_dim,
            got: output_gradient.len(),
        });
    }
    let mut cache = MlpCache::new();
    forward_cached(params, input, &mut cache);
    let mut param_grad = vec![0.0; params.values.len()];
    let mut input_grad = vec![0.0; params.spec.input_dim];
    backward_cached(params, &mut cache, output_gradient, &mut param_grad, Some(&mut input_grad));
    Ok(GradientTape { parameter_gradient: param_grad, input_gradient: input_grad })
}

/// Adam first/second moment buffers. Moments persist across calls.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(parameter_count: usize) -> Self {
        AdamState { m: vec![0.0; parameter_count], v: vec![0.0; parameter_count] }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One Adam update with bias correction. `step_index` is 1-based.
pub fn adam_step(
    params: &mut MlpParameters,
    gradient: &[f64],
    state: &mut AdamState,
    step_index: usize,
    learning_rate: f64,
) -> Result<(), AutodiffError> {
    if gradient.len() != params.values.len() {
        return Err(AutodiffError::GradientLen {
            expected: params.values.len(),
            got: gradient.len(),
        });
    }
    if !(learning_rate > 0.0) {
        return Err(AutodiffError::NonPositiveLearningRate(learning_rate));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(AutodiffError::NonFiniteGradient(i));
    }
    let t = step_index as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..gradient.len() {
        let g = gradient[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        params.values[i] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}
