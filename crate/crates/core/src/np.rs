//! Neural-process surrogate: a deterministic encoder producing a pooled
//! representation r, a probabilistic encoder producing a latent Gaussian
//! over z, and a decoder mapping (x, r, z) to a predictive Gaussian.
//!
//! Training maximizes a modified evidence lower bound in which the latent
//! prior is replaced by the posterior conditioned on the context points:
//! each step splits the observations into context and target sets, samples
//! z from the target posterior by reparameterization, and descends
//!
//!   loss = -sum_target log N(y | decoder(x, r_ctx, z)) + KL(q_target || q_context)
//!
//! with exact hand-derived gradients through all four networks. At
//! inference every observation acts as context and the predictive is a
//! moment-matched mixture over latent samples.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::autodiff::{
    adam_step, backward_cached, forward_cached, Activation, AdamState, MlpCache, MlpParameters,
    MlpSpec,
};
use crate::surrogate::{
    normalized_training_data, Bounds, Dataset, PredictiveDistribution, Surrogate, SurrogateError,
    YScaler,
};

#[derive(Debug, Error)]
pub enum NpError {
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("standard deviation must be positive")]
    NonPositiveStddev,
    #[error("loss is non-finite")]
    NonFiniteLoss,
}

/// One training point in normalized units: (x, y).
pub type Point = (Vec<f64>, f64);

/// Architecture and training settings.
#[derive(Debug, Clone)]
pub struct NpConfig {
    /// Width of the deterministic representation r (and of the pooled
    /// probabilistic encoding s).
    pub r_dim: usize,
    /// Latent vector width.
    pub z_dim: usize,
    /// Hidden widths of both encoders and the decoder.
    pub hidden: Vec<usize>,
    /// Hidden widths of the latent head mapping pooled s to (mean, raw stddev).
    pub latent_hidden: Vec<usize>,
    pub train_steps_per_fit: usize,
    pub learning_rate: f64,
    /// Per-step context fraction is drawn uniformly from this range.
    pub context_fraction_range: (f64, f64),
    pub latent_samples_inference: usize,
    /// Additive floor under every softplus-derived standard deviation.
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for NpConfig {
    fn default() -> Self {
        NpConfig {
            r_dim: 16,
            z_dim: 16,
            hidden: vec![64, 64],
            latent_hidden: vec![64],
            train_steps_per_fit: 200,
            learning_rate: 1e-3,
            context_fraction_range: (0.3, 0.8),
            latent_samples_inference: 16,
            variance_floor: 1e-3,
            seed: 0,
        }
    }
}

impl NpConfig {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        let (lo, hi) = self.context_fraction_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(SurrogateError::InvalidConfig(
                "context_fraction_range must satisfy 0 < min <= max < 1".into(),
            ));
        }
        if !(self.variance_floor >= 1e-6 && self.variance_floor.is_finite()) {
            return Err(SurrogateError::InvalidConfig(
                "variance_floor must be finite and >= 1e-6".into(),
            ));
        }
        if self.r_dim == 0 || self.z_dim == 0 || self.latent_samples_inference == 0 {
            return Err(SurrogateError::InvalidConfig(
                "r_dim, z_dim and latent_samples_inference must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(SurrogateError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.train_steps_per_fit == 0 {
            return Err(SurrogateError::InvalidConfig("train_steps_per_fit must be >= 1".into()));
        }
        Ok(())
    }
}

/// Diagonal Gaussian over the latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

impl LatentGaussian {
    pub fn standard(dim: usize) -> Self {
        LatentGaussian { mean: vec![0.0; dim], stddev: vec![1.0; dim] }
    }
}

/// The four networks of the model.
#[derive(Debug, Clone)]
pub struct NpNetworks {
    /// (x, y) -> r_i
    pub deterministic_encoder: MlpParameters,
    /// (x, y) -> s_i
    pub probabilistic_encoder: MlpParameters,
    /// pooled s -> (mean, raw stddev) of the latent Gaussian
    pub latent_head: MlpParameters,
    /// (x, r, z) -> (y mean, raw stddev)
    pub decoder: MlpParameters,
}

impl NpNetworks {
    /// Glorot-initialized networks for `input_dim`-dimensional inputs.
    pub fn init<R: Rng>(input_dim: usize, config: &NpConfig, rng: &mut R) -> Self {
        let enc_spec = |r: &mut R| {
            MlpParameters::glorot(
                MlpSpec::new(input_dim + 1, config.hidden.clone(), config.r_dim, Activation::Relu)
                    .expect("encoder spec"),
                r,
            )
        };
        NpNetworks {
            deterministic_encoder: enc_spec(rng),
            probabilistic_encoder: enc_spec(rng),
            latent_head: MlpParameters::glorot(
                MlpSpec::new(
                    config.r_dim,
                    config.latent_hidden.clone(),
                    2 * config.z_dim,
                    Activation::Relu,
                )
                .expect("latent head spec"),
                rng,
            ),
            decoder: MlpParameters::glorot(
                MlpSpec::new(
                    input_dim + config.r_dim + config.z_dim,
                    config.hidden.clone(),
                    2,
                    Activation::Relu,
                )
                .expect("decoder spec"),
                rng,
            ),
        }
    }
}

/// Flat parameter gradients, one buffer per network.
#[derive(Debug, Clone)]
pub struct NpGradients {
    pub deterministic_encoder: Vec<f64>,
    pub probabilistic_encoder: Vec<f64>,
    pub latent_head: Vec<f64>,
    pub decoder: Vec<f64>,
}

impl NpGradients {
    fn zeros_like(networks: &NpNetworks) -> Self {
        NpGradients {
            deterministic_encoder: vec![0.0; networks.deterministic_encoder.len()],
            probabilistic_encoder: vec![0.0; networks.probabilistic_encoder.len()],
            latent_head: vec![0.0; networks.latent_head.len()],
            decoder: vec![0.0; networks.decoder.len()],
        }
    }

    fn clear(&mut self) {
        self.deterministic_encoder.fill(0.0);
        self.probabilistic_encoder.fill(0.0);
        self.latent_head.fill(0.0);
        self.decoder.fill(0.0);
    }

    fn all_finite(&self) -> bool {
        self.deterministic_encoder.iter().all(|g| g.is_finite())
            && self.probabilistic_encoder.iter().all(|g| g.is_finite())
            && self.latent_head.iter().all(|g| g.is_finite())
            && self.decoder.iter().all(|g| g.is_finite())
    }
}

#[inline]
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

const LN_2PI: f64 = 1.8378770664093453;

fn compare_points(pa: &Point, pb: &Point) -> std::cmp::Ordering {
    let (xa, ya) = pa;
    let (xb, yb) = pb;
    for (va, vb) in xa.iter().zip(xb) {
        match va.total_cmp(vb) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    ya.total_cmp(yb)
}

/// Canonical aggregation order: indices sorted lexicographically by (x, y).
/// Pooling in this fixed order makes aggregation exactly permutation
/// invariant, bit for bit.
fn canonical_order(points: &[Point], subset: &[usize], out: &mut Vec<usize>) {
    out.clear();
    out.extend_from_slice(subset);
    out.sort_by(|&a, &b| compare_points(&points[a], &points[b]));
}

/// Mean-pool the encoder outputs over a point set (fixed canonical order).
pub fn encode_aggregate(encoder: &MlpParameters, points: &[Point]) -> Result<Vec<f64>, NpError> {
    if points.is_empty() {
        return Err(NpError::EmptyPointSet);
    }
    let in_dim = encoder.spec().input_dim;
    let mut cache = MlpCache::new();
    let mut input = vec![0.0; in_dim];
    let mut sum = vec![0.0; encoder.spec().output_dim];
    let mut order = Vec::new();
    let subset: Vec<usize> = (0..points.len()).collect();
    canonical_order(points, &subset, &mut order);
    for &i in &order {
        let (x, y) = &points[i];
        if x.len() + 1 != in_dim {
            return Err(NpError::DimensionMismatch { expected: in_dim, got: x.len() + 1 });
        }
        input[..x.len()].copy_from_slice(x);
        input[x.len()] = *y;
        forward_cached(encoder, &input, &mut cache);
        for (s, o) in sum.iter_mut().zip(cache.output()) {
            *s += o;
        }
    }
    let n = points.len() as f64;
    for s in &mut sum {
        *s /= n;
    }
    Ok(sum)
}

/// Latent Gaussian conditioned on a point set: pooled probabilistic encoding
/// through the latent head, stddev = floor + softplus(raw).
pub fn latent_posterior(
    networks: &NpNetworks,
    points: &[Point],
    variance_floor: f64,
) -> Result<LatentGaussian, NpError> {
    let s = encode_aggregate(&networks.probabilistic_encoder, points)?;
    let mut cache = MlpCache::new();
    forward_cached(&networks.latent_head, &s, &mut cache);
    let out = cache.output();
    let z_dim = out.len() / 2;
    Ok(LatentGaussian {
        mean: out[..z_dim].to_vec(),
        stddev: out[z_dim..].iter().map(|&raw| variance_floor + softplus(raw)).collect(),
    })
}

/// Reparameterized sample: z = mean + stddev .* noise.
pub fn sample_latent(posterior: &LatentGaussian, noise: &[f64]) -> Result<Vec<f64>, NpError> {
    if noise.len() != posterior.mean.len() {
        return Err(NpError::DimensionMismatch { expected: posterior.mean.len(), got: noise.len() });
    }
    Ok(posterior
        .mean
        .iter()
        .zip(&posterior.stddev)
        .zip(noise)
        .map(|((&m, &s), &e)| m + s * e)
        .collect())
}

/// KL(q || p) for diagonal Gaussians, in closed form.
pub fn kl_diag_gaussians(q: &LatentGaussian, p: &LatentGaussian) -> Result<f64, NpError> {
    if q.mean.len() != p.mean.len() {
        return Err(NpError::DimensionMismatch { expected: q.mean.len(), got: p.mean.len() });
    }
    let mut kl = 0.0;
    for i in 0..q.mean.len() {
        let (qs, ps) = (q.stddev[i], p.stddev[i]);
        if !(qs > 0.0) || !(ps > 0.0) {
            return Err(NpError::NonPositiveStddev);
        }
        let dm = q.mean[i] - p.mean[i];
        kl += (ps / qs).ln() + (qs * qs + dm * dm) / (2.0 * ps * ps) - 0.5;
    }
    Ok(kl)
}

/// Loss value plus the gradients for all four networks.
#[derive(Debug, Clone)]
pub struct ElboResult {
    pub loss: f64,
    pub negative_log_likelihood: f64,
    pub kl: f64,
    pub gradients: NpGradients,
}

/// Reusable buffers for the ELBO forward/backward pass.
#[derive(Debug, Default)]
struct ElboScratch {
    det_caches: Vec<MlpCache>,
    prob_ctx_caches: Vec<MlpCache>,
    prob_tgt_caches: Vec<MlpCache>,
    dec_caches: Vec<MlpCache>,
    head_ctx: MlpCache,
    head_tgt: MlpCache,
    enc_input: Vec<f64>,
    dec_input: Vec<f64>,
    dec_input_grad: Vec<f64>,
    order: Vec<usize>,
}

fn pool_get(pool: &mut Vec<MlpCache>, n: usize) -> &mut [MlpCache] {
    if pool.len() < n {
        pool.resize_with(n, MlpCache::new);
    }
    &mut pool[..n]
}

/// Forward a subset of points through an encoder, caching activations per
/// point (cache slots follow the canonical order of the subset).
fn aggregate_forward(
    encoder: &MlpParameters,
    points: &[Point],
    subset: &[usize],
    caches: &mut [MlpCache],
    enc_input: &mut Vec<f64>,
    order: &mut Vec<usize>,
) -> Result<Vec<f64>, NpError> {
    let in_dim = encoder.spec().input_dim;
    let out_dim = encoder.spec().output_dim;
    enc_input.resize(in_dim, 0.0);
    canonical_order(points, subset, order);
    let mut pooled = vec![0.0; out_dim];
    for (slot, &i) in order.iter().enumerate() {
        let (x, y) = &points[i];
        if x.len() + 1 != in_dim {
            return Err(NpError::DimensionMismatch { expected: in_dim, got: x.len() + 1 });
        }
        enc_input[..x.len()].copy_from_slice(x);
        enc_input[x.len()] = *y;
        forward_cached(encoder, enc_input, &mut caches[slot]);
        for (s, o) in pooled.iter_mut().zip(caches[slot].output()) {
            *s += o;
        }
    }
    let n = subset.len() as f64;
    for s in &mut pooled {
        *s /= n;
    }
    Ok(pooled)
}

/// Backward through a pooled encoder pass: every point receives the pooled
/// gradient divided by the set size.
fn aggregate_backward(
    encoder: &MlpParameters,
    caches: &mut [MlpCache],
    pooled_grad: &[f64],
    n_points: usize,
    param_grad: &mut [f64],
    scaled: &mut Vec<f64>,
) {
    scaled.clear();
    scaled.extend(pooled_grad.iter().map(|g| g / n_points as f64));
    for cache in caches.iter_mut().take(n_points) {
        backward_cached(encoder, cache, scaled, param_grad, None);
    }
}

fn elbo_internal(
    networks: &NpNetworks,
    points: &[Point],
    context_idx: &[usize],
    target_idx: &[usize],
    noise: &[f64],
    variance_floor: f64,
    scratch: &mut ElboScratch,
    grads: &mut NpGradients,
) -> Result<(f64, f64, f64), NpError> {
    if context_idx.is_empty() || target_idx.is_empty() {
        return Err(NpError::EmptyPointSet);
    }
    let z_dim = networks.latent_head.spec().output_dim / 2;
    if noise.len() != z_dim {
        return Err(NpError::DimensionMismatch { expected: z_dim, got: noise.len() });
    }
    let r_dim = networks.deterministic_encoder.spec().output_dim;
    let x_dim = networks.deterministic_encoder.spec().input_dim - 1;
    let (n_c, n_t) = (context_idx.len(), target_idx.len());

    // --- forward ---
    let mut enc_input = std::mem::take(&mut scratch.enc_input);
    let mut order = std::mem::take(&mut scratch.order);
    let r_ctx = aggregate_forward(
        &networks.deterministic_encoder,
        points,
        context_idx,
        pool_get(&mut scratch.det_caches, n_c),
        &mut enc_input,
        &mut order,
    )?;
    let s_ctx = aggregate_forward(
        &networks.probabilistic_encoder,
        points,
        context_idx,
        pool_get(&mut scratch.prob_ctx_caches, n_c),
        &mut enc_input,
        &mut order,
    )?;
    let s_tgt = aggregate_forward(
        &networks.probabilistic_encoder,
        points,
        target_idx,
        pool_get(&mut scratch.prob_tgt_caches, n_t),
        &mut enc_input,
        &mut order,
    )?;
    scratch.enc_input = enc_input;
    scratch.order = order;

    forward_cached(&networks.latent_head, &s_ctx, &mut scratch.head_ctx);
    let (mu_c, raw_c): (Vec<f64>, Vec<f64>) = {
        let out = scratch.head_ctx.output();
        (out[..z_dim].to_vec(), out[z_dim..].to_vec())
    };
    forward_cached(&networks.latent_head, &s_tgt, &mut scratch.head_tgt);
    let (mu_t, raw_t): (Vec<f64>, Vec<f64>) = {
        let out = scratch.head_tgt.output();
        (out[..z_dim].to_vec(), out[z_dim..].to_vec())
    };
    let sd_c: Vec<f64> = raw_c.iter().map(|&u| variance_floor + softplus(u)).collect();
    let sd_t: Vec<f64> = raw_t.iter().map(|&u| variance_floor + softplus(u)).collect();

    // z sampled from the target posterior (reparameterized)
    let z: Vec<f64> =
        mu_t.iter().zip(&sd_t).zip(noise).map(|((&m, &s), &e)| m + s * e).collect();

    // decoder over target points
    let dec_in_dim = x_dim + r_dim + z_dim;
    scratch.dec_input.resize(dec_in_dim, 0.0);
    scratch.dec_input[x_dim..x_dim + r_dim].copy_from_slice(&r_ctx);
    scratch.dec_input[x_dim + r_dim..].copy_from_slice(&z);
    pool_get(&mut scratch.dec_caches, n_t);
    let mut nll = 0.0;
    let mut dec_out: Vec<(f64, f64, f64)> = Vec::with_capacity(n_t); // (m, raw_s, s)
    for (slot, &i) in target_idx.iter().enumerate() {
        let (x, y) = &points[i];
        scratch.dec_input[..x_dim].copy_from_slice(x);
        forward_cached(&networks.decoder, &scratch.dec_input, &mut scratch.dec_caches[slot]);
        let out = scratch.dec_caches[slot].output();
        let (m, raw_s) = (out[0], out[1]);
        let s = variance_floor + softplus(raw_s);
        let resid = y - m;
        nll += 0.5 * LN_2PI + s.ln() + resid * resid / (2.0 * s * s);
        dec_out.push((m, raw_s, s));
    }

    // KL(q_target || q_context)
    let mut kl = 0.0;
    for j in 0..z_dim {
        let dm = mu_t[j] - mu_c[j];
        kl += (sd_c[j] / sd_t[j]).ln() + (sd_t[j] * sd_t[j] + dm * dm) / (2.0 * sd_c[j] * sd_c[j])
            - 0.5;
    }
    let loss = nll + kl;
    if !loss.is_finite() {
        return Err(NpError::NonFiniteLoss);
    }

    // --- backward ---
    let mut d_r = vec![0.0; r_dim];
    let mut d_z = vec![0.0; z_dim];
    scratch.dec_input_grad.resize(dec_in_dim, 0.0);
    let mut dec_input_grad = std::mem::take(&mut scratch.dec_input_grad);
    for (slot, &i) in target_idx.iter().enumerate() {
        let (m, raw_s, s) = dec_out[slot];
        let resid = points[i].1 - m;
        let d_m = -resid / (s * s);
        let d_s = 1.0 / s - resid * resid / (s * s * s);
        let d_raw = d_s * sigmoid(raw_s);
        backward_cached(
            &networks.decoder,
            &mut scratch.dec_caches[slot],
            &[d_m, d_raw],
            &mut grads.decoder,
            Some(&mut dec_input_grad),
        );
        for (dr, g) in d_r.iter_mut().zip(&dec_input_grad[x_dim..x_dim + r_dim]) {
            *dr += g;
        }
        for (dz, g) in d_z.iter_mut().zip(&dec_input_grad[x_dim + r_dim..]) {
            *dz += g;
        }
    }
    scratch.dec_input_grad = dec_input_grad;

    // KL gradients w.r.t. both posteriors
    let mut d_mu_t = vec![0.0; z_dim];
    let mut d_sd_t = vec![0.0; z_dim];
    let mut d_mu_c = vec![0.0; z_dim];
    let mut d_sd_c = vec![0.0; z_dim];
    for j in 0..z_dim {
        let dm = mu_t[j] - mu_c[j];
        let c2 = sd_c[j] * sd_c[j];
        d_mu_t[j] = dm / c2;
        d_mu_c[j] = -dm / c2;
        d_sd_t[j] = -1.0 / sd_t[j] + sd_t[j] / c2;
        d_sd_c[j] = 1.0 / sd_c[j] - (sd_t[j] * sd_t[j] + dm * dm) / (c2 * sd_c[j]);
    }
    // reparameterization: z = mu_t + sd_t .* noise
    for j in 0..z_dim {
        d_mu_t[j] += d_z[j];
        d_sd_t[j] += d_z[j] * noise[j];
    }

    // latent head, target side then context side
    let mut d_s_tgt = vec![0.0; r_dim];
    let mut d_s_ctx = vec![0.0; r_dim];
    let mut head_out_grad = vec![0.0; 2 * z_dim];
    for j in 0..z_dim {
        head_out_grad[j] = d_mu_t[j];
        head_out_grad[z_dim + j] = d_sd_t[j] * sigmoid(raw_t[j]);
    }
    backward_cached(
        &networks.latent_head,
        &mut scratch.head_tgt,
        &head_out_grad,
        &mut grads.latent_head,
        Some(&mut d_s_tgt),
    );
    for j in 0..z_dim {
        head_out_grad[j] = d_mu_c[j];
        head_out_grad[z_dim + j] = d_sd_c[j] * sigmoid(raw_c[j]);
    }
    backward_cached(
        &networks.latent_head,
        &mut scratch.head_ctx,
        &head_out_grad,
        &mut grads.latent_head,
        Some(&mut d_s_ctx),
    );

    // encoders
    let mut scaled = Vec::with_capacity(r_dim);
    aggregate_backward(
        &networks.probabilistic_encoder,
        &mut scratch.prob_tgt_caches,
        &d_s_tgt,
        n_t,
        &mut grads.probabilistic_encoder,
        &mut scaled,
    );
    aggregate_backward(
        &networks.probabilistic_encoder,
        &mut scratch.prob_ctx_caches,
        &d_s_ctx,
        n_c,
        &mut grads.probabilistic_encoder,
        &mut scaled,
    );
    aggregate_backward(
        &networks.deterministic_encoder,
        &mut scratch.det_caches,
        &d_r,
        n_c,
        &mut grads.deterministic_encoder,
        &mut scaled,
    );

    Ok((loss, nll, kl))
}

/// Modified-ELBO loss over a context/target split with frozen
/// reparameterization noise, plus exact gradients for all four networks.
pub fn elbo_loss(
    networks: &NpNetworks,
    context: &[Point],
    target: &[Point],
    noise: &[f64],
    variance_floor: f64,
) -> Result<ElboResult, NpError> {
    let points: Vec<Point> = context.iter().chain(target).cloned().collect();
    let context_idx: Vec<usize> = (0..context.len()).collect();
    let target_idx: Vec<usize> = (context.len()..points.len()).collect();
    let mut scratch = ElboScratch::default();
    let mut grads = NpGradients::zeros_like(networks);
    let (loss, nll, kl) = elbo_internal(
        networks,
        &points,
        &context_idx,
        &target_idx,
        noise,
        variance_floor,
        &mut scratch,
        &mut grads,
    )?;
    Ok(ElboResult { loss, negative_log_likelihood: nll, kl, gradients: grads })
}

/// Immutable predictive state captured at the end of a fit.
///
/// The decoder's first layer splits as W1 [x; r; z] + b1; the (r, z) part is
/// fixed per latent draw, so its contribution is precomputed once.
#[derive(Debug, Clone)]
pub struct NpFittedState {
    decoder: MlpParameters,
    r_context: Vec<f64>,
    posterior: LatentGaussian,
    latent_draws: Vec<Vec<f64>>,
    first_layer_consts: Vec<Vec<f64>>,
    scaler: YScaler,
    bounds: Bounds,
    input_dim: usize,
    variance_floor: f64,
}

impl NpFittedState {
    fn new(
        decoder: MlpParameters,
        r_context: Vec<f64>,
        posterior: LatentGaussian,
        latent_draws: Vec<Vec<f64>>,
        scaler: YScaler,
        bounds: Bounds,
        input_dim: usize,
        variance_floor: f64,
    ) -> Self {
        let (fan_in, fan_out, w, b) = decoder.layer_slices(0);
        let first_layer_consts = latent_draws
            .iter()
            .map(|z| {
                (0..fan_out)
                    .map(|row| {
                        let tail = &w[row * fan_in + input_dim..(row + 1) * fan_in];
                        let r_part = crate::linalg::dot(&tail[..r_context.len()], &r_context);
                        let z_part = crate::linalg::dot(&tail[r_context.len()..], z);
                        r_part + z_part + b[row]
                    })
                    .collect()
            })
            .collect();
        NpFittedState {
            decoder,
            r_context,
            posterior,
            latent_draws,
            first_layer_consts,
            scaler,
            bounds,
            input_dim,
            variance_floor,
        }
    }

    pub fn posterior(&self) -> &LatentGaussian {
        &self.posterior
    }

    pub fn representation(&self) -> &[f64] {
        &self.r_context
    }

    /// Decoder (mean, stddev) at normalized input, standardized units, for
    /// one latent draw. `h` and `h_next` are layer scratch buffers.
    fn decode_standardized(&self, xn: &[f64], draw: usize, h: &mut Vec<f64>, h_next: &mut Vec<f64>) -> (f64, f64) {
        let act = self.decoder.spec().activation;
        let n_layers = self.decoder.n_layers();
        let (fan_in, fan_out, w, _) = self.decoder.layer_slices(0);
        let consts = &self.first_layer_consts[draw];
        h.clear();
        for row in 0..fan_out {
            let head = &w[row * fan_in..row * fan_in + self.input_dim];
            let pre = crate::linalg::dot(head, xn) + consts[row];
            h.push(if n_layers > 1 { act.apply(pre) } else { pre });
        }
        for l in 1..n_layers {
            let (fan_in, fan_out, w, b) = self.decoder.layer_slices(l);
            let is_hidden = l + 1 < n_layers;
            h_next.clear();
            for row in 0..fan_out {
                let pre = crate::linalg::dot(&w[row * fan_in..(row + 1) * fan_in], h) + b[row];
                h_next.push(if is_hidden { act.apply(pre) } else { pre });
            }
            std::mem::swap(h, h_next);
        }
        (h[0], self.variance_floor + softplus(h[1]))
    }

    fn predict_with_buffers(
        &self,
        x: &[f64],
        h: &mut Vec<f64>,
        h_next: &mut Vec<f64>,
    ) -> Result<PredictiveDistribution, SurrogateError> {
        if x.len() != self.input_dim {
            return Err(SurrogateError::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let xn = self.bounds.normalize(x);
        let k = self.latent_draws.len() as f64;
        let mut mean_acc = 0.0;
        let mut second_moment = 0.0;
        for draw in 0..self.latent_draws.len() {
            let (m, s) = self.decode_standardized(&xn, draw, h, h_next);
            mean_acc += m;
            second_moment += s * s + m * m;
        }
        let mean_s = mean_acc / k;
        let var_s = (second_moment / k - mean_s * mean_s).max(0.0);
        let stddev_s = var_s.sqrt().max(self.variance_floor);
        Ok(PredictiveDistribution {
            mean: self.scaler.destandardize_mean(mean_s),
            stddev: self.scaler.destandardize_stddev(stddev_s),
        })
    }
}

/// Moment-matched mixture predictive over the stored latent draws.
pub fn np_predict(state: &NpFittedState, x: &[f64]) -> Result<PredictiveDistribution, SurrogateError> {
    let mut h = Vec::new();
    let mut h_next = Vec::new();
    state.predict_with_buffers(x, &mut h, &mut h_next)
}

/// Neural-process surrogate with warm-start training across fits.
#[derive(Debug)]
pub struct NpSurrogate {
    config: NpConfig,
    input_dim: usize,
    networks: NpNetworks,
    adam: [AdamState; 4],
    step_count: usize,
    rng: ChaCha8Rng,
    scratch: ElboScratch,
    grads: NpGradients,
    state: Option<NpFittedState>,
    loss_trace: Vec<f64>,
}

impl NpSurrogate {
    pub fn new(input_dim: usize, config: NpConfig) -> Result<Self, SurrogateError> {
        config.validate()?;
        if input_dim == 0 {
            return Err(SurrogateError::InvalidConfig("input_dim must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let networks = NpNetworks::init(input_dim, &config, &mut rng);
        let adam = [
            AdamState::new(networks.deterministic_encoder.len()),
            AdamState::new(networks.probabilistic_encoder.len()),
            AdamState::new(networks.latent_head.len()),
            AdamState::new(networks.decoder.len()),
        ];
        let grads = NpGradients::zeros_like(&networks);
        Ok(NpSurrogate {
            config,
            input_dim,
            networks,
            adam,
            step_count: 0,
            rng,
            scratch: ElboScratch::default(),
            grads,
            state: None,
            loss_trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &NpConfig {
        &self.config
    }

    pub fn networks(&self) -> &NpNetworks {
        &self.networks
    }

    pub fn fitted(&self) -> Option<&NpFittedState> {
        self.state.as_ref()
    }

    /// Per-step losses recorded during the most recent fit.
    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    fn train(&mut self, points: &[Point]) -> Result<(), SurrogateError> {
        let n = points.len();
        let (f_lo, f_hi) = self.config.context_fraction_range;
        let mut indices: Vec<usize> = (0..n).collect();
        let mut noise = vec![0.0; self.config.z_dim];
        let mut skipped = 0usize;
        self.loss_trace.clear();
        for _ in 0..self.config.train_steps_per_fit {
            let frac = self.rng.gen_range(f_lo..=f_hi);
            let n_c = ((frac * n as f64).round() as usize).clamp(1, n - 1);
            indices.shuffle(&mut self.rng);
            let (context_idx, target_idx) = indices.split_at(n_c);
            for e in &mut noise {
                *e = self.rng.sample(StandardNormal);
            }
            self.grads.clear();
            let step = elbo_internal(
                &self.networks,
                points,
                context_idx,
                target_idx,
                &noise,
                self.config.variance_floor,
                &mut self.scratch,
                &mut self.grads,
            );
            let ok = match step {
                Ok((loss, _, _)) if loss.is_finite() && self.grads.all_finite() => {
                    self.loss_trace.push(loss);
                    true
                }
                Ok(_) | Err(NpError::NonFiniteLoss) => false,
                Err(e) => {
                    return Err(SurrogateError::InvalidConfig(format!(
                        "ELBO step failed: {e}"
                    )))
                }
            };
            if !ok {
                skipped += 1;
                if skipped > 50 {
                    return Err(SurrogateError::TrainingDiverged { skipped });
                }
                continue;
            }
            skipped = 0;
            self.step_count += 1;
            let lr = self.config.learning_rate;
            let nets = [
                (&mut self.networks.deterministic_encoder, &self.grads.deterministic_encoder),
                (&mut self.networks.probabilistic_encoder, &self.grads.probabilistic_encoder),
                (&mut self.networks.latent_head, &self.grads.latent_head),
                (&mut self.networks.decoder, &self.grads.decoder),
            ];
            for (i, (net, grad)) in nets.into_iter().enumerate() {
                adam_step(net, grad, &mut self.adam[i], self.step_count, lr)
                    .map_err(|e| SurrogateError::InvalidConfig(format!("adam: {e}")))?;
            }
        }
        Ok(())
    }
}

impl Surrogate for NpSurrogate {
    fn fit(&mut self, data: &Dataset) -> Result<(), SurrogateError> {
        if data.len() < 2 {
            return Err(SurrogateError::DatasetTooSmall { need: 2, got: data.len() });
        }
        if data.dim() != self.input_dim {
            return Err(SurrogateError::DimensionMismatch {
                expected: self.input_dim,
                got: data.dim(),
            });
        }
        let (xs, ys, scaler) = normalized_training_data(data);
        let points: Vec<Point> = xs.into_iter().zip(ys).collect();
        self.train(&points)?;

        // inference conditions on every observation
        let r_context = encode_aggregate(&self.networks.deterministic_encoder, &points)
            .map_err(|_| SurrogateError::EmptyDataset)?;
        let posterior = latent_posterior(&self.networks, &points, self.config.variance_floor)
            .map_err(|_| SurrogateError::EmptyDataset)?;
        let mut latent_draws = Vec::with_capacity(self.config.latent_samples_inference);
        for _ in 0..self.config.latent_samples_inference {
            let noise: Vec<f64> =
                (0..self.config.z_dim).map(|_| self.rng.sample(StandardNormal)).collect();
            latent_draws.push(sample_latent(&posterior, &noise).expect("dims agree"));
        }
        self.state = Some(NpFittedState::new(
            self.networks.decoder.clone(),
            r_context,
            posterior,
            latent_draws,
            scaler,
            data.bounds().clone(),
            self.input_dim,
            self.config.variance_floor,
        ));
        Ok(())
    }

    fn predict(&self, x: &[f64]) -> Result<PredictiveDistribution, SurrogateError> {
        let state = self.state.as_ref().ok_or(SurrogateError::NotFitted)?;
        np_predict(state, x)
    }

    fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<PredictiveDistribution>, SurrogateError> {
        let state = self.state.as_ref().ok_or(SurrogateError::NotFitted)?;
        let mut h = Vec::new();
        let mut h_next = Vec::new();
        xs.iter().map(|x| state.predict_with_buffers(x, &mut h, &mut h_next)).collect()
    }
}

/// One-shot fit: fresh networks, `config.train_steps_per_fit` steps.
pub fn np_fit(data: &Dataset, config: &NpConfig) -> Result<NpSurrogate, SurrogateError> {
    let mut surrogate = NpSurrogate::new(data.dim(), config.clone())?;
    surrogate.fit(data)?;
    Ok(surrogate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::mlp_forward;

    fn tiny_config(seed: u64) -> NpConfig {
        NpConfig {
            r_dim: 2,
            z_dim: 2,
            hidden: vec![4],
            latent_hidden: vec![3],
            train_steps_per_fit: 50,
            learning_rate: 1e-2,
            seed,
            ..Default::default()
        }
    }

    fn random_networks(input_dim: usize, config: &NpConfig, seed: u64) -> NpNetworks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NpNetworks::init(input_dim, config, &mut rng)
    }

    fn random_points(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
        (0..n)
            .map(|_| ((0..d).map(|_| rng.gen_range(0.0..1.0)).collect(), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn aggregate_of_single_point_is_its_encoding() {
        let cfg = tiny_config(0);
        let nets = random_networks(1, &cfg, 1);
        let p: Point = (vec![0.3], 0.7);
        let agg = encode_aggregate(&nets.deterministic_encoder, &[p.clone()]).unwrap();
        let direct = mlp_forward(&nets.deterministic_encoder, &[0.3, 0.7]).unwrap();
        assert_eq!(agg, direct);
    }

    #[test]
    fn aggregate_of_duplicated_point_matches_single() {
        let cfg = tiny_config(0);
        let nets = random_networks(1, &cfg, 2);
        let p: Point = (vec![0.4], -0.2);
        let one = encode_aggregate(&nets.deterministic_encoder, &[p.clone()]).unwrap();
        let two = encode_aggregate(&nets.deterministic_encoder, &[p.clone(), p]).unwrap();
        for (a, b) in one.iter().zip(&two) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn aggregate_is_bitwise_permutation_invariant() {
        let cfg = tiny_config(0);
        let nets = random_networks(2, &cfg, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points = random_points(5, 2, &mut rng);
        let base = encode_aggregate(&nets.probabilistic_encoder, &points).unwrap();
        let permutations =
            [[4usize, 2, 0, 3, 1], [1, 0, 3, 2, 4], [3, 4, 1, 0, 2], [2, 3, 4, 1, 0]];
        for perm in permutations {
            let shuffled: Vec<Point> = perm.iter().map(|&i| points[i].clone()).collect();
            let out = encode_aggregate(&nets.probabilistic_encoder, &shuffled).unwrap();
            assert_eq!(base, out, "aggregation must not depend on point order");
        }
    }

    #[test]
    fn aggregate_rejects_empty_set() {
        let cfg = tiny_config(0);
        let nets = random_networks(1, &cfg, 4);
        assert!(matches!(
            encode_aggregate(&nets.deterministic_encoder, &[]),
            Err(NpError::EmptyPointSet)
        ));
    }

    #[test]
    fn zero_weight_posterior_is_floor_plus_ln2() {
        let cfg = tiny_config(0);
        let nets = NpNetworks {
            deterministic_encoder: MlpParameters::zeros(
                MlpSpec::new(2, cfg.hidden.clone(), cfg.r_dim, Activation::Relu).unwrap(),
            ),
            probabilistic_encoder: MlpParameters::zeros(
                MlpSpec::new(2, cfg.hidden.clone(), cfg.r_dim, Activation::Relu).unwrap(),
            ),
            latent_head: MlpParameters::zeros(
                MlpSpec::new(cfg.r_dim, cfg.latent_hidden.clone(), 2 * cfg.z_dim, Activation::Relu)
                    .unwrap(),
            ),
            decoder: MlpParameters::zeros(
                MlpSpec::new(1 + cfg.r_dim + cfg.z_dim, cfg.hidden.clone(), 2, Activation::Relu)
                    .unwrap(),
            ),
        };
        let q = latent_posterior(&nets, &[(vec![0.5], 0.1)], 1e-3).unwrap();
        let expected = 1e-3 + std::f64::consts::LN_2;
        for (m, s) in q.mean.iter().zip(&q.stddev) {
            assert_eq!(*m, 0.0);
            assert!((s - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn posterior_stddev_always_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let cfg = tiny_config(0);
        for trial in 0..1000 {
            let nets = random_networks(1, &cfg, trial);
            let points = random_points(rng.gen_range(1..6), 1, &mut rng);
            let q = latent_posterior(&nets, &points, 1e-3).unwrap();
            assert!(q.stddev.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn identical_point_multisets_give_identical_posteriors() {
        let cfg = tiny_config(0);
        let nets = random_networks(1, &cfg, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let points = random_points(4, 1, &mut rng);
        let a = latent_posterior(&nets, &points, 1e-3).unwrap();
        let b = latent_posterior(&nets, &points, 1e-3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_latent_zero_noise_returns_mean() {
        let q = LatentGaussian { mean: vec![0.5, -1.0], stddev: vec![0.3, 2.0] };
        let z = sample_latent(&q, &[0.0, 0.0]).unwrap();
        assert_eq!(z, q.mean);
    }

    #[test]
    fn sample_latent_empirical_moments() {
        let q = LatentGaussian { mean: vec![1.5, -0.7], stddev: vec![0.8, 2.5] };
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sum_sq = [0.0; 2];
        for _ in 0..n {
            let noise: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let z = sample_latent(&q, &noise).unwrap();
            for j in 0..2 {
                sum[j] += z[j];
                sum_sq[j] += z[j] * z[j];
            }
        }
        for j in 0..2 {
            let mean = sum[j] / n as f64;
            let std = (sum_sq[j] / n as f64 - mean * mean).sqrt();
            assert!((mean - q.mean[j]).abs() < 0.02 * q.stddev[j].max(q.mean[j].abs()));
            assert!((std / q.stddev[j] - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let q = LatentGaussian { mean: vec![0.3, -0.4], stddev: vec![0.9, 1.7] };
        assert_eq!(kl_diag_gaussians(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn kl_unit_mean_shift_is_half() {
        let q = LatentGaussian { mean: vec![0.0], stddev: vec![1.0] };
        let p = LatentGaussian { mean: vec![1.0], stddev: vec![1.0] };
        assert!((kl_diag_gaussians(&q, &p).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_wide_versus_standard() {
        // KL(N(0,4) || N(0,1)) = (4 - 1 - ln 4) / 2
        let q = LatentGaussian { mean: vec![0.0], stddev: vec![2.0] };
        let p = LatentGaussian { mean: vec![0.0], stddev: vec![1.0] };
        let expected = 0.5 * (4.0 - 1.0 - 4.0f64.ln());
        assert!((kl_diag_gaussians(&q, &p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn kl_is_non_negative_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        for _ in 0..10_000 {
            let dim = rng.gen_range(1..5);
            let draw = |rng: &mut ChaCha8Rng| LatentGaussian {
                mean: (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect(),
                stddev: (0..dim).map(|_| rng.gen_range(0.05..4.0)).collect(),
            };
            let q = draw(&mut rng);
            let p = draw(&mut rng);
            assert!(kl_diag_gaussians(&q, &p).unwrap() >= 0.0);
        }
    }

    #[test]
    fn kl_rejects_non_positive_stddev() {
        let q = LatentGaussian { mean: vec![0.0], stddev: vec![0.0] };
        let p = LatentGaussian { mean: vec![0.0], stddev: vec![1.0] };
        assert!(matches!(kl_diag_gaussians(&q, &p), Err(NpError::NonPositiveStddev)));
    }

    #[test]
    fn elbo_with_context_equal_target_has_zero_kl() {
        let cfg = tiny_config(0);
        let nets = random_networks(1, &cfg, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let points = random_points(4, 1, &mut rng);
        let noise = vec![0.3, -0.9];
        let res = elbo_loss(&nets, &points, &points, &noise, 1e-3).unwrap();
        assert!(res.kl.abs() < 1e-12);
        assert!((res.loss - res.negative_log_likelihood).abs() < 1e-12);
    }

    #[test]
    fn elbo_stays_finite_with_huge_decoder_stddev() {
        let cfg = tiny_config(0);
        let mut nets = random_networks(1, &cfg, 22);
        // push the decoder's raw-stddev output bias very high
        let n = nets.decoder.len();
        nets.decoder.values_mut()[n - 1] = 40.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points = random_points(5, 1, &mut rng);
        let (context, target) = points.split_at(2);
        let res = elbo_loss(&nets, context, target, &[0.1, 0.2], 1e-3).unwrap();
        assert!(res.loss.is_finite());
        // log-likelihood term collapses to sum(log stddev) + n_t*log sqrt(2 pi);
        // the residual term is ~resid^2/(2*s^2) with s ~ 40
        let r = encode_aggregate(&nets.deterministic_encoder, context).unwrap();
        let q = latent_posterior(&nets, target, 1e-3).unwrap();
        let z = sample_latent(&q, &[0.1, 0.2]).unwrap();
        let mut expected = 0.0;
        for (x, _) in target {
            let mut input = x.clone();
            input.extend_from_slice(&r);
            input.extend_from_slice(&z);
            let out = mlp_forward(&nets.decoder, &input).unwrap();
            let s = 1e-3 + softplus(out[1]);
            assert!(s > 30.0, "bias push should make stddev huge, got {s}");
            expected += 0.5 * LN_2PI + s.ln();
        }
        assert!((res.negative_log_likelihood - expected).abs() < 0.01);
    }

    /// Finite-difference oracle for the full ELBO over every parameter of
    /// all four networks. Uses tanh so the loss is smooth.
    fn elbo_finite_difference_case(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = NpConfig {
            r_dim: 2,
            z_dim: 2,
            hidden: vec![rng.gen_range(2..5)],
            latent_hidden: vec![rng.gen_range(2..4)],
            ..Default::default()
        };
        let d = rng.gen_range(1..3);
        let mut nets = {
            let mk = |input, hidden: &Vec<usize>, output, rng: &mut ChaCha8Rng| {
                MlpParameters::glorot(
                    MlpSpec::new(input, hidden.clone(), output, Activation::Tanh).unwrap(),
                    rng,
                )
            };
            NpNetworks {
                deterministic_encoder: mk(d + 1, &cfg.hidden, cfg.r_dim, &mut rng),
                probabilistic_encoder: mk(d + 1, &cfg.hidden, cfg.r_dim, &mut rng),
                latent_head: mk(cfg.r_dim, &cfg.latent_hidden, 2 * cfg.z_dim, &mut rng),
                decoder: mk(d + cfg.r_dim + cfg.z_dim, &cfg.hidden, 2, &mut rng),
            }
        };
        let context = random_points(3, d, &mut rng);
        let target = random_points(3, d, &mut rng);
        let noise: Vec<f64> = (0..cfg.z_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let floor = 1e-3;

        let base = elbo_loss(&nets, &context, &target, &noise, floor).unwrap();
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
        fn net(n: &mut NpNetworks, which: usize) -> &mut MlpParameters {
            match which {
                0 => &mut n.deterministic_encoder,
                1 => &mut n.probabilistic_encoder,
                2 => &mut n.latent_head,
                _ => &mut n.decoder,
            }
        }
        let check = |which: usize, analytic: &[f64], nets: &mut NpNetworks| {
            for i in 0..analytic.len() {
                net(nets, which).values_mut()[i] += h;
                let up = elbo_loss(nets, &context, &target, &noise, floor).unwrap().loss;
                net(nets, which).values_mut()[i] -= 2.0 * h;
                let down = elbo_loss(nets, &context, &target, &noise, floor).unwrap().loss;
                net(nets, which).values_mut()[i] += h;
                let fd = (up - down) / (2.0 * h);
                assert!(
                    rel(fd, analytic[i]) < 1e-4,
                    "seed {seed} net {which} param {i}: fd {fd} vs ad {}",
                    analytic[i]
                );
            }
        };
        check(0, &base.gradients.deterministic_encoder.clone(), &mut nets);
        check(1, &base.gradients.probabilistic_encoder.clone(), &mut nets);
        check(2, &base.gradients.latent_head.clone(), &mut nets);
        check(3, &base.gradients.decoder.clone(), &mut nets);
    }

    #[test]
    fn elbo_gradients_match_finite_differences() {
        for seed in 0..20 {
            elbo_finite_difference_case(1000 + seed);
        }
    }

    fn sine_dataset(n: usize) -> Dataset {
        let bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let mut data = Dataset::new(bounds);
        for i in 0..n {
            let x = i as f64 / (n - 1) as f64;
            data.push(vec![x], (2.0 * std::f64::consts::PI * x).sin()).unwrap();
        }
        data
    }

    #[test]
    fn training_reduces_loss_on_sine_data() {
        let data = sine_dataset(64);
        let mut wins = 0;
        for seed in 0..10 {
            let cfg = NpConfig { train_steps_per_fit: 500, seed, ..Default::default() };
            let surrogate = np_fit(&data, &cfg).unwrap();
            let trace = surrogate.loss_trace();
            let first: f64 = trace[..10].iter().sum::<f64>() / 10.0;
            let last: f64 = trace[trace.len() - 10..].iter().sum::<f64>() / 10.0;
            if last < first {
                wins += 1;
            }
        }
        assert!(wins >= 9, "loss decreased in only {wins}/10 seeds");
    }

    #[test]
    fn minimum_dataset_of_two_points_trains() {
        let bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let mut data = Dataset::new(bounds);
        data.push(vec![0.2], 0.0).unwrap();
        data.push(vec![0.8], 1.0).unwrap();
        let cfg = tiny_config(7);
        let surrogate = np_fit(&data, &cfg).unwrap();
        assert!(surrogate.predict(&[0.5]).unwrap().mean.is_finite());
    }

    #[test]
    fn single_point_dataset_is_rejected() {
        let bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let mut data = Dataset::new(bounds);
        data.push(vec![0.2], 0.0).unwrap();
        assert!(matches!(
            np_fit(&data, &tiny_config(0)),
            Err(SurrogateError::DatasetTooSmall { .. })
        ));
    }

    #[test]
    fn identical_seed_gives_bitwise_identical_parameters() {
        let data = sine_dataset(16);
        let cfg = NpConfig { train_steps_per_fit: 60, seed: 5, ..tiny_config(5) };
        let a = np_fit(&data, &cfg).unwrap();
        let b = np_fit(&data, &cfg).unwrap();
        assert_eq!(a.networks().decoder.values(), b.networks().decoder.values());
        assert_eq!(
            a.networks().probabilistic_encoder.values(),
            b.networks().probabilistic_encoder.values()
        );
        let pa = a.predict(&[0.42]).unwrap();
        let pb = b.predict(&[0.42]).unwrap();
        assert_eq!(pa.mean.to_bits(), pb.mean.to_bits());
        assert_eq!(pa.stddev.to_bits(), pb.stddev.to_bits());
    }

    #[test]
    fn single_frozen_sample_predicts_decoder_mean_at_posterior_mean() {
        let data = sine_dataset(16);
        let cfg = NpConfig { latent_samples_inference: 1, ..tiny_config(3) };
        let fitted = np_fit(&data, &cfg).unwrap();
        let old = fitted.fitted().unwrap();
        // freeze the latent draw at the posterior mean (zero noise)
        let state = &NpFittedState::new(
            old.decoder.clone(),
            old.r_context.clone(),
            old.posterior.clone(),
            vec![old.posterior.mean.clone()],
            old.scaler,
            old.bounds.clone(),
            old.input_dim,
            old.variance_floor,
        );
        let x = 0.37;
        let xn = state.bounds.normalize(&[x]);
        let mut input = Vec::new();
        input.extend_from_slice(&xn);
        input.extend_from_slice(&state.r_context);
        input.extend_from_slice(&state.posterior.mean);
        let direct = mlp_forward(&state.decoder, &input).unwrap();
        let expected_mean = state.scaler.destandardize_mean(direct[0]);
        let p = np_predict(state, &[x]).unwrap();
        assert!((p.mean - expected_mean).abs() < 1e-12);
    }

    #[test]
    fn mixture_variance_dominates_within_sample_variance() {
        let data = sine_dataset(24);
        let cfg = NpConfig { ..tiny_config(11) };
        let surrogate = np_fit(&data, &cfg).unwrap();
        let state = surrogate.fitted().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..200 {
            let x = rng.gen_range(0.0..1.0);
            let xn = state.bounds.normalize(&[x]);
            let mut input = Vec::new();
            input.extend_from_slice(&xn);
            input.extend_from_slice(&state.r_context);
            input.extend_from_slice(&state.posterior.mean); // placeholder tail
            let k = state.latent_draws.len() as f64;
            let mut within = 0.0;
            for z in &state.latent_draws {
                let tail = input.len() - z.len();
                input[tail..].copy_from_slice(z);
                let out = mlp_forward(&state.decoder, &input).unwrap();
                let s = state.variance_floor + softplus(out[1]);
                within += s * s / k;
            }
            let p = np_predict(state, &[x]).unwrap();
            let var_s = (p.stddev / state.scaler.std).powi(2);
            assert!(var_s >= within - 1e-12);
        }
    }

    #[test]
    fn predictive_beats_constant_predictor_on_sine() {
        let data = sine_dataset(64);
        let cfg = NpConfig { train_steps_per_fit: 800, seed: 1, ..Default::default() };
        let surrogate = np_fit(&data, &cfg).unwrap();
        let f = |x: f64| (2.0 * std::f64::consts::PI * x).sin();
        let mean_y: f64 =
            data.observations().iter().map(|o| o.y).sum::<f64>() / data.len() as f64;
        let mut rmse_np = 0.0;
        let mut rmse_const = 0.0;
        for i in 0..101 {
            let x = i as f64 / 100.0;
            let p = surrogate.predict(&[x]).unwrap();
            rmse_np += (p.mean - f(x)).powi(2);
            rmse_const += (mean_y - f(x)).powi(2);
        }
        assert!(
            rmse_np.sqrt() < rmse_const.sqrt(),
            "np rmse {} vs const {}",
            rmse_np.sqrt(),
            rmse_const.sqrt()
        );
    }

    #[test]
    fn predict_is_permutation_invariant_over_observations() {
        let bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let pts: Vec<(f64, f64)> =
            vec![(0.1, 0.4), (0.3, -0.2), (0.55, 0.9), (0.72, 0.1), (0.9, -0.6)];
        let build = |order: &[usize]| {
            let mut data = Dataset::new(bounds.clone());
            for &i in order {
                data.push(vec![pts[i].0], pts[i].1).unwrap();
            }
            data
        };
        let cfg = NpConfig { train_steps_per_fit: 1, ..tiny_config(9) };
        // train one step on the base order, then refit-free predict must be
        // identical for permuted observation lists: compare the inference
        // state built from permuted datasets with frozen networks.
        let base = np_fit(&build(&[0, 1, 2, 3, 4]), &cfg).unwrap();
        let permuted_data = build(&[3, 0, 4, 2, 1]);
        let (xs, ys, _) = normalized_training_data(&permuted_data);
        let points: Vec<Point> = xs.into_iter().zip(ys).collect();
        let r_perm =
            encode_aggregate(&base.networks().deterministic_encoder, &points).unwrap();
        let q_perm =
            latent_posterior(base.networks(), &points, cfg.variance_floor).unwrap();
        let state = base.fitted().unwrap();
        assert_eq!(state.r_context, r_perm);
        assert_eq!(state.posterior, q_perm);
    }

    #[test]
    fn predictive_stddev_respects_floor() {
        // dataset standardized to unit variance keeps the floor visible
        let data = sine_dataset(32);
        let cfg = tiny_config(13);
        let surrogate = np_fit(&data, &cfg).unwrap();
        let state = surrogate.fitted().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..500 {
            let x = rng.gen_range(0.0..1.0);
            let p = surrogate.predict(&[x]).unwrap();
            let stddev_s = p.stddev / state.scaler.std;
            assert!(stddev_s >= cfg.variance_floor - 1e-15);
        }
    }

    #[test]
    fn predict_never_non_finite_inside_bounds() {
        let data = sine_dataset(32);
        let surrogate = np_fit(&data, &tiny_config(17)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let x = rng.gen_range(0.0..1.0);
            let p = surrogate.predict(&[x]).unwrap();
            assert!(p.mean.is_finite() && p.stddev.is_finite());
        }
    }

    #[test]
    fn unfitted_predict_errors() {
        let s = NpSurrogate::new(1, tiny_config(0)).unwrap();
        assert!(matches!(s.predict(&[0.5]), Err(SurrogateError::NotFitted)));
    }

    #[test]
    fn config_validation_rejects_bad_ranges() {
        let mut cfg = NpConfig::default();
        cfg.context_fraction_range = (0.0, 0.5);
        assert!(cfg.validate().is_err());
        cfg.context_fraction_range = (0.5, 1.0);
        assert!(cfg.validate().is_err());
        cfg.context_fraction_range = (0.8, 0.3);
        assert!(cfg.validate().is_err());
        let mut cfg = NpConfig::default();
        cfg.variance_floor = 0.0;
        assert!(cfg.validate().is_err());
    }
}
