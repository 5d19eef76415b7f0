//! Exact Gaussian Process regression with an ARD RBF kernel.
//!
//! Hyperparameters are chosen by seeded random search over the log marginal
//! likelihood; the posterior is computed through a jittered Cholesky
//! factorization of the training kernel matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{cholesky_in_place, dot, solve_lower, SquareMat};
use crate::surrogate::{
    normalized_training_data, Bounds, Dataset, PredictiveDistribution, Surrogate, SurrogateError,
    YScaler,
};

/// RBF kernel parameters over normalized inputs / standardized targets.
#[derive(Debug, Clone, PartialEq)]
pub struct GpHyperparameters {
    /// One length-scale per input dimension (ARD), in normalized-input units.
    pub length_scales: Vec<f64>,
    /// Kernel variance of the standardized targets.
    pub amplitude: f64,
    /// Observation noise variance added to the kernel diagonal.
    pub noise_variance: f64,
}

/// Lower bound kept on the kernel diagonal regardless of the sampled noise.
pub const NOISE_FLOOR: f64 = 1e-8;

impl GpHyperparameters {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        let ok = self.length_scales.iter().all(|&l| l.is_finite() && l > 0.0)
            && self.amplitude.is_finite()
            && self.amplitude > 0.0
            && self.noise_variance.is_finite()
            && self.noise_variance >= NOISE_FLOOR;
        if ok {
            Ok(())
        } else {
            Err(SurrogateError::InvalidConfig(
                "GP hyperparameters must be positive and finite (noise >= 1e-8)".into(),
            ))
        }
    }
}

/// amplitude * exp(-1/2 * sum_i ((a_i - b_i)/l_i)^2)
pub fn rbf_kernel(a: &[f64], b: &[f64], hp: &GpHyperparameters) -> Result<f64, SurrogateError> {
    if a.len() != b.len() || a.len() != hp.length_scales.len() {
        return Err(SurrogateError::DimensionMismatch { expected: hp.length_scales.len(), got: b.len() });
    }
    Ok(rbf_unchecked(a, b, hp))
}

#[inline]
fn rbf_unchecked(a: &[f64], b: &[f64], hp: &GpHyperparameters) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = (a[i] - b[i]) / hp.length_scales[i];
        s += d * d;
    }
    hp.amplitude * (-0.5 * s).exp()
}

/// Posterior state after a fit; immutable, safe for concurrent predicts.
#[derive(Debug, Clone)]
pub struct GpFittedState {
    pub hyperparameters: GpHyperparameters,
    /// Lower Cholesky factor of K + noise*I (standardized targets).
    cholesky_factor: SquareMat,
    /// Solution of (K + noise*I) alpha = y.
    alpha: Vec<f64>,
    x_train: Vec<Vec<f64>>, // normalized
    scaler: YScaler,
    bounds: Bounds,
    /// Extra diagonal jitter that was needed on top of the noise, if any.
    pub jitter: f64,
    pub log_marginal_likelihood: f64,
}

fn kernel_matrix(xs: &[Vec<f64>], hp: &GpHyperparameters, diag_add: f64) -> SquareMat {
    let n = xs.len();
    let mut k = SquareMat::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let v = rbf_unchecked(&xs[i], &xs[j], hp);
            k.set(i, j, v);
            k.set(j, i, v);
        }
        k.set(i, i, k.at(i, i) + diag_add);
    }
    k
}

/// Cholesky with jitter escalation: on failure the jitter is multiplied by
/// ten, up to `max_attempts` tries.
fn cholesky_with_jitter(
    xs: &[Vec<f64>],
    hp: &GpHyperparameters,
    max_attempts: usize,
) -> Result<(SquareMat, f64), SurrogateError> {
    let mut jitter = 0.0;
    for attempt in 0..max_attempts {
        let mut k = kernel_matrix(xs, hp, hp.noise_variance + jitter);
        if cholesky_in_place(&mut k).is_ok() {
            return Ok((k, jitter));
        }
        jitter = if attempt == 0 { NOISE_FLOOR } else { jitter * 10.0 };
    }
    Err(SurrogateError::CholeskyFailure { attempts: max_attempts })
}

fn log_marginal_likelihood(l: &SquareMat, alpha: &[f64], ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let data_fit = -0.5 * dot(ys, alpha);
    let mut log_det_half = 0.0;
    for i in 0..l.n {
        log_det_half += l.at(i, i).ln();
    }
    data_fit - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

fn fit_with_hyperparameters(
    xs: &[Vec<f64>],
    ys: &[f64],
    hp: GpHyperparameters,
) -> Result<(SquareMat, Vec<f64>, f64, f64), SurrogateError> {
    let (l, jitter) = cholesky_with_jitter(xs, &hp, 5)?;
    let v = solve_lower(&l, ys);
    let alpha = crate::linalg::solve_lower_transpose(&l, &v);
    let lml = log_marginal_likelihood(&l, &alpha, ys);
    Ok((l, alpha, jitter, lml))
}

fn sample_log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// Fit a GP by random hyperparameter search over the log marginal likelihood.
///
/// Samples are drawn log-uniformly: length-scales in [1e-2, 10] per dimension,
/// amplitude in [1e-2, 10], noise variance in [1e-6, 1e-1].
pub fn gp_fit(data: &Dataset, search_budget: usize, seed: u64) -> Result<GpFittedState, SurrogateError> {
    if data.is_empty() {
        return Err(SurrogateError::EmptyDataset);
    }
    if search_budget == 0 {
        return Err(SurrogateError::InvalidConfig("search_budget must be >= 1".into()));
    }
    let (xs, ys, scaler) = normalized_training_data(data);
    let d = data.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, GpHyperparameters, SquareMat, Vec<f64>, f64)> = None;
    let mut last_err = SurrogateError::CholeskyFailure { attempts: 5 };
    for _ in 0..search_budget {
        let hp = GpHyperparameters {
            length_scales: (0..d).map(|_| sample_log_uniform(&mut rng, 1e-2, 10.0)).collect(),
            amplitude: sample_log_uniform(&mut rng, 1e-2, 10.0),
            noise_variance: sample_log_uniform(&mut rng, 1e-6, 1e-1),
        };
        match fit_with_hyperparameters(&xs, &ys, hp.clone()) {
            Ok((l, alpha, jitter, lml)) => {
                if best.as_ref().map_or(true, |b| lml > b.0) {
                    best = Some((lml, hp, l, alpha, jitter));
                }
            }
            Err(e) => last_err = e,
        }
    }
    let (lml, hp, l, alpha, jitter) = best.ok_or(last_err)?;
    Ok(GpFittedState {
        hyperparameters: hp,
        cholesky_factor: l,
        alpha,
        x_train: xs,
        scaler,
        bounds: data.bounds().clone(),
        jitter,
        log_marginal_likelihood: lml,
    })
}

/// Fit with fixed hyperparameters (no search); used by tests and diagnostics.
pub fn gp_fit_fixed(data: &Dataset, hp: GpHyperparameters) -> Result<GpFittedState, SurrogateError> {
    if data.is_empty() {
        return Err(SurrogateError::EmptyDataset);
    }
    hp.validate()?;
    let (xs, ys, scaler) = normalized_training_data(data);
    let (l, alpha, jitter, lml) = fit_with_hyperparameters(&xs, &ys, hp.clone())?;
    Ok(GpFittedState {
        hyperparameters: hp,
        cholesky_factor: l,
        alpha,
        x_train: xs,
        scaler,
        bounds: data.bounds().clone(),
        jitter,
        log_marginal_likelihood: lml,
    })
}

/// Posterior mean/stddev at `x` (problem units), de-standardized.
pub fn gp_predict(state: &GpFittedState, x: &[f64]) -> Result<PredictiveDistribution, SurrogateError> {
    if x.len() != state.bounds.dim() {
        return Err(SurrogateError::DimensionMismatch { expected: state.bounds.dim(), got: x.len() });
    }
    let xn = state.bounds.normalize(x);
    let hp = &state.hyperparameters;
    let k: Vec<f64> = state.x_train.iter().map(|xi| rbf_unchecked(&xn, xi, hp)).collect();
    let mean_s = dot(&k, &state.alpha);
    let v = solve_lower(&state.cholesky_factor, &k);
    let var_s = (hp.amplitude - dot(&v, &v) + hp.noise_variance).max(0.0);
    Ok(PredictiveDistribution {
        mean: state.scaler.destandardize_mean(mean_s),
        stddev: state.scaler.destandardize_stddev(var_s.sqrt()),
    })
}

/// GP surrogate with seeded random hyperparameter search.
#[derive(Debug, Clone)]
pub struct GpConfig {
    pub search_budget: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { search_budget: 64, seed: 0 }
    }
}

#[derive(Debug)]
pub struct GpSurrogate {
    config: GpConfig,
    state: Option<GpFittedState>,
}

impl GpSurrogate {
    pub fn new(config: GpConfig) -> Self {
        GpSurrogate { config, state: None }
    }

    pub fn state(&self) -> Option<&GpFittedState> {
        self.state.as_ref()
    }
}

impl Surrogate for GpSurrogate {
    fn fit(&mut self, data: &Dataset) -> Result<(), SurrogateError> {
        let state = gp_fit(data, self.config.search_budget, self.config.seed)?;
        self.state = Some(state);
        Ok(())
    }

    fn predict(&self, x: &[f64]) -> Result<PredictiveDistribution, SurrogateError> {
        let state = self.state.as_ref().ok_or(SurrogateError::NotFitted)?;
        gp_predict(state, x)
    }
}
