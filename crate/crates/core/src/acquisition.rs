//! Expected Improvement and its derivative-free maximization over the box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::surrogate::{Bounds, PredictiveDistribution, Surrogate, SurrogateError};

/// Random multi-start hill-climbing settings for the acquisition maximizer.
#[derive(Debug, Clone)]
pub struct AcquisitionConfig {
    /// Uniform candidates scored in the first pass.
    pub candidate_count: usize,
    /// Best candidates kept for local refinement.
    pub refine_top_k: usize,
    /// Hill-climbing steps per refined candidate.
    pub refine_steps: usize,
    /// Initial perturbation radius as a fraction of each box width.
    pub refine_radius: f64,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            candidate_count: 4096,
            refine_top_k: 8,
            refine_steps: 64,
            refine_radius: 0.05,
            seed: 0,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        if self.candidate_count == 0
            || self.refine_top_k == 0
            || self.refine_steps == 0
            || !(self.refine_radius > 0.0)
        {
            return Err(SurrogateError::InvalidConfig(
                "acquisition settings must be positive".into(),
            ));
        }
        if self.refine_top_k > self.candidate_count {
            return Err(SurrogateError::InvalidConfig(
                "refine_top_k must not exceed candidate_count".into(),
            ));
        }
        Ok(())
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014327; // 1/sqrt(2*pi)

/// Standard normal CDF via the complementary error function.
#[inline]
pub fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn standard_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Expected improvement of a Gaussian predictive over the incumbent
/// (maximization convention). Degenerates to max(mean - incumbent, 0) when
/// the predictive is effectively deterministic.
pub fn expected_improvement(pred: &PredictiveDistribution, incumbent: f64) -> f64 {
    let gap = pred.mean - incumbent;
    if pred.stddev <= 1e-12 {
        return gap.max(0.0);
    }
    let u = gap / pred.stddev;
    let ei = gap * standard_normal_cdf(u) + pred.stddev * standard_normal_pdf(u);
    ei.max(0.0)
}

/// Maximize EI by uniform candidate sampling followed by hill-climbing from
/// the best candidates. Deterministic under `config.seed`.
pub fn maximize_acquisition(
    surrogate: &dyn Surrogate,
    bounds: &Bounds,
    incumbent: f64,
    config: &AcquisitionConfig,
) -> Result<(Vec<f64>, f64), SurrogateError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let candidates: Vec<Vec<f64>> =
        (0..config.candidate_count).map(|_| bounds.sample_uniform(&mut rng)).collect();
    let preds = surrogate.predict_batch(&candidates)?;
    let scores: Vec<f64> = preds.iter().map(|p| expected_improvement(p, incumbent)).collect();

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let top = &order[..config.refine_top_k.min(order.len())];

    let mut best_x = candidates[top[0]].clone();
    let mut best_ei = scores[top[0]];
    for &idx in top {
        let mut x = candidates[idx].clone();
        let mut ei = scores[idx];
        let mut radius = config.refine_radius;
        let mut stall = 0usize;
        for _ in 0..config.refine_steps {
            let mut proposal = x.clone();
            for (i, v) in proposal.iter_mut().enumerate() {
                let w = bounds.width(i) * radius;
                *v += rng.gen_range(-w..w);
            }
            bounds.clip(&mut proposal);
            let p = surrogate.predict(&proposal)?;
            let e = expected_improvement(&p, incumbent);
            if e > ei {
                x = proposal;
                ei = e;
                stall = 0;
            } else {
                stall += 1;
                if stall == 16 {
                    radius *= 0.5;
                    stall = 0;
                }
            }
        }
        if ei > best_ei {
            best_x = x;
            best_ei = ei;
        }
    }
    Ok((best_x, best_ei))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{gp_fit_fixed, gp_predict, GpFittedState, GpHyperparameters};
    use crate::surrogate::Dataset;
    use std::sync::Mutex;

    fn pred(mean: f64, stddev: f64) -> PredictiveDistribution {
        PredictiveDistribution { mean, stddev }
    }

    #[test]
    fn ei_at_incumbent_with_unit_sigma() {
        // closed form: phi(0) = 1/sqrt(2 pi)
        let e = expected_improvement(&pred(1.0, 1.0), 1.0);
        assert!((e - INV_SQRT_2PI).abs() < 1e-12);
    }

    #[test]
    fn ei_degenerate_improvement() {
        let e = expected_improvement(&pred(2.0, 1e-15), 1.0);
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ei_no_improvement_possible() {
        let e = expected_improvement(&pred(-4.0, 1e-9), 1.0);
        assert!(e < 1e-12);
        assert!(e >= 0.0);
    }

    #[test]
    fn ei_monotone_in_mean() {
        let mut prev = -1.0;
        for i in 0..200 {
            let mean = -5.0 + i as f64 * 0.05;
            let e = expected_improvement(&pred(mean, 0.7), 0.0);
            assert!(e > prev, "EI must strictly increase with mean");
            prev = e;
        }
    }

    #[test]
    fn ei_monotone_in_stddev() {
        for &mean in &[-2.0, 0.0, 2.0] {
            let mut prev = -1.0;
            for i in 1..200 {
                let s = i as f64 * 0.02;
                let e = expected_improvement(&pred(mean, s), 0.0);
                assert!(e >= prev, "EI must be non-decreasing in stddev");
                prev = e;
            }
        }
    }

    #[test]
    fn cdf_matches_known_values() {
        assert!((standard_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((standard_normal_cdf(1.96) - 0.9750021048517795).abs() < 1e-12);
        assert!((standard_normal_cdf(-1.0) - 0.15865525393145707).abs() < 1e-12);
    }

    fn sharp_peak_gp() -> (GpFittedState, Bounds) {
        let bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let mut data = Dataset::new(bounds.clone());
        // valley at the edges, peak near 0.62
        for &(x, y) in
            &[(0.05, -1.0), (0.2, -0.4), (0.45, 0.3), (0.62, 1.0), (0.8, -0.2), (0.95, -1.1)]
        {
            data.push(vec![x], y).unwrap();
        }
        let hp = GpHyperparameters {
            length_scales: vec![0.08],
            amplitude: 1.0,
            noise_variance: 1e-6,
        };
        (gp_fit_fixed(&data, hp).unwrap(), bounds)
    }

    struct FittedGp(GpFittedState);

    impl Surrogate for FittedGp {
        fn fit(&mut self, _data: &Dataset) -> Result<(), SurrogateError> {
            Ok(())
        }
        fn predict(&self, x: &[f64]) -> Result<PredictiveDistribution, SurrogateError> {
            gp_predict(&self.0, x)
        }
    }

    #[test]
    fn maximizer_matches_dense_grid() {
        let (state, bounds) = sharp_peak_gp();
        let incumbent = 1.0;
        // dense grid oracle over 1e5 points
        let mut best_grid = (0.0, -1.0);
        for i in 0..100_000 {
            let x = i as f64 / 99_999.0;
            let e = expected_improvement(&gp_predict(&state, &[x]).unwrap(), incumbent);
            if e > best_grid.1 {
                best_grid = (x, e);
            }
        }
        let surrogate = FittedGp(state);
        let cfg = AcquisitionConfig { candidate_count: 512, seed: 11, ..Default::default() };
        let (x, ei) = maximize_acquisition(&surrogate, &bounds, incumbent, &cfg).unwrap();
        assert!((x[0] - best_grid.0).abs() < 0.02, "found {} vs grid {}", x[0], best_grid.0);
        assert!(ei > 0.0);
    }

    /// Wrapper that records every query so tests can compare the returned
    /// EI against the raw candidates'.
    struct Recorder<S: Surrogate> {
        inner: S,
        queries: Mutex<Vec<(Vec<f64>, f64)>>,
        incumbent: f64,
    }

    impl<S: Surrogate> Surrogate for Recorder<S> {
        fn fit(&mut self, data: &Dataset) -> Result<(), SurrogateError> {
            self.inner.fit(data)
        }
        fn predict(&self, x: &[f64]) -> Result<PredictiveDistribution, SurrogateError> {
            let p = self.inner.predict(x)?;
            let e = expected_improvement(&p, self.incumbent);
            self.queries.lock().unwrap().push((x.to_vec(), e));
            Ok(p)
        }
    }

    #[test]
    fn refinement_never_loses_to_raw_candidates() {
        let (state, bounds) = sharp_peak_gp();
        let incumbent = 0.4;
        let cfg = AcquisitionConfig { candidate_count: 256, seed: 3, ..Default::default() };
        let rec = Recorder {
            inner: FittedGp(state),
            queries: Mutex::new(Vec::new()),
            incumbent,
        };
        let (_, ei) = maximize_acquisition(&rec, &bounds, incumbent, &cfg).unwrap();
        let queries = rec.queries.lock().unwrap();
        let candidate_best = queries[..cfg.candidate_count]
            .iter()
            .map(|q| q.1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(ei >= candidate_best);
    }

    struct FlatZero;

    impl Surrogate for FlatZero {
        fn fit(&mut self, _data: &Dataset) -> Result<(), SurrogateError> {
            Ok(())
        }
        fn predict(&self, _x: &[f64]) -> Result<PredictiveDistribution, SurrogateError> {
            // deterministic prediction strictly below the incumbent
            Ok(PredictiveDistribution { mean: -1.0, stddev: 0.0 })
        }
    }

    #[test]
    fn flat_zero_ei_landscape_still_returns_a_point() {
        let bounds = Bounds::new(vec![-1.0, 2.0], vec![1.0, 5.0]).unwrap();
        let s = FlatZero;
        let cfg = AcquisitionConfig { candidate_count: 64, seed: 0, ..Default::default() };
        let (x, ei) = maximize_acquisition(&s, &bounds, 0.0, &cfg).unwrap();
        assert_eq!(ei, 0.0);
        assert!(bounds.contains(&x));
    }

    #[test]
    fn result_always_within_bounds() {
        let (state, bounds) = sharp_peak_gp();
        let surrogate = FittedGp(state);
        for seed in 0..100 {
            let cfg = AcquisitionConfig {
                candidate_count: 32,
                refine_steps: 16,
                seed,
                ..Default::default()
            };
            let (x, _) = maximize_acquisition(&surrogate, &bounds, 0.2, &cfg).unwrap();
            assert!(bounds.contains(&x));
        }
    }
}
