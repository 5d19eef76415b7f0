//! Shared surrogate-model contract: datasets over a box-bounded domain and
//! the fit/predict interface the optimization engine drives.
//!
//! Inputs are min-max scaled to the unit box and observations standardized
//! to zero mean / unit variance inside each surrogate; callers always work
//! in problem units.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has {got} observations, need at least {need}")]
    DatasetTooSmall { need: usize, got: usize },
    #[error("observation {index} is non-finite")]
    NonFiniteObservation { index: usize },
    #[error("surrogate is not fitted")]
    NotFitted,
    #[error("query dimension {got} does not match dataset dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Cholesky factorization failed after {attempts} jitter attempts")]
    CholeskyFailure { attempts: usize },
    #[error("training diverged: {skipped} consecutive non-finite loss steps")]
    TrainingDiverged { skipped: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("lower and upper have different lengths ({lower} vs {upper})")]
    LengthMismatch { lower: usize, upper: usize },
    #[error("bounds are empty")]
    Empty,
    #[error("lower[{index}] = {lower} is not below upper[{index}] = {upper}")]
    Degenerate { index: usize, lower: f64, upper: f64 },
    #[error("bound at index {index} is non-finite")]
    NonFinite { index: usize },
}

/// Axis-aligned box constraint, one (lower, upper) pair per input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, BoundsError> {
        if lower.len() != upper.len() {
            return Err(BoundsError::LengthMismatch { lower: lower.len(), upper: upper.len() });
        }
        if lower.is_empty() {
            return Err(BoundsError::Empty);
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(BoundsError::NonFinite { index: i });
            }
            if lo >= hi {
                return Err(BoundsError::Degenerate { index: i, lower: lo, upper: hi });
            }
        }
        Ok(Bounds { lower, upper })
    }

    /// Convenience constructor from (lower, upper) pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, BoundsError> {
        Bounds::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(&v, (&lo, &hi))| {
                v >= lo && v <= hi
            })
    }

    /// Min-max scale into the unit box.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| (v - lo) / (hi - lo))
            .collect()
    }

    /// Inverse of `normalize`.
    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| lo + v * (hi - lo))
            .collect()
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (v, (&lo, &hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn sample_uniform<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(&lo, &hi)| rng.gen_range(lo..hi)).collect()
    }
}

/// One evaluated point: input in problem units, scalar objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

/// Ordered collection of observations over a common bounded domain.
#[derive(Debug, Clone)]
pub struct Dataset {
    observations: Vec<Observation>,
    bounds: Bounds,
}

impl Dataset {
    pub fn new(bounds: Bounds) -> Self {
        Dataset { observations: Vec::new(), bounds }
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<(), SurrogateError> {
        if x.len() != self.bounds.dim() {
            return Err(SurrogateError::DimensionMismatch {
                expected: self.bounds.dim(),
                got: x.len(),
            });
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(SurrogateError::NonFiniteObservation { index: self.observations.len() });
        }
        self.observations.push(Observation { x, y });
        Ok(())
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }
}

/// Gaussian predictive at one query point, in problem units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveDistribution {
    pub mean: f64,
    pub stddev: f64,
}

/// Contract every surrogate (GP, NP, random baseline) fulfills.
pub trait Surrogate {
    /// Fit to the dataset. Deterministic given the surrogate's configured seed.
    fn fit(&mut self, data: &Dataset) -> Result<(), SurrogateError>;

    /// Predictive mean/stddev at `x` (problem units). Requires a prior `fit`.
    fn predict(&self, x: &[f64]) -> Result<PredictiveDistribution, SurrogateError>;

    /// Batched prediction; surrogates override this when they can share work.
    fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<PredictiveDistribution>, SurrogateError> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

/// Standardization of observation values, recomputed at each fit.
#[derive(Debug, Clone, Copy)]
pub(crate) struct YScaler {
    pub mean: f64,
    pub std: f64,
}

impl YScaler {
    pub fn fit(ys: &[f64]) -> Self {
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        // constant targets degenerate to unit scale
        let std = if std > 1e-12 { std } else { 1.0 };
        YScaler { mean, std }
    }

    #[inline]
    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    #[inline]
    pub fn destandardize_mean(&self, m: f64) -> f64 {
        m * self.std + self.mean
    }

    #[inline]
    pub fn destandardize_stddev(&self, s: f64) -> f64 {
        s * self.std
    }
}

/// Normalized view of a dataset: unit-box inputs, standardized targets.
pub(crate) fn normalized_training_data(data: &Dataset) -> (Vec<Vec<f64>>, Vec<f64>, YScaler) {
    let ys_raw: Vec<f64> = data.observations().iter().map(|o| o.y).collect();
    let scaler = YScaler::fit(&ys_raw);
    let xs = data.observations().iter().map(|o| data.bounds().normalize(&o.x)).collect();
    let ys = ys_raw.iter().map(|&y| scaler.standardize(y)).collect();
    (xs, ys, scaler)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bounds_validation() {
        assert!(Bounds::new(vec![0.0], vec![1.0]).is_ok());
        assert!(matches!(
            Bounds::new(vec![0.0, 1.0], vec![1.0]),
            Err(BoundsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Bounds::new(vec![1.0], vec![1.0]),
            Err(BoundsError::Degenerate { .. })
        ));
        assert!(matches!(Bounds::new(vec![], vec![]), Err(BoundsError::Empty)));
        assert!(matches!(
            Bounds::new(vec![f64::NAN], vec![1.0]),
            Err(BoundsError::NonFinite { .. })
        ));
    }

    #[test]
    fn dataset_rejects_bad_points() {
        let bounds = Bounds::from_pairs(&[(0.0, 1.0), (0.0, 2.0)]).unwrap();
        let mut d = Dataset::new(bounds);
        assert!(d.push(vec![0.5, 1.0], 1.0).is_ok());
        assert!(matches!(
            d.push(vec![0.5], 1.0),
            Err(SurrogateError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            d.push(vec![0.5, 1.0], f64::INFINITY),
            Err(SurrogateError::NonFiniteObservation { .. })
        ));
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn scaler_handles_constant_targets() {
        let s = YScaler::fit(&[3.0, 3.0, 3.0]);
        assert_eq!(s.standardize(3.0), 0.0);
        assert_eq!(s.destandardize_mean(0.0), 3.0);
    }

    proptest! {
        #[test]
        fn normalize_denormalize_round_trip(
            lo in -100.0f64..100.0,
            wid in 0.1f64..50.0,
            frac in 0.0f64..1.0,
        ) {
            let bounds = Bounds::new(vec![lo], vec![lo + wid]).unwrap();
            let x = lo + frac * wid;
            let u = bounds.normalize(&[x]);
            let back = bounds.denormalize(&u);
            prop_assert!((back[0] - x).abs() < 1e-9 * wid.max(1.0));
            prop_assert!(u[0] >= -1e-12 && u[0] <= 1.0 + 1e-12);
        }
    }
}
