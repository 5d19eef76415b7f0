//! Scoring: mean squared parameter-estimation error across trials and
//! per-iteration immediate regret.

use thiserror::Error;

use crate::engine::RunRecord;
use crate::surrogate::Bounds;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no trials provided")]
    NoTrials,
    #[error("trial {trial} has parameter dimension {got}, expected {expected}")]
    DimensionMismatch { trial: usize, expected: usize, got: usize },
    #[error("no records provided")]
    NoRecords,
}

/// Outcome of one calibration trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial_index: usize,
    pub estimated_params: Vec<f64>,
    pub ground_truth_params: Vec<f64>,
    pub records: Vec<RunRecord>,
}

impl TrialResult {
    /// Copy with both parameter vectors min-max normalized by `bounds`.
    pub fn normalized(&self, bounds: &Bounds) -> TrialResult {
        TrialResult {
            trial_index: self.trial_index,
            estimated_params: bounds.normalize(&self.estimated_params),
            ground_truth_params: bounds.normalize(&self.ground_truth_params),
            records: self.records.clone(),
        }
    }
}

/// MSE = 1/(Tr * D) * sum_ij (P_ij - P_hat_ij)^2 over the vectors as stored.
pub fn parameter_mse(trials: &[TrialResult]) -> Result<f64, MetricsError> {
    if trials.is_empty() {
        return Err(MetricsError::NoTrials);
    }
    let d = trials[0].ground_truth_params.len();
    let mut total = 0.0;
    for t in trials {
        if t.ground_truth_params.len() != d || t.estimated_params.len() != d {
            return Err(MetricsError::DimensionMismatch {
                trial: t.trial_index,
                expected: d,
                got: t.estimated_params.len().max(t.ground_truth_params.len()),
            });
        }
        for (p, p_hat) in t.ground_truth_params.iter().zip(&t.estimated_params) {
            total += (p - p_hat) * (p - p_hat);
        }
    }
    Ok(total / (trials.len() * d) as f64)
}

/// Per-iteration |incumbent - f_opt|. `f_opt` must be given in the same
/// orientation as the records' incumbents (the CLI converts maximization
/// traces back to native minimization units first).
pub fn immediate_regret(records: &[RunRecord], f_opt: f64) -> Result<Vec<f64>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    Ok(records.iter().map(|r| (r.incumbent_y - f_opt).abs()).collect())
}
