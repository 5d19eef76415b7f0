//! The outer Bayesian-optimization loop: evaluate an initial random design,
//! then repeat fit -> maximize acquisition -> evaluate until the budget is
//! spent. A `random` surrogate choice skips modeling entirely and provides
//! the random-search baseline.
//!
//! The engine maximizes; minimization problems are negated at the adapter
//! boundary before they reach it.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::acquisition::{maximize_acquisition, AcquisitionConfig};
use crate::gp::{GpConfig, GpSurrogate};
use crate::np::{NpConfig, NpSurrogate};
use crate::surrogate::{Bounds, Dataset, Surrogate};

/// Black-box evaluation failure, as surfaced to the engine.
#[derive(Debug, Error)]
#[error("black-box evaluation failed: {0}")]
pub struct EvalError(pub String);

/// A scalar objective observable only through evaluations.
pub trait BlackBox {
    fn bounds(&self) -> &Bounds;
    fn evaluate(&mut self, x: &[f64]) -> Result<f64, EvalError>;
}

/// Black box built from a closure.
pub struct FnBlackBox<F> {
    bounds: Bounds,
    f: F,
}

impl<F: FnMut(&[f64]) -> Result<f64, EvalError>> FnBlackBox<F> {
    pub fn new(bounds: Bounds, f: F) -> Self {
        FnBlackBox { bounds, f }
    }
}

impl<F: FnMut(&[f64]) -> Result<f64, EvalError>> BlackBox for FnBlackBox<F> {
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        (self.f)(x)
    }
}

/// Which surrogate drives the loop.
#[derive(Debug, Clone)]
pub enum SurrogateSpec {
    Gp(GpConfig),
    Np(NpConfig),
    /// Uniform random search; no model, no acquisition.
    Random,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub surrogate: SurrogateSpec,
    /// Total number of black-box evaluations, including the initial design.
    pub budget: usize,
    /// Initial uniform-random design size.
    pub n_init: usize,
    pub seed: u64,
    pub acquisition: AcquisitionConfig,
}

/// Default initial design size: max(2, 2d).
pub fn default_n_init(dim: usize) -> usize {
    (2 * dim).max(2)
}

impl RunConfig {
    pub fn new(surrogate: SurrogateSpec, budget: usize, dim: usize, seed: u64) -> Self {
        RunConfig {
            surrogate,
            budget,
            n_init: default_n_init(dim),
            seed,
            acquisition: AcquisitionConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_init < 1 {
            return Err("n_init must be >= 1".into());
        }
        if self.budget < self.n_init {
            return Err(format!(
                "budget ({}) must be at least n_init ({})",
                self.budget, self.n_init
            ));
        }
        self.acquisition.validate().map_err(|e| e.to_string())
    }
}

/// One evaluation in the trace. `y` and the incumbent follow the engine's
/// maximization convention.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// 1-based, contiguous.
    pub iteration: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub incumbent_y: f64,
    pub incumbent_x: Vec<f64>,
    /// Milliseconds since the start of the run.
    pub wall_time_ms: u64,
}

#[derive(Debug, Error)]
pub enum RunErrorKind {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Evaluation(#[from] EvalError),
}

/// Run failure carrying whatever records were completed before the error.
#[derive(Debug, Error)]
#[error("{kind} (after {} evaluations)", .records.len())]
pub struct RunFailure {
    pub records: Vec<RunRecord>,
    pub kind: RunErrorKind,
}

/// Best observed pair; ties broken by earliest iteration.
pub fn incumbent(records: &[RunRecord]) -> Option<(&[f64], f64)> {
    let mut best: Option<&RunRecord> = None;
    for r in records {
        if best.map_or(true, |b| r.y > b.y) {
            best = Some(r);
        }
    }
    best.map(|r| (r.x.as_slice(), r.y))
}

/// Negated view of a trace: maps a maximization trace over -f back to the
/// native minimization units of f.
pub fn to_minimization_view(records: &[RunRecord]) -> Vec<RunRecord> {
    records
        .iter()
        .map(|r| RunRecord {
            iteration: r.iteration,
            x: r.x.clone(),
            y: -r.y,
            incumbent_y: -r.incumbent_y,
            incumbent_x: r.incumbent_x.clone(),
            wall_time_ms: r.wall_time_ms,
        })
        .collect()
}

/// Run the optimization loop with the surrogate named in `config.surrogate`.
pub fn run_optimization(
    problem: &mut dyn BlackBox,
    config: &RunConfig,
) -> Result<Vec<RunRecord>, RunFailure> {
    let dim = problem.bounds().dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let surrogate_seed: u64 = rng.gen();
    let mut surrogate: Option<Box<dyn Surrogate>> = match &config.surrogate {
        SurrogateSpec::Gp(gp) => {
            Some(Box::new(GpSurrogate::new(GpConfig { seed: surrogate_seed, ..gp.clone() })))
        }
        SurrogateSpec::Np(np) => {
            let cfg = NpConfig { seed: surrogate_seed, ..np.clone() };
            match NpSurrogate::new(dim, cfg) {
                Ok(s) => Some(Box::new(s)),
                Err(e) => {
                    return Err(RunFailure {
                        records: Vec::new(),
                        kind: RunErrorKind::InvalidConfig(e.to_string()),
                    })
                }
            }
        }
        SurrogateSpec::Random => None,
    };
    let result = run_loop(problem, surrogate.as_deref_mut(), config, rng);
    result
}

/// Same loop with a caller-provided surrogate (config.surrogate is ignored).
pub fn run_with_surrogate(
    problem: &mut dyn BlackBox,
    surrogate: &mut dyn Surrogate,
    config: &RunConfig,
) -> Result<Vec<RunRecord>, RunFailure> {
    let rng = ChaCha8Rng::seed_from_u64(config.seed);
    run_loop(problem, Some(surrogate), config, rng)
}

fn run_loop<'a, 'b>(
    problem: &mut dyn BlackBox,
    mut surrogate: Option<&'a mut (dyn Surrogate + 'b)>,
    config: &RunConfig,
    mut rng: ChaCha8Rng,
) -> Result<Vec<RunRecord>, RunFailure> {
    if let Err(msg) = config.validate() {
        return Err(RunFailure { records: Vec::new(), kind: RunErrorKind::InvalidConfig(msg) });
    }
    let bounds = problem.bounds().clone();
    let start = Instant::now();
    let mut records: Vec<RunRecord> = Vec::with_capacity(config.budget);
    let mut best_y = f64::NEG_INFINITY;
    let mut best_x: Vec<f64> = Vec::new();

    let mut evaluate = |x: Vec<f64>,
                        records: &mut Vec<RunRecord>,
                        best_y: &mut f64,
                        best_x: &mut Vec<f64>|
     -> Result<(), RunFailure> {
        let y = match problem.evaluate(&x) {
            Ok(y) => y,
            Err(e) => {
                return Err(RunFailure {
                    records: std::mem::take(records),
                    kind: RunErrorKind::Evaluation(e),
                })
            }
        };
        // strict improvement keeps the earliest tie
        if y > *best_y {
            *best_y = y;
            *best_x = x.clone();
        }
        records.push(RunRecord {
            iteration: records.len() + 1,
            x,
            y,
            incumbent_y: *best_y,
            incumbent_x: best_x.clone(),
            wall_time_ms: start.elapsed().as_millis() as u64,
        });
        Ok(())
    };

    for _ in 0..config.n_init.min(config.budget) {
        let x = bounds.sample_uniform(&mut rng);
        evaluate(x, &mut records, &mut best_y, &mut best_x)?;
    }

    while records.len() < config.budget {
        let x = match surrogate.as_deref_mut() {
            None => bounds.sample_uniform(&mut rng),
            Some(model) => {
                let mut dataset = Dataset::new(bounds.clone());
                for r in &records {
                    // records came from in-bounds finite evaluations
                    dataset.push(r.x.clone(), r.y).expect("records are valid observations");
                }
                let acq_seed: u64 = rng.gen();
                match model.fit(&dataset) {
                    Ok(()) => {
                        let acq = AcquisitionConfig { seed: acq_seed, ..config.acquisition.clone() };
                        match maximize_acquisition(&*model, &bounds, best_y, &acq) {
                            Ok((x, _ei)) => x,
                            // robustness over abort: fall back to a random query
                            Err(_) => bounds.sample_uniform(&mut rng),
                        }
                    }
                    Err(_) => bounds.sample_uniform(&mut rng),
                }
            }
        };
        evaluate(x, &mut records, &mut best_y, &mut best_x)?;
    }
    Ok(records)
}
