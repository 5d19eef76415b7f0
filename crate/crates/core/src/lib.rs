//! Core toolkit for black-box optimization: Bayesian optimization with
//! interchangeable surrogate models (exact Gaussian Process, neural-process
//! latent-variable model, random baseline), an Expected Improvement
//! acquisition, synthetic benchmarks, metrics, and an adapter for driving
//! external simulators over a line protocol.

pub mod acquisition;
pub mod autodiff;
pub mod benchmarks;
pub mod blackbox;
pub mod engine;
pub mod gp;
mod linalg;
pub mod metrics;
pub mod np;
pub mod surrogate;

pub use acquisition::{expected_improvement, maximize_acquisition, AcquisitionConfig};
pub use autodiff::{
    adam_step, mlp_backward, mlp_forward, Activation, AdamState, GradientTape, MlpParameters,
    MlpSpec,
};
pub use benchmarks::{
    all_benchmarks, benchmark_by_name, calibration_bounds, evaluate_benchmark,
    make_synthetic_calibration, BenchmarkProblem, VectorMatchingProblem,
};
pub use blackbox::{format_request, parse_response, ExternalBlackBox, ProtocolError};
pub use engine::{
    default_n_init, incumbent, run_optimization, run_with_surrogate, to_minimization_view,
    BlackBox, EvalError, FnBlackBox, RunConfig, RunFailure, RunRecord, SurrogateSpec,
};
pub use gp::{gp_fit, gp_predict, rbf_kernel, GpConfig, GpFittedState, GpHyperparameters, GpSurrogate};
pub use metrics::{immediate_regret, parameter_mse, MetricsError, TrialResult};
pub use np::{
    elbo_loss, encode_aggregate, kl_diag_gaussians, latent_posterior, np_fit, np_predict,
    sample_latent, LatentGaussian, NpConfig, NpFittedState, NpNetworks, NpSurrogate,
};
pub use surrogate::{
    Bounds, BoundsError, Dataset, Observation, PredictiveDistribution, Surrogate, SurrogateError,
};
