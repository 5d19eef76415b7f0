//! Synthetic minimization benchmarks with reference optima, plus a seeded
//! vector-matching calibration problem whose simulator is a cheap smooth
//! nonlinear map (a stand-in for an expensive external simulator).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::EvalError;
use crate::surrogate::Bounds;

/// A benchmark to be minimized over box bounds.
pub struct BenchmarkProblem {
    pub name: &'static str,
    pub dimension: usize,
    pub bounds: Bounds,
    pub known_optimum_value: f64,
    pub known_optimizer: Option<Vec<f64>>,
    eval: fn(&[f64]) -> f64,
}

impl BenchmarkProblem {
    /// Evaluate at `x`, checking dimension and bounds.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, EvalError> {
        if x.len() != self.dimension {
            return Err(EvalError(format!(
                "{}: expected {} dimensions, got {}",
                self.name,
                self.dimension,
                x.len()
            )));
        }
        if !self.bounds.contains(x) {
            return Err(EvalError(format!("{}: point out of bounds", self.name)));
        }
        Ok((self.eval)(x))
    }

    /// Unchecked evaluation; used by oracles that already validated inputs.
    pub fn evaluate_unchecked(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }
}

const PI: f64 = std::f64::consts::PI;

/// Branin: three global minima, f* = 5/(4*pi) at (pi, 2.275) among others.
fn branin(x: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

/// Six-hump camel function. f* = -1.0316 at (+-0.0898, -+0.7127).
fn camelback(x: &[f64]) -> f64 {
    let (a, b) = (x[0], x[1]);
    (4.0 - 2.1 * a * a + a.powi(4) / 3.0) * a * a + a * b + (-4.0 + 4.0 * b * b) * b * b
}

fn hartmann(x: &[f64], a: &[[f64; 6]; 4], p: &[[f64; 6]; 4], dim: usize) -> f64 {
    const ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
    let mut outer = 0.0;
    for i in 0..4 {
        let mut inner = 0.0;
        for j in 0..dim {
            let d = x[j] - p[i][j];
            inner += a[i][j] * d * d;
        }
        outer -= ALPHA[i] * (-inner).exp();
    }
    outer
}

/// Hartmann function in three dimensions on the unit cube.
fn hartmann3(x: &[f64]) -> f64 {
    const A: [[f64; 6]; 4] = [
        [3.0, 10.0, 30.0, 0.0, 0.0, 0.0],
        [0.1, 10.0, 35.0, 0.0, 0.0, 0.0],
        [3.0, 10.0, 30.0, 0.0, 0.0, 0.0],
        [0.1, 10.0, 35.0, 0.0, 0.0, 0.0],
    ];
    const P: [[f64; 6]; 4] = [
        [0.3689, 0.1170, 0.2673, 0.0, 0.0, 0.0],
        [0.4699, 0.4387, 0.7470, 0.0, 0.0, 0.0],
        [0.1091, 0.8732, 0.5547, 0.0, 0.0, 0.0],
        [0.0381, 0.5743, 0.8828, 0.0, 0.0, 0.0],
    ];
    hartmann(x, &A, &P, 3)
}

/// Hartmann function in six dimensions on the unit cube.
fn hartmann6(x: &[f64]) -> f64 {
    const A: [[f64; 6]; 4] = [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ];
    const P: [[f64; 6]; 4] = [
        [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
        [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
        [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
        [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
    ];
    hartmann(x, &A, &P, 6)
}

/// Forrester: (6x-2)^2 sin(12x-4) on [0, 1]. f* = -6.0207 at x = 0.7572.
fn forrester(x: &[f64]) -> f64 {
    let v = 6.0 * x[0] - 2.0;
    v * v * (12.0 * x[0] - 4.0).sin()
}

/// Goldstein-Price polynomial on [-2, 2]^2. f* = 3 at (0, -1).
fn goldstein_price(x: &[f64]) -> f64 {
    let (a, b) = (x[0], x[1]);
    let t1 = 1.0
        + (a + b + 1.0).powi(2)
            * (19.0 - 14.0 * a + 3.0 * a * a - 14.0 * b + 6.0 * a * b + 3.0 * b * b);
    let t2 = 30.0
        + (2.0 * a - 3.0 * b).powi(2)
            * (18.0 - 32.0 * a + 12.0 * a * a + 48.0 * b - 36.0 * a * b + 27.0 * b * b);
    t1 * t2
}

/// One-dimensional sine product: 0.5 sin(13x) sin(27x) + 0.5 on [0, 1].
/// f* = 0.042926 at x = 0.633013.
fn sin_one(x: &[f64]) -> f64 {
    0.5 * (13.0 * x[0]).sin() * (27.0 * x[0]).sin() + 0.5
}

fn bounds(pairs: &[(f64, f64)]) -> Bounds {
    Bounds::from_pairs(pairs).expect("static benchmark bounds are valid")
}

/// All seven benchmarks, in a fixed order.
pub fn all_benchmarks() -> Vec<BenchmarkProblem> {
    vec![
        BenchmarkProblem {
            name: "branin",
            dimension: 2,
            bounds: bounds(&[(-5.0, 10.0), (0.0, 15.0)]),
            known_optimum_value: 0.397887357729738,
            known_optimizer: Some(vec![PI, 2.275]),
            eval: branin,
        },
        BenchmarkProblem {
            name: "camelback",
            dimension: 2,
            bounds: bounds(&[(-3.0, 3.0), (-2.0, 2.0)]),
            known_optimum_value: -1.031628453489877,
            known_optimizer: Some(vec![0.089842012, -0.712656404]),
            eval: camelback,
        },
        BenchmarkProblem {
            name: "hartmann3",
            dimension: 3,
            bounds: bounds(&[(0.0, 1.0); 3]),
            known_optimum_value: -3.862779787332662,
            known_optimizer: Some(vec![0.114588881, 0.555648894, 0.852546984]),
            eval: hartmann3,
        },
        BenchmarkProblem {
            name: "forrester",
            dimension: 1,
            bounds: bounds(&[(0.0, 1.0)]),
            known_optimum_value: -6.020740055767083,
            known_optimizer: Some(vec![0.757248757]),
            eval: forrester,
        },
        BenchmarkProblem {
            name: "goldsteinprice",
            dimension: 2,
            bounds: bounds(&[(-2.0, 2.0), (-2.0, 2.0)]),
            known_optimum_value: 3.0,
            known_optimizer: Some(vec![0.0, -1.0]),
            eval: goldstein_price,
        },
        BenchmarkProblem {
            name: "hartmann6",
            dimension: 6,
            bounds: bounds(&[(0.0, 1.0); 6]),
            known_optimum_value: -3.322368011415515,
            known_optimizer: Some(vec![
                0.201689512,
                0.150010689,
                0.476873975,
                0.275332431,
                0.311651617,
                0.657300533,
            ]),
            eval: hartmann6,
        },
        BenchmarkProblem {
            name: "sinone",
            dimension: 1,
            bounds: bounds(&[(0.0, 1.0)]),
            known_optimum_value: 0.042926342433643,
            known_optimizer: Some(vec![0.633013164]),
            eval: sin_one,
        },
    ]
}

pub fn benchmark_by_name(name: &str) -> Option<BenchmarkProblem> {
    all_benchmarks().into_iter().find(|b| b.name.eq_ignore_ascii_case(name))
}

/// Evaluate a named benchmark at `x`.
pub fn evaluate_benchmark(name: &str, x: &[f64]) -> Result<f64, EvalError> {
    let problem =
        benchmark_by_name(name).ok_or_else(|| EvalError(format!("unknown benchmark '{name}'")))?;
    problem.evaluate(x)
}

const TRACE_LEN: usize = 452;
const OUTPUT_COUNT: usize = 4;
const SINUSOIDS: usize = 3;

/// Per-output coefficients of the synthetic simulator.
#[derive(Debug, Clone)]
struct TraceModel {
    amplitude: [f64; SINUSOIDS],
    time_freq: [f64; SINUSOIDS],
    base_phase: [f64; SINUSOIDS],
    /// Phase shift per normalized parameter, per sinusoid.
    param_phase: [[f64; 4]; SINUSOIDS],
    /// Affine parameter mix, modulated over the trace.
    affine: [f64; 4],
}

/// Calibration problem: recover hidden parameters by matching the
/// simulator's vector outputs to target traces. The objective is the sum
/// over outputs of the Euclidean distance between traces; it is zero
/// exactly at the ground truth.
pub struct VectorMatchingProblem {
    pub bounds: Bounds,
    models: Vec<TraceModel>,
    target_outputs: Vec<Vec<f64>>,
    ground_truth: Vec<f64>,
}

impl VectorMatchingProblem {
    /// Run the simulator: four traces of length 452.
    pub fn simulate(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let u = self.bounds.normalize(x);
        self.models.iter().map(|m| simulate_trace(m, &u)).collect()
    }

    /// Sum over outputs of ||O_i - O_hat_i||_2; >= 0, zero only on an exact
    /// match.
    pub fn objective(&self, x: &[f64]) -> Result<f64, EvalError> {
        if x.len() != self.bounds.dim() {
            return Err(EvalError(format!(
                "calibration: expected {} dimensions, got {}",
                self.bounds.dim(),
                x.len()
            )));
        }
        if !self.bounds.contains(x) {
            return Err(EvalError("calibration: point out of bounds".into()));
        }
        let outputs = self.simulate(x);
        let mut total = 0.0;
        for (sim, target) in outputs.iter().zip(&self.target_outputs) {
            let sq: f64 = sim.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
            total += sq.sqrt();
        }
        Ok(total)
    }

    pub fn target_outputs(&self) -> &[Vec<f64>] {
        &self.target_outputs
    }

    /// Hidden parameters; for scoring only.
    pub fn ground_truth_params(&self) -> &[f64] {
        &self.ground_truth
    }

    /// Matching objective against externally produced outputs (same norm).
    pub fn match_outputs(&self, outputs: &[Vec<f64>]) -> f64 {
        outputs
            .iter()
            .zip(&self.target_outputs)
            .map(|(sim, target)| {
                sim.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            })
            .sum()
    }
}

fn simulate_trace(m: &TraceModel, u: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(TRACE_LEN);
    let affine_level: f64 = m.affine.iter().zip(u).map(|(a, v)| a * v).sum();
    for t in 0..TRACE_LEN {
        let tn = t as f64 / (TRACE_LEN - 1) as f64;
        let mut v = affine_level * (0.5 + tn);
        for k in 0..SINUSOIDS {
            let phase: f64 = m.param_phase[k].iter().zip(u).map(|(c, p)| c * p).sum();
            v += m.amplitude[k] * (m.time_freq[k] * tn + m.base_phase[k] + phase).sin();
        }
        out.push(v);
    }
    out
}

/// Input ranges of the four calibrated parameters (problem units).
pub fn calibration_bounds() -> Bounds {
    bounds(&[(5.625, 9.375), (1.425, 2.375), (1.35, 2.25), (0.315, 0.525)])
}

/// Build the seeded synthetic calibration problem: d = 4 parameters on the
/// published input ranges, m = 4 output traces of length 452.
pub fn make_synthetic_calibration(seed: u64) -> VectorMatchingProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_1f_ca_1b);
    let bounds = calibration_bounds();
    let models: Vec<TraceModel> = (0..OUTPUT_COUNT)
        .map(|_| {
            let mut model = TraceModel {
                amplitude: [0.0; SINUSOIDS],
                time_freq: [0.0; SINUSOIDS],
                base_phase: [0.0; SINUSOIDS],
                param_phase: [[0.0; 4]; SINUSOIDS],
                affine: [0.0; 4],
            };
            for k in 0..SINUSOIDS {
                model.amplitude[k] = rng.gen_range(0.5..1.5);
                model.time_freq[k] = rng.gen_range(PI..6.0 * PI);
                model.base_phase[k] = rng.gen_range(0.0..2.0 * PI);
                for j in 0..4 {
                    model.param_phase[k][j] = rng.gen_range(0.5..2.5);
                }
            }
            for j in 0..4 {
                model.affine[j] = rng.gen_range(-1.0..1.0);
            }
            model
        })
        .collect();
    let ground_truth = bounds.sample_uniform(&mut rng);
    let mut problem =
        VectorMatchingProblem { bounds, models, target_outputs: Vec::new(), ground_truth };
    problem.target_outputs = problem.simulate(&problem.ground_truth.clone());
    problem
}
