use bbox_core::*;
use std::time::Instant;

fn np_run(
    problem_name: &str,
    budget: usize,
    steps: usize,
    cands: usize,
    n_init: usize,
    floor: f64,
    seed: u64,
) -> (f64, f64) {
    let b = benchmark_by_name(problem_name).unwrap();
    let bounds = b.bounds.clone();
    let mut problem = FnBlackBox::new(bounds, move |x: &[f64]| b.evaluate(x).map(|v| -v));
    let np = NpConfig { train_steps_per_fit: steps, variance_floor: floor, ..NpConfig::default() };
    let config = RunConfig {
        surrogate: SurrogateSpec::Np(np),
        budget,
        n_init,
        seed,
        acquisition: AcquisitionConfig { candidate_count: cands, ..Default::default() },
    };
    let t0 = Instant::now();
    let records = run_optimization(&mut problem, &config).unwrap();
    let (_, y) = incumbent(&records).unwrap();
    (t0.elapsed().as_secs_f64(), -y)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let problem = args.get(1).cloned().unwrap_or_else(|| "sinone".into());
    let budget: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(100);
    let steps: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(200);
    let cands: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1024);
    let n_init: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(4);
    let floor: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let n_seeds: u64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(6);
    let mut total = 0.0;
    for seed in 0..n_seeds {
        let (t, best) = np_run(&problem, budget, steps, cands, n_init, floor, seed);
        total += best;
        println!("{problem} steps={steps} cands={cands} init={n_init} floor={floor} seed={seed}: {t:.1} s best {best:.6}");
    }
    println!("mean best = {:.6}", total / n_seeds as f64);
}
