//! Entropy solvers on the two-Gaussian benchmark.

use lininv::mem::{
    exp_mem_solve, mem_solve_direct, overlap, sc_mem_solve, std_mem_solve, std_mem_solve_with_sink, MemConfig,
    MemVariant, ModelClass, ScMemConfig,
};
use lininv::spectral::{detect_peaks, generate_benchmark, GeneratedBenchmark, SpectralBenchmark};
use lininv::{rmse, DiscretizedProblem, IntegralConstraint};

fn bench(noise: f64, seed: u64) -> GeneratedBenchmark {
    generate_benchmark(&SpectralBenchmark {
        noise_level: noise,
        seed,
        ..SpectralBenchmark::standard()
    })
    .unwrap()
}

fn flat(p: &DiscretizedProblem) -> Vec<f64> {
    vec![0.1; p.n_grid()]
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    num / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

#[test]
fn variants_agree_at_matched_alpha() {
    let g = bench(0.01, 1);
    let p = g.problem.without_integral_constraints();
    let m = flat(&p);
    for alpha in [0.1, 1.0] {
        let cfg = MemConfig { alpha, ..Default::default() };
        let s = std_mem_solve(&p, &m, &cfg).unwrap();
        let d = mem_solve_direct(&p, &m, &cfg).unwrap();
        let e = exp_mem_solve(&p, &m, &cfg).unwrap();
        assert!(rel_diff(&d.object, &s.object) < 0.05, "direct vs std at alpha {alpha}");
        assert!(rel_diff(&e.object, &s.object) < 0.05, "exp vs std at alpha {alpha}");
        for sol in [&s, &d, &e] {
            assert!(sol.object.iter().all(|a| *a >= 0.0));
        }
    }
}

#[test]
fn likelihood_history_never_increases_on_the_benchmark() {
    let g = bench(0.01, 2);
    for xi in [0.1, 0.5] {
        let cfg = MemConfig { xi, alpha: 0.1, ..Default::default() };
        let mut values = Vec::new();
        std_mem_solve_with_sink(&g.problem, &flat(&g.problem), &cfg, &mut |r| values.push(r.f_value)).unwrap();
        for w in values.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs(), "xi {xi}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn normalization_constraint_holds_at_convergence() {
    let g = bench(0.01, 3);
    let norm = g.problem.integral_constraints()[0].clone();
    let p = g.problem.without_integral_constraints().with_integral_constraint(norm.clone());
    let sol = std_mem_solve(&p, &flat(&p), &MemConfig::default()).unwrap();
    let mass: f64 = sol.object.iter().sum::<f64>() * p.grid().dx() / (2.0 * std::f64::consts::PI);
    assert!((mass - norm.target()).abs() < 1e-3, "{mass} vs {}", norm.target());
}

#[test]
fn doubling_stiffness_does_not_loosen_the_sum_rule() {
    let g = bench(0.01, 4);
    let sum_rule = g.problem.integral_constraints()[1].clone();
    let base = sum_rule.stiffness();
    let mut last = f64::INFINITY;
    for k in 0..4 {
        let c: IntegralConstraint = sum_rule.clone().with_stiffness(base * f64::powi(2.0, k)).unwrap();
        let p = g.problem.without_integral_constraints().with_integral_constraint(c.clone());
        let sol = std_mem_solve(&p, &flat(&p), &MemConfig::default()).unwrap();
        let r = c.residual(p.grid(), &sol.object).unwrap().abs();
        assert!(r <= last * (1.0 + 1e-6), "stiffness x{}: {r} after {last}", 1 << k);
        last = r;
    }
}

#[test]
fn self_consistent_loop_recovers_noiseless_truth_inside_the_class() {
    let g = bench(0.0, 0);
    let p = g.problem.without_integral_constraints();
    let class = ModelClass::two_gaussian();
    let cfg = ScMemConfig {
        inner: MemConfig { alpha: 1e-3, ..Default::default() },
        ..Default::default()
    };
    let sol = sc_mem_solve(&p, &class, &[0.4, 0.6, -1.0, 1.5, 0.8, 0.8], &cfg).unwrap();
    let m = class.evaluate_raw(p.grid(), sol.model_params.as_ref().unwrap()).unwrap();
    let o = overlap(&sol.object, &m).unwrap();
    assert!(o > 0.999, "overlap {o}");
}

#[test]
fn misspecified_single_gaussian_class_still_gives_two_peaks() {
    let g = bench(0.01, 0);
    let p = g.problem.without_integral_constraints();
    let truth = g.truth.sampled().unwrap();
    let good = sc_mem_solve(
        &p,
        &ModelClass::two_gaussian(),
        &[0.5, 0.5, -1.0, 1.0, 1.0, 1.0],
        &ScMemConfig::default(),
    )
    .unwrap();
    let single = sc_mem_solve(&p, &ModelClass::gaussian(), &[1.0, 0.0, 1.0], &ScMemConfig::default()).unwrap();
    assert_eq!(detect_peaks(&single.object, 0.05).len(), 2);
    let (e_single, e_good) = (rmse(&single.object, truth).unwrap(), rmse(&good.object, truth).unwrap());
    assert!(e_single < 2.0 * e_good, "single {e_single} vs two {e_good}");
}

#[test]
fn self_consistent_variants_share_the_fixed_point() {
    let g = bench(0.01, 5);
    let p = g.problem.without_integral_constraints();
    let class = ModelClass::two_gaussian();
    let f0 = [0.5, 0.5, -1.0, 1.0, 1.0, 1.0];
    let solve = |variant| {
        sc_mem_solve(&p, &class, &f0, &ScMemConfig { variant, ..Default::default() })
            .unwrap()
            .object
    };
    let s = solve(MemVariant::Standard);
    for v in [MemVariant::Direct, MemVariant::Exponential] {
        assert!(rmse(&solve(v), &s).unwrap() < 0.02, "{v:?}");
    }
}
