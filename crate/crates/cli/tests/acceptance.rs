//! Acceptance criteria 1 to 9, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`) so the report reads top to
//! bottom; the process exits nonzero when any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lininv::mem::{
    entropy, likelihood, likelihood_gradient, overlap, sc_mem_solve, std_mem_solve, MemConfig, ModelClass,
    ScMemConfig,
};
use lininv::spectral::{
    fermionic_kernel, generate_benchmark, resolution_experiment, GeneratedBenchmark, ObjectKind, ResolutionConfig,
    SpectralBenchmark,
};
use lininv::svd::{compute_singular_system, constrained_svd_solve, tsvd_solve, ConstrainedSvdConfig};
use lininv::{chi_squared, rmse, ObjectGrid};
use rayon::prelude::*;

const RANK_TOL: f64 = 1e-10;
const TRUE_PARAMS: [f64; 6] = [0.5, 0.5, -1.5, 2.0, 0.5, 0.7];

struct Outcome {
    pass: bool,
    detail: String,
}

fn bench(ntau: usize, noise: f64, seed: u64) -> GeneratedBenchmark {
    generate_benchmark(&SpectralBenchmark {
        ntau,
        noise_level: noise,
        seed,
        ..SpectralBenchmark::standard()
    })
    .expect("benchmark")
}

fn truth(g: &GeneratedBenchmark) -> &[f64] {
    g.truth.sampled().expect("sampled truth")
}

fn total_variation(a: &[f64]) -> f64 {
    a.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

fn within(limit_s: u64, elapsed: Duration, mut o: Outcome) -> Outcome {
    let ok = elapsed < Duration::from_secs(limit_s);
    o.pass &= ok;
    o.detail = format!("{}; runtime {:.2} s (limit {limit_s} s)", o.detail, elapsed.as_secs_f64());
    o
}

fn criterion_1() -> Outcome {
    let ntaus = [5usize, 10, 15, 20, 50, 100];
    let mut err = Vec::new();
    let mut rank = Vec::new();
    for &n in &ntaus {
        let g = bench(n, 0.0, 0);
        let s = tsvd_solve(&g.problem, RANK_TOL, Some(0.0)).expect("svd");
        err.push(rmse(&s.object, truth(&g)).unwrap());
        rank.push(s.system.rank());
    }
    let (e5, e20, e100) = (err[0], err[3], err[5]);
    let (m20, m100) = (rank[3], rank[5]);
    let steep = e20 < 0.5 * e5;
    let gain = (e20 - e100) / e20;
    let saturated = gain < 0.10;
    let rank_ok = m100 >= m20 && m100 - m20 <= 6;
    Outcome {
        pass: steep && saturated && rank_ok,
        detail: format!(
            "RMSE at Ntau {ntaus:?} = {}; drop 5->20 x{:.1} (need > 2) {}; gain 20->100 {:.1}% (need < 10%) {}; M(20) = {m20}, M(100) = {m100} (need difference in [0, 6]) {}",
            list(&err),
            e5 / e20,
            ok(steep),
            100.0 * gain,
            ok(saturated),
            ok(rank_ok)
        ),
    }
}

fn list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", items.join(", "))
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}

fn criterion_2() -> Outcome {
    let cutoffs = [0.1, 0.05, 0.01, 0.001];
    let seeds = 20u64;
    let sums: Vec<f64> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let g = bench(25, 0.01, seed);
            cutoffs
                .iter()
                .map(|&c| rmse(&tsvd_solve(&g.problem, RANK_TOL, Some(c)).unwrap().object, truth(&g)).unwrap())
                .collect::<Vec<_>>()
        })
        .reduce(|| vec![0.0; 4], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    let mean: Vec<f64> = sums.iter().map(|s| s / seeds as f64).collect();
    let best = (0..4).min_by(|&i, &j| mean[i].total_cmp(&mean[j])).unwrap();
    // 0.01 sits at index 2; one sweep step either side is allowed
    let pass = (1..=3).contains(&best);
    Outcome {
        pass,
        detail: format!(
            "mean RMSE over {seeds} seeds at cut-offs {cutoffs:?} = {}; minimum at {}",
            list(&mean),
            cutoffs[best]
        ),
    }
}

fn criterion_3() -> Outcome {
    let seeds = 50u64;
    let ratios: Vec<f64> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let g = bench(25, 0.01, seed);
            let s = tsvd_solve(&g.problem, RANK_TOL, Some(0.01)).unwrap();
            chi_squared(&g.problem, &s.object).unwrap() / 25.0
        })
        .collect();
    let inside = ratios.iter().filter(|r| (0.2..=3.0).contains(*r)).count();
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    Outcome {
        pass: inside * 10 >= 9 * seeds as usize,
        detail: format!(
            "chi2/Ntau in [0.2, 3] on {inside}/{seeds} seeds (need >= 45); median {:.3}, max {:.3}",
            sorted[25], sorted[49]
        ),
    }
}

fn criterion_4() -> Outcome {
    let g = bench(25, 0.01, 0);
    let grid = g.problem.grid();
    let model = ModelClass::two_gaussian().evaluate(grid, &TRUE_PARAMS, 1e-12).unwrap();
    let problem = g.problem.without_integral_constraints();
    let alphas = [1e-4, 1e-2, 1.0, 1e2];
    let sols: Vec<Vec<f64>> = alphas
        .par_iter()
        .map(|&alpha| {
            let cfg = MemConfig { alpha, ..Default::default() };
            std_mem_solve(&problem, &model, &cfg).unwrap().object
        })
        .collect();
    let tv: Vec<f64> = sols.iter().map(|a| total_variation(a)).collect();
    let monotone = tv.windows(2).all(|w| w[1] <= w[0]);
    let to_model: Vec<f64> = sols.iter().map(|a| rmse(a, &model).unwrap()).collect();
    let closer = to_model[3] < to_model[0];
    Outcome {
        pass: monotone && closer,
        detail: format!(
            "alpha {alphas:?}: total variation {} monotone {}; RMSE to model {}, large-alpha closer {}",
            list(&tv),
            ok(monotone),
            list(&to_model),
            ok(closer)
        ),
    }
}

fn criterion_5() -> Outcome {
    let g = bench(25, 0.01, 0);
    let problem = g.problem.without_integral_constraints();
    let class = ModelClass::two_gaussian();
    let starts: [[f64; 6]; 3] = [
        [0.5, 0.5, -1.0, 1.0, 1.0, 1.0],
        [0.3, 0.7, -2.5, 2.5, 0.5, 1.5],
        [0.8, 0.2, 0.0, 3.0, 2.0, 0.3],
    ];
    let sols: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|f0| sc_mem_solve(&problem, &class, f0, &ScMemConfig::default()).unwrap().object)
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in i + 1..3 {
            worst = worst.max(rmse(&sols[i], &sols[j]).unwrap());
        }
    }
    Outcome {
        pass: worst < 0.02,
        detail: format!("largest pairwise RMSE between 3 starts {worst:.3e} (need < 0.02)"),
    }
}

fn criterion_6() -> Outcome {
    let g = bench(25, 0.01, 0);
    let grid = g.problem.grid().clone();
    let flat = vec![1.0 / (grid.b() - grid.a()); grid.len()];
    let mem = std_mem_solve(&g.problem, &flat, &MemConfig::default()).unwrap();
    let mem_res: Vec<f64> = g
        .problem
        .integral_constraints()
        .iter()
        .map(|c| c.residual(&grid, &mem.object).unwrap())
        .collect();
    let mem_ok = mem_res.iter().all(|r| r.abs() < 1e-3);

    let t = tsvd_solve(&g.problem, RANK_TOL, None).unwrap();
    let coeffs = t.coeffs.truncated(t.r_cut).unwrap();
    let constraints = g.problem.integral_constraints().to_vec();
    let csvd = constrained_svd_solve(&g.problem, &t.system, &coeffs, &constraints, &ConstrainedSvdConfig::default());
    let (svd_ok, svd_detail) = match csvd {
        Ok(s) => {
            let rel: Vec<f64> = s
                .residuals
                .iter()
                .zip(&constraints)
                .map(|(r, c)| r.abs() / c.target().abs())
                .collect();
            (rel.iter().all(|r| *r < 1e-6), format!("constrained SVD |residual|/|c| {}", list(&rel)))
        }
        Err(e) => (false, format!("constrained SVD failed: {e}")),
    };
    Outcome {
        pass: mem_ok && svd_ok,
        detail: format!(
            "StdMEM penalty residuals {} (need < 1e-3) {}; {svd_detail} (need < 1e-6) {}",
            list(&mem_res),
            ok(mem_ok),
            ok(svd_ok)
        ),
    }
}

fn criterion_7() -> Outcome {
    let cfg = ResolutionConfig::default();
    let result = resolution_experiment(&cfg, |g| Ok(tsvd_solve(&g.problem, RANK_TOL, None)?.object)).unwrap();
    let limits: Vec<Option<f64>> = result.limits.iter().map(|(_, m)| *m).collect();
    let finite = limits.iter().all(Option::is_some);
    // betas ascend, so temperatures descend: a limit that does not grow with
    // temperature must not shrink along the beta order
    let monotone = finite && limits.windows(2).all(|w| w[1].unwrap() >= w[0].unwrap());
    let mut checked = 0;
    let mut bad = Vec::new();
    for row in &result.rows {
        let (_, Some(min)) = result.limits.iter().find(|(b, _)| *b == row.beta).copied().unwrap() else {
            continue;
        };
        if row.half_gap >= 1.5 * min - 1e-12 && row.half_gap > 0.0 {
            checked += 1;
            if (row.reconstructed_gap - row.true_gap).abs() > 0.15 * row.true_gap {
                bad.push(format!("(beta {}, D0 {:.2}: {:.2} vs {:.2})", row.beta, row.half_gap, row.reconstructed_gap, row.true_gap));
            }
        }
    }
    let agree = finite && bad.is_empty();
    Outcome {
        pass: finite && monotone && agree,
        detail: format!(
            "(a) D0_min per beta [{}] {}; (b) non-increasing in T {}; (c) gap within 15% on {}/{checked} cells {}{}",
            result
                .limits
                .iter()
                .map(|(b, m)| format!("{b}: {}", m.map_or("none".to_string(), |m| format!("{m:.2}"))))
                .collect::<Vec<_>>()
                .join(", "),
            ok(finite),
            ok(monotone),
            checked - bad.len(),
            ok(agree),
            if bad.is_empty() { String::new() } else { format!(", off: {}", bad.join(" ")) }
        ),
    }
}

fn sign_changes(u: &[f64]) -> usize {
    let tol = 1e-6 * u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let signs: Vec<bool> = u.iter().filter(|v| v.abs() > tol).map(|v| *v > 0.0).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

fn criterion_8() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, pass: bool, what: String| {
        if !pass {
            failures.push(format!("{name}: {what}"));
        }
    };

    // likelihood gradient against central differences
    let g = bench(25, 0.01, 3);
    let p = g.problem.without_integral_constraints();
    let n = p.n_grid();
    let m = vec![0.1; n];
    let a: Vec<f64> = truth(&g).iter().map(|v| v + 0.02).collect();
    let grad = likelihood_gradient(&p, &a, &m, 0.7).unwrap();
    let mut worst: f64 = 0.0;
    for j in (0..n).step_by(10) {
        let h = 1e-6 * a[j];
        let mut up = a.clone();
        let mut dn = a.clone();
        up[j] += h;
        dn[j] -= h;
        let fd = (likelihood(&p, &up, &m, 0.7).unwrap() - likelihood(&p, &dn, &m, 0.7).unwrap()) / (2.0 * h);
        worst = worst.max((fd - grad[j]).abs() / grad[j].abs().max(1e-3));
    }
    check("gradient", worst < 1e-5, format!("relative error {worst:.2e}"));

    // shifted eigenvalue relations and node counts
    let g = bench(25, 0.0, 0);
    let sys = compute_singular_system(&g.problem, RANK_TOL).unwrap();
    let k = g.problem.kmatrix();
    let l1 = sys.lambdas()[0];
    let mut res: f64 = 0.0;
    for i in 0..sys.rank() {
        let li = sys.lambdas()[i];
        let ku = k * sys.u().column(i) - sys.v().column(i) * li;
        let kv = k.transpose() * sys.v().column(i) - sys.u().column(i) * li;
        res = res.max(ku.norm()).max(kv.norm());
    }
    check("shifted eigenvalues", res < 1e-8 * l1, format!("residual {:.2e} λ1", res / l1));
    let nodes: Vec<usize> = (0..10.min(sys.rank())).map(|i| sign_changes(&sys.u_vec(i))).collect();
    let expected: Vec<usize> = (0..nodes.len()).collect();
    check("nodes", nodes == expected, format!("sign changes {nodes:?}"));

    // kernel reflection K(x, β − y) = K(−x, y)
    let beta = 10.0;
    let mut kw: f64 = 0.0;
    for i in 0..=40 {
        let x = -20.0 + i as f64;
        for j in 0..=10 {
            let y = beta * j as f64 / 10.0;
            let l = fermionic_kernel(x, beta - y, beta).unwrap();
            let r = fermionic_kernel(-x, y, beta).unwrap();
            kw = kw.max((l - r).abs() / l.abs().max(r.abs()).max(1e-300));
        }
    }
    check("kernel reflection", kw < 1e-12, format!("relative difference {kw:.2e}"));

    // G(0) + G(β) = −(1/2π) ∫A dx
    let two_pi = 2.0 * std::f64::consts::PI;
    let g = bench(25, 0.0, 0);
    let lhs = g.clean[0] + g.clean[24];
    let rhs = -g.normalization;
    check("sum rule", (lhs - rhs).abs() < 1e-6 * rhs.abs(), format!("{lhs:.10} vs {rhs:.10}"));
    let d = generate_benchmark(&SpectralBenchmark {
        object: ObjectKind::DeltaPair { half_gap: 0.7 },
        ..SpectralBenchmark::standard()
    })
    .unwrap();
    let dsum = d.clean[0] + d.clean[24];
    check("delta sum rule", (dsum + 2.0 / two_pi).abs() < 1e-12, format!("{dsum}"));

    // entropy is maximal (zero) at A = M among objects of the same total
    let m: Vec<f64> = (0..50).map(|i| 0.1 + 0.01 * i as f64).collect();
    let at_m = entropy(&m, &m).unwrap();
    let mut below = true;
    for s in [-0.09, -0.01, 1e-4, 0.01, 0.09] {
        let a: Vec<f64> = m.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { s } else { -s }).collect();
        below &= entropy(&a, &m).unwrap() < at_m;
    }
    check("entropy maximum", at_m.abs() < 1e-15 && below, format!("S(M, M) = {at_m:e}"));

    // overlap in [0, 1], 1 at equality, invariant under scaling
    let grid = ObjectGrid::new(-5.0, 5.0, 101).unwrap();
    let a = grid.sample(|x| (-x * x).exp());
    let b = grid.sample(|x| (-(x - 1.0) * (x - 1.0)).exp() + 0.1);
    let o = overlap(&a, &b).unwrap();
    let scaled: Vec<f64> = b.iter().map(|v| 7.5 * v).collect();
    let os = overlap(&a, &scaled).unwrap();
    let self_o = overlap(&a, &a).unwrap();
    check(
        "overlap",
        (0.0..=1.0).contains(&o) && (o - os).abs() < 1e-14 && (self_o - 1.0).abs() < 1e-14,
        format!("{o} {os} {self_o}"),
    );

    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            "gradient, shifted eigenvalues, node counts, kernel reflection, sum rule, entropy maximum and overlap checks hold".into()
        } else {
            failures.join("; ")
        },
    }
}

fn run_cli(args: &[&str]) -> PathBuf {
    let out = Command::new(env!("CARGO_BIN_EXE_lininv")).args(args).output().expect("spawn lininv");
    assert!(
        out.status.success(),
        "lininv {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
}

/// Every file of a run directory, with the recorded output root removed
/// from the manifest.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let name = e.file_name().to_string_lossy().into_owned();
            let mut bytes = fs::read(e.path()).unwrap();
            if name == "manifest.txt" {
                let text = String::from_utf8(bytes).unwrap();
                bytes = text
                    .lines()
                    .filter(|l| !l.starts_with("# output_root="))
                    .flat_map(|l| format!("{l}\n").into_bytes())
                    .collect();
            }
            (name, bytes)
        })
        .collect();
    files.sort();
    files
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();
    let mut notes = Vec::new();
    let mut pass = true;
    let runs: [&[&str]; 4] = [
        &["solve", "--solver", "csvd", "--noise", "0.01", "--seed", "7"],
        &["solve", "--solver", "scmem", "--noise", "0.01", "--max-outer", "5"],
        &["sweep", "--solver", "stdmem", "--noise", "0.01", "--sweep-seeds", "2"],
        &["resolution", "--betas", "5,10", "--half-gaps", "0:1:0.1"],
    ];
    for (k, args) in runs.iter().enumerate() {
        let r1 = root(&format!("a{k}"));
        let r2 = root(&format!("b{k}"));
        let mut first: Vec<&str> = args.to_vec();
        first.extend(["--output-root", &r1, "--workers", "1"]);
        let d1 = run_cli(&first);
        let manifest = d1.join("manifest.txt").to_string_lossy().into_owned();
        let cmd = args[0];
        let d2 = run_cli(&[cmd, "--config", &manifest, "--output-root", &r2, "--workers", "4"]);
        let before = fs::read(&manifest).unwrap();
        let d3 = run_cli(&[cmd, "--config", &manifest, "--output-root", &r1, "--force"]);
        let same_root = fs::read(d3.join("manifest.txt")).unwrap() == before;
        let same = snapshot(&d1) == snapshot(&d2) && d1.file_name() == d2.file_name();
        pass &= same && same_root && d1 == d3;
        notes.push(format!("{cmd}: {} files {}", snapshot(&d1).len(), ok(same && same_root)));
    }
    Outcome {
        pass,
        detail: format!("rerun from manifest byte-identical: {}", notes.join(", ")),
    }
}

type Criterion = (usize, Option<u64>, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, Some(10), criterion_1),
        (2, Some(30), criterion_2),
        (3, None, criterion_3),
        (4, None, criterion_4),
        (5, Some(120), criterion_5),
        (6, None, criterion_6),
        (7, Some(300), criterion_7),
        (8, None, criterion_8),
        (9, None, criterion_9),
    ];
    let mut failed = Vec::new();
    for (id, limit, f) in criteria {
        let start = Instant::now();
        let mut o = f();
        if let Some(limit) = limit {
            o = within(limit, start.elapsed(), o);
        }
        println!("criterion {id}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 9 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
