//! Execution of a resolved configuration: benchmark generation, solver
//! dispatch and the files of one run directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use lininv::mem::{
    exp_mem_solve, mem_solve_direct, sc_mem_solve, std_mem_solve, MemConfig, MemSolution, MemVariant, ModelClass,
    ScMemConfig,
};
use lininv::spectral::{
    generate_benchmark, resolution_experiment, GeneratedBenchmark, ObjectKind, ResolutionConfig, SpectralBenchmark,
    Truth,
};
use lininv::svd::{constrained_svd_solve, tsvd_solve, ConstrainedSvdConfig, CostFunctional};
use lininv::{chi_squared, rmse, ObjectGrid, SupportInterval};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{Command, ConfigErrors, CostChoice, ModelChoice, ObjectChoice, RunConfig, SolverKind, Variant};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigErrors),
    #[error("solver failed: {0}")]
    Solver(#[from] lininv::Error),
    #[error("output directory {} exists; pass --force to overwrite", .0.display())]
    Exists(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Solver(_) => 3,
            Self::Exists(_) => 4,
            Self::Io { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Full-precision number: 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Reconstruction and the diagnostics that go into `metrics.csv`.
#[derive(Debug, Clone)]
pub struct Solved {
    pub object: Vec<f64>,
    pub metrics: Vec<(String, String)>,
    /// `r_cut` for the SVD solvers, iterations for the entropy solvers
    pub effort: usize,
    /// singular values, empty for the entropy solvers
    pub spectrum: Vec<f64>,
}

pub fn benchmark_for(cfg: &RunConfig, seed: u64) -> Result<SpectralBenchmark, RunError> {
    Ok(SpectralBenchmark {
        beta: cfg.beta,
        ntau: cfg.ntau,
        grid: ObjectGrid::new(cfg.grid_a, cfg.grid_b, cfg.grid_n)?,
        object: match cfg.object {
            ObjectChoice::TwoGaussian => ObjectKind::TwoGaussian,
            ObjectChoice::DeltaPair => ObjectKind::DeltaPair { half_gap: cfg.half_gap },
        },
        noise_level: cfg.noise,
        seed,
        support: support_of(cfg)?,
    })
}

fn support_of(cfg: &RunConfig) -> Result<Option<SupportInterval>, RunError> {
    Ok(match cfg.support {
        Some((lo, hi)) => Some(SupportInterval::new(lo, hi)?),
        None => None,
    })
}

/// True object on the grid; a delta pair is spread as mass 1/dx on the
/// nearest grid point of each delta.
pub fn truth_on_grid(truth: &Truth, grid: &ObjectGrid) -> Vec<f64> {
    match truth {
        Truth::Sampled(v) => v.clone(),
        Truth::DeltaPair { half_gap } => {
            let mut out = vec![0.0; grid.len()];
            for x in [-half_gap, *half_gap] {
                let j = ((x - grid.a()) / grid.dx()).round();
                if j >= 0.0 && (j as usize) < grid.len() {
                    out[j as usize] += 1.0 / grid.dx();
                }
            }
            out
        }
    }
}

pub fn total_variation(a: &[f64]) -> f64 {
    a.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

fn model_class(choice: ModelChoice) -> Option<ModelClass> {
    match choice {
        ModelChoice::Flat => None,
        ModelChoice::Gaussian => Some(ModelClass::gaussian()),
        ModelChoice::TwoGaussian => Some(ModelClass::two_gaussian()),
    }
}

fn mem_config(cfg: &RunConfig) -> MemConfig {
    MemConfig {
        alpha: cfg.alpha,
        xi: cfg.xi,
        eps: cfg.eps,
        max_iters: cfg.max_iters,
        ..MemConfig::default()
    }
}

/// Runs the configured solver on one generated benchmark.
pub fn solve(cfg: &RunConfig, gen: &GeneratedBenchmark) -> Result<Solved, RunError> {
    let problem = &gen.problem;
    let grid = problem.grid();
    let selected: Vec<_> = problem
        .integral_constraints()
        .iter()
        .filter(|c| (c.name() == "normalization" && cfg.normalization) || (c.name() == "sum_rule" && cfg.sum_rule))
        .map(|c| match cfg.theta {
            Some(th) => c.clone().with_stiffness(th),
            None => Ok(c.clone()),
        })
        .collect::<Result<_, _>>()?;
    let mut metrics = Vec::new();
    let (object, effort, spectrum) = match cfg.solver {
        SolverKind::Svd | SolverKind::Tsvd | SolverKind::Csvd => {
            let cutoff = if cfg.solver == SolverKind::Svd { Some(0.0) } else { cfg.cutoff };
            let t = tsvd_solve(problem, cfg.rank_tol, cutoff)?;
            metrics.push(("rank".into(), t.system.rank().to_string()));
            metrics.push(("threshold".into(), num(t.threshold)));
            metrics.push(("r_cut".into(), t.r_cut.to_string()));
            let object = if cfg.solver == SolverKind::Csvd {
                let csvd = ConstrainedSvdConfig {
                    cost: match cfg.csvd_cost {
                        CostChoice::Chi2 => CostFunctional::ChiSquared,
                        CostChoice::Norm => CostFunctional::Norm,
                    },
                    ..ConstrainedSvdConfig::default()
                };
                let coeffs = t.coeffs.truncated(t.r_cut)?;
                let s = constrained_svd_solve(problem, &t.system, &coeffs, &selected, &csvd)?;
                metrics.push(("csvd_cost".into(), num(s.cost)));
                metrics.push(("penalty_steps".into(), s.penalty_steps.to_string()));
                s.object
            } else {
                t.object
            };
            (object, t.r_cut, t.system.lambdas().to_vec())
        }
        _ => {
            let mut mem_problem = problem.without_integral_constraints();
            for c in selected {
                mem_problem = mem_problem.with_integral_constraint(c);
            }
            let inner = mem_config(cfg);
            let sol: MemSolution = if cfg.solver == SolverKind::ScMem {
                let class = model_class(cfg.model).expect("validated: scmem has a model class");
                let sc = ScMemConfig {
                    inner,
                    variant: match cfg.variant {
                        Variant::Std => MemVariant::Standard,
                        Variant::Direct => MemVariant::Direct,
                        Variant::Exp => MemVariant::Exponential,
                    },
                    max_outer: cfg.max_outer,
                    outer_eps: cfg.outer_eps,
                };
                sc_mem_solve(&mem_problem, &class, &cfg.model_params, &sc)?
            } else {
                let model = match model_class(cfg.model) {
                    None => vec![cfg.model_params[0]; grid.len()],
                    Some(class) => class.evaluate(grid, &cfg.model_params, inner.floor_rel)?,
                };
                match cfg.solver {
                    SolverKind::StdMem => std_mem_solve(&mem_problem, &model, &inner)?,
                    SolverKind::Mem => mem_solve_direct(&mem_problem, &model, &inner)?,
                    _ => exp_mem_solve(&mem_problem, &model, &inner)?,
                }
            };
            metrics.push(("iterations".into(), sol.iterations.to_string()));
            metrics.push(("converged".into(), sol.converged.to_string()));
            metrics.push(("f_value".into(), num(sol.f_value)));
            metrics.push(("clamped".into(), sol.clamped.to_string()));
            if let Some(p) = &sol.model_params {
                for (i, v) in p.iter().enumerate() {
                    metrics.push((format!("model_param_{}", i + 1), num(*v)));
                }
            }
            (sol.object, sol.iterations, Vec::new())
        }
    };

    if let Some(truth) = gen.truth.sampled() {
        metrics.push(("rmse".into(), num(rmse(&object, truth)?)));
    }
    let chi2 = chi_squared(problem, &object)?;
    metrics.push(("chi2".into(), num(chi2)));
    metrics.push(("chi2_per_point".into(), num(chi2 / problem.n_data() as f64)));
    metrics.push(("total_variation".into(), num(total_variation(&object))));
    for c in problem.integral_constraints() {
        metrics.push((format!("residual_{}", c.name()), num(c.residual(grid, &object)?)));
    }
    for (i, l) in spectrum.iter().enumerate() {
        metrics.push((format!("lambda_{:03}", i + 1), num(*l)));
    }
    Ok(Solved {
        object,
        metrics,
        effort,
        spectrum,
    })
}

fn manifest_text(cfg: &RunConfig, root: &Path) -> String {
    format!(
        "# lininv run manifest; pass to --config to repeat the run\n# output_root={}\n{}",
        root.display(),
        cfg.to_kv_text()
    )
}

/// `<command>-<first 16 hex digits of the SHA-256 of the resolved config>`.
pub fn run_dir_name(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(cfg.to_kv_text().as_bytes());
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("{}-{hex}", cfg.command.name())
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), RunError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(io_err(&path))
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn data_csv(gen: &GeneratedBenchmark) -> String {
    let d = gen.problem.data();
    csv(
        "y,g_true,g_noisy,sigma",
        (0..d.len()).map(|i| {
            format!(
                "{},{},{},{}",
                num(d.y()[i]),
                num(gen.clean[i]),
                num(d.values()[i]),
                num(d.sigmas()[i])
            )
        }),
    )
}

fn solution_csv(grid: &ObjectGrid, truth: &[f64], solved: &[f64]) -> String {
    csv(
        "x,a_true,a_solved",
        grid.points()
            .iter()
            .zip(truth)
            .zip(solved)
            .map(|((x, t), a)| format!("{},{},{}", num(*x), num(*t), num(*a))),
    )
}

fn metrics_csv(metrics: &[(String, String)]) -> String {
    csv("metric,value", metrics.iter().map(|(k, v)| format!("{k},{v}")))
}

/// Creates the run directory under `root` and writes every output file.
/// Returns the directory.
pub fn execute(cfg: &RunConfig, root: &Path, force: bool, workers: usize) -> Result<PathBuf, RunError> {
    let dir = root.join(run_dir_name(cfg));
    if dir.exists() {
        if !force {
            return Err(RunError::Exists(dir));
        }
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunError::Io {
            path: dir.clone(),
            source: io::Error::other(e),
        })?;
    // compute first so a failing solver leaves no directory behind
    let files = pool.install(|| outputs(cfg))?;
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for (name, text) in &files {
        write(&dir, name, text)?;
    }
    write(&dir, "manifest.txt", &manifest_text(cfg, root))?;
    Ok(dir)
}

/// Every output file of the run except the manifest, as `(name, contents)`.
pub fn outputs(cfg: &RunConfig) -> Result<Vec<(String, String)>, RunError> {
    match cfg.command {
        Command::Generate => {
            let gen = generate_benchmark(&benchmark_for(cfg, cfg.seed)?)?;
            let grid = gen.problem.grid();
            let truth = truth_on_grid(&gen.truth, grid);
            let metrics = vec![
                ("normalization".to_string(), num(gen.normalization)),
                ("sum_rule".to_string(), num(gen.sum_rule)),
            ];
            Ok(vec![
                ("data.csv".into(), data_csv(&gen)),
                (
                    "truth.csv".into(),
                    csv(
                        "x,a_true",
                        grid.points().iter().zip(&truth).map(|(x, t)| format!("{},{}", num(*x), num(*t))),
                    ),
                ),
                ("metrics.csv".into(), metrics_csv(&metrics)),
            ])
        }
        Command::Solve => {
            let gen = generate_benchmark(&benchmark_for(cfg, cfg.seed)?)?;
            let solved = solve(cfg, &gen)?;
            let grid = gen.problem.grid();
            Ok(vec![
                ("data.csv".into(), data_csv(&gen)),
                (
                    "solution.csv".into(),
                    solution_csv(grid, &truth_on_grid(&gen.truth, grid), &solved.object),
                ),
                ("metrics.csv".into(), metrics_csv(&solved.metrics)),
            ])
        }
        Command::Sweep => sweep(cfg),
        Command::Resolution => resolution(cfg),
    }
}

/// The swept parameter: cut-offs for the SVD solvers, α for the entropy
/// solvers.
pub fn sweep_values(cfg: &RunConfig) -> (&'static str, &[f64]) {
    if cfg.solver.is_svd() {
        ("cutoff", &cfg.cutoffs)
    } else {
        ("alpha", &cfg.alphas)
    }
}

fn sweep(cfg: &RunConfig) -> Result<Vec<(String, String)>, RunError> {
    let (param, values) = sweep_values(cfg);
    let cells: Vec<(usize, f64, u64)> = values
        .iter()
        .flat_map(|&v| (0..cfg.sweep_seeds).map(move |k| (v, cfg.seed.wrapping_add(k as u64))))
        .enumerate()
        .map(|(i, (v, s))| (i, v, s))
        .collect();
    let results: Vec<(Solved, String, Option<f64>)> = cells
        .par_iter()
        .map(|&(_, v, seed)| {
            let mut c = cfg.clone();
            if cfg.solver.is_svd() {
                c.cutoff = Some(v);
                if c.solver == SolverKind::Svd {
                    c.solver = SolverKind::Tsvd;
                }
            } else {
                c.alpha = v;
            }
            let gen = generate_benchmark(&benchmark_for(&c, seed)?)?;
            let solved = solve(&c, &gen)?;
            let grid = gen.problem.grid();
            let text = solution_csv(grid, &truth_on_grid(&gen.truth, grid), &solved.object);
            let err = gen.truth.sampled().map(|t| rmse(&solved.object, t)).transpose()?;
            Ok((solved, text, err))
        })
        .collect::<Result<_, RunError>>()?;

    let mut files = Vec::new();
    let mut rows = Vec::new();
    for (&(i, v, seed), (solved, text, err)) in cells.iter().zip(&results) {
        files.push((format!("solution-{:03}.csv", i + 1), text.clone()));
        let get = |k: &str| solved.metrics.iter().find(|(m, _)| m == k).map(|(_, x)| x.clone()).unwrap_or_default();
        rows.push(format!(
            "{},{},{},{},{},{},{}",
            i + 1,
            num(v),
            seed,
            err.map_or_else(|| "nan".into(), num),
            get("chi2_per_point"),
            get("total_variation"),
            solved.effort
        ));
    }
    let effort = if cfg.solver.is_svd() { "r_cut" } else { "iterations" };
    files.push((
        "sweep.csv".into(),
        csv(
            &format!("cell,{param},seed,rmse,chi2_per_point,total_variation,{effort}"),
            rows,
        ),
    ));
    let summary = values.iter().enumerate().map(|(k, &v)| {
        let block = &results[k * cfg.sweep_seeds..(k + 1) * cfg.sweep_seeds];
        let n = block.len() as f64;
        let mean_rmse = block.iter().map(|(_, _, e)| e.unwrap_or(f64::NAN)).sum::<f64>() / n;
        let mean_tv = block.iter().map(|(s, _, _)| total_variation(&s.object)).sum::<f64>() / n;
        format!("{},{},{}", num(v), num(mean_rmse), num(mean_tv))
    });
    files.push((
        "sweep_summary.csv".into(),
        csv(&format!("{param},mean_rmse,mean_total_variation"), summary),
    ));
    Ok(files)
}

fn resolution(cfg: &RunConfig) -> Result<Vec<(String, String)>, RunError> {
    let rc = ResolutionConfig {
        betas: cfg.betas.clone(),
        half_gaps: cfg.half_gaps.clone(),
        ntau: cfg.ntau,
        grid: ObjectGrid::new(cfg.grid_a, cfg.grid_b, cfg.grid_n)?,
        support: support_of(cfg)?,
        noise_level: cfg.noise,
        seed: cfg.seed,
        prominence_tol: cfg.prominence,
    };
    let result = resolution_experiment(&rc, |gen| {
        solve(cfg, gen).map(|s| s.object).map_err(|e| match e {
            RunError::Solver(e) => e,
            other => lininv::Error::InvalidArgument(other.to_string()),
        })
    })?;
    let rows = result.rows.iter().map(|r| {
        format!(
            "{},{},{},{},{},{}",
            num(r.beta),
            num(r.half_gap),
            num(r.true_gap),
            r.n_peaks,
            num(r.reconstructed_gap),
            r.bimodal
        )
    });
    let limits = result
        .limits
        .iter()
        .map(|(b, m)| format!("{},{}", num(*b), m.map_or_else(|| "nan".into(), num)));
    Ok(vec![
        (
            "resolution.csv".into(),
            csv("beta,half_gap,true_gap,n_peaks,reconstructed_gap,bimodal", rows),
        ),
        ("limits.csv".into(), csv("beta,half_gap_min", limits)),
    ])
}
