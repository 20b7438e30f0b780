//! Direct minimization of the likelihood by a primal barrier method.

use nalgebra::DVector;

use super::{check_divergence, floored_model, IterateSink, MemConfig, MemSolution, Objective};
use crate::error::Result;
use crate::linalg::spd_solve;
use crate::problem::DiscretizedProblem;

const FRACTION_TO_BOUNDARY: f64 = 0.995;
const ARMIJO: f64 = 1e-4;

pub fn mem_solve_direct(problem: &DiscretizedProblem, model: &[f64], config: &MemConfig) -> Result<MemSolution> {
    mem_solve_direct_with_sink(problem, model, config, &mut |_| {})
}

/// Newton iterations on `F(A) − μ Σ log A_j` for a decreasing sequence of
/// barrier weights `μ`, with an Armijo line search and a fraction-to-boundary
/// rule keeping every `A_j` strictly positive. `ξ` is unused.
pub fn mem_solve_direct_with_sink(
    problem: &DiscretizedProblem,
    model: &[f64],
    config: &MemConfig,
    sink: IterateSink<'_>,
) -> Result<MemSolution> {
    config.validate()?;
    let (model, _) = floored_model(model, config.floor_rel)?;
    let obj = Objective::new(problem, &model, config.alpha)?;
    let eps = config.eps_for(&model);
    let alpha = obj.alpha();
    let h_smooth = obj.smooth_hessian();
    let mean_m = model.iter().sum::<f64>() / model.len() as f64;

    let mut a = DVector::from_column_slice(&model);
    let mut history = vec![obj.record(0, &a, obj.value(&a))];
    sink(&history[0]);
    let mut mu = 1e-2 * alpha * mean_m;
    let mu_min = 1e-14 * alpha * mean_m;
    let mut iterations = 0;
    let mut converged = false;

    let barrier = |a: &DVector<f64>, mu: f64| obj.value(a) - mu * a.iter().map(|v| v.ln()).sum::<f64>();

    'outer: loop {
        let mut stage_done = false;
        while iterations < config.max_iters {
            iterations += 1;
            let mut grad = obj.gradient(&a);
            let mut h = h_smooth.clone();
            for j in 0..a.len() {
                grad[j] -= mu / a[j];
                h[(j, j)] += alpha / a[j] + mu / (a[j] * a[j]);
            }
            let d = spd_solve(&h, &(-&grad))?;
            let slope = grad.dot(&d);
            let mut t: f64 = 1.0;
            for j in 0..d.len() {
                if d[j] < 0.0 {
                    t = t.min(FRACTION_TO_BOUNDARY * a[j] / -d[j]);
                }
            }
            let phi0 = barrier(&a, mu);
            let mut moved = false;
            while t > 1e-14 {
                let trial = &a + &d * t;
                if trial.iter().all(|v| *v > 0.0) && barrier(&trial, mu) <= phi0 + ARMIJO * t * slope {
                    a = trial;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            check_divergence(iterations, &a)?;
            let rec = obj.record(iterations, &a, obj.value(&a));
            sink(&rec);
            history.push(rec);
            let step_norm = if moved { t * d.norm() } else { 0.0 };
            if step_norm < 1e-3 * eps || -slope < 1e-14 * (1.0 + phi0.abs()) || !moved {
                stage_done = true;
                break;
            }
        }
        if !stage_done {
            break 'outer;
        }
        if mu <= mu_min {
            converged = true;
            break;
        }
        mu = (mu * 0.1).max(mu_min);
    }
    if !converged {
        log::warn!("direct MEM stopped after {iterations} Newton steps without converging");
    }
    let f_value = obj.value(&a);
    Ok(MemSolution {
        object: a.iter().copied().collect(),
        f_value,
        iterations,
        converged,
        model_params: None,
        model,
        clamped: false,
        history,
    })
}
