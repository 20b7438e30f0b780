//! Iterated least squares with mixing.

use nalgebra::DVector;

use super::{check_divergence, floored_model, IterateRecord, IterateSink, MemConfig, MemSolution, Objective};
use crate::error::Result;
use crate::linalg::spd_solve;
use crate::problem::DiscretizedProblem;

pub fn std_mem_solve(problem: &DiscretizedProblem, model: &[f64], config: &MemConfig) -> Result<MemSolution> {
    std_mem_solve_with_sink(problem, model, config, &mut |_| {})
}

/// Starting from `A0 = M`, each step solves the quadratic model of the
/// likelihood around `A0` in closed form and moves a fraction `ξ` of the way
/// to its minimizer.
///
/// The fraction is shortened so that no component loses more than half its
/// value in one step, and halved further while the penalized likelihood
/// would increase. Convergence is judged on the nominal step `ξ‖A_ls − A0‖`
/// so that a shortened step never reads as convergence.
pub fn std_mem_solve_with_sink(
    problem: &DiscretizedProblem,
    model: &[f64],
    config: &MemConfig,
    sink: IterateSink<'_>,
) -> Result<MemSolution> {
    config.validate()?;
    let (model, floor) = floored_model(model, config.floor_rel)?;
    let obj = Objective::new(problem, &model, config.alpha)?;
    let eps = config.eps_for(&model);
    let alpha = obj.alpha();
    let h_smooth = obj.smooth_hessian();
    let mut rhs_smooth = obj.rhs0().clone();
    for (g, c, th) in obj.constraints() {
        rhs_smooth.axpy(2.0 * th * c, g, 1.0);
    }
    let log_m: Vec<f64> = model.iter().map(|m| m.ln()).collect();

    let mut a0 = DVector::from_column_slice(&model);
    let mut f_prev = obj.value(&a0);
    let mut history = vec![obj.record(0, &a0, f_prev)];
    sink(&history[0]);
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=config.max_iters {
        iterations = it;
        let mut h = h_smooth.clone();
        let mut rhs = rhs_smooth.clone();
        for j in 0..a0.len() {
            let l = a0[j].ln() - log_m[j];
            let gamma = a0[j] * (1.0 - l);
            h[(j, j)] += alpha / a0[j];
            rhs[j] += alpha * gamma / a0[j];
        }
        let a_ls = spd_solve(&h, &rhs)?;
        check_divergence(it, &a_ls)?;
        let d = a_ls - &a0;
        let nominal = config.xi * d.norm();

        let mut step = config.xi;
        for j in 0..d.len() {
            if d[j] < 0.0 {
                step = step.min(0.5 * a0[j] / -d[j]);
            }
        }
        let mut accepted = None;
        while step >= 1e-12 * config.xi {
            let trial = (&a0 + &d * step).map(|v| v.max(floor));
            let f_trial = obj.value(&trial);
            if f_trial <= f_prev + 1e-13 * f_prev.abs() {
                accepted = Some((trial, f_trial));
                break;
            }
            step *= 0.5;
        }
        let Some((next, f_next)) = accepted else {
            log::warn!("std MEM: no decrease along the least-squares direction at iteration {it}");
            converged = nominal < eps;
            break;
        };
        check_divergence(it, &next)?;
        a0 = next;
        f_prev = f_next;
        let rec: IterateRecord = obj.record(it, &a0, f_prev);
        sink(&rec);
        history.push(rec);
        if nominal < eps {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("std MEM stopped after {iterations} iterations without meeting eps = {eps:e}");
    }
    Ok(MemSolution {
        object: a0.iter().copied().collect(),
        f_value: f_prev,
        iterations,
        converged,
        model_params: None,
        model,
        clamped: false,
        history,
    })
}
