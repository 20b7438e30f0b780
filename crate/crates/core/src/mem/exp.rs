//! Likelihood minimization in the exponent `f` of `A = M·e^f`.

use nalgebra::DVector;

use super::{check_divergence, IterateSink, MemConfig, MemSolution, Objective};
use crate::error::{check_len, Error, Result};
use crate::linalg::spd_solve;
use crate::problem::DiscretizedProblem;

/// Bound on `|f_j|`.
pub const EXPONENT_CLAMP: f64 = 40.0;
const ARMIJO: f64 = 1e-4;

pub fn exp_mem_solve(problem: &DiscretizedProblem, model: &[f64], config: &MemConfig) -> Result<MemSolution> {
    exp_mem_solve_with_sink(problem, model, config, &mut |_| {})
}

/// Levenberg-damped Newton steps in `f`; no logarithm of `A` is ever taken,
/// so models with vanishing tails are accepted as long as they are positive.
/// `ξ` and the positivity floor are unused.
pub fn exp_mem_solve_with_sink(
    problem: &DiscretizedProblem,
    model: &[f64],
    config: &MemConfig,
    sink: IterateSink<'_>,
) -> Result<MemSolution> {
    config.validate()?;
    check_len("model", problem.n_grid(), model.len())?;
    if let Some(i) = model.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(Error::Domain(format!("model[{i}] = {} must be positive", model[i])));
    }
    let obj = Objective::new(problem, model, config.alpha)?;
    let eps = config.eps_for(model);
    let alpha = obj.alpha();
    let h_smooth = obj.smooth_hessian();
    let m = DVector::from_column_slice(model);
    let to_a = |f: &DVector<f64>| m.component_mul(&f.map(f64::exp));

    let mut f = DVector::zeros(model.len());
    let mut a = to_a(&f);
    let mut value = obj.value_exp(&f, &a);
    let mut history = vec![obj.record(0, &a, value)];
    sink(&history[0]);
    let mut clamped = false;
    let mut converged = false;
    let mut iterations = 0;
    let mut damping = 1e-6;

    while iterations < config.max_iters {
        iterations += 1;
        let ga = obj.smooth_gradient(&a);
        let grad = DVector::from_iterator(a.len(), (0..a.len()).map(|j| a[j] * (ga[j] + alpha * f[j])));
        // diag(A) H diag(A) + diag(A ∘ ∇_A) with the entropy part α A (f + 1);
        // the diagonal term is cut at zero away from the minimum so the
        // matrix stays positive semidefinite
        let mut h = h_smooth.clone();
        for r in 0..a.len() {
            for c in 0..a.len() {
                h[(r, c)] *= a[r] * a[c];
            }
            h[(r, r)] += (a[r] * ga[r] + alpha * a[r] * (f[r] + 1.0)).max(0.0);
        }
        let scale = h.diagonal().iter().fold(0.0_f64, |s, v| s.max(v.abs())).max(f64::MIN_POSITIVE);

        let mut accepted = None;
        for _ in 0..30 {
            let mut hd = h.clone();
            for j in 0..a.len() {
                hd[(j, j)] += damping * scale;
            }
            let Ok(d) = spd_solve(&hd, &(-&grad)) else {
                damping *= 10.0;
                continue;
            };
            let slope = grad.dot(&d);
            if slope < 0.0 {
                let mut t = 1.0;
                while t > 1e-10 {
                    let mut trial = &f + &d * t;
                    let mut hit = false;
                    for v in trial.iter_mut() {
                        if v.abs() > EXPONENT_CLAMP {
                            *v = v.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
                            hit = true;
                        }
                    }
                    let a_trial = to_a(&trial);
                    let v_trial = obj.value_exp(&trial, &a_trial);
                    if v_trial <= value + ARMIJO * t * slope {
                        accepted = Some((trial, a_trial, v_trial, hit));
                        break;
                    }
                    t *= 0.5;
                }
            }
            if accepted.is_some() {
                damping = (damping / 3.0).max(1e-12);
                break;
            }
            damping *= 10.0;
        }
        let Some((f_next, a_next, v_next, hit)) = accepted else {
            // no descent left at any damping: stationary to working precision
            converged = true;
            break;
        };
        clamped |= hit;
        check_divergence(iterations, &a_next)?;
        let change = (&a_next - &a).norm();
        f = f_next;
        a = a_next;
        value = v_next;
        let rec = obj.record(iterations, &a, value);
        sink(&rec);
        history.push(rec);
        if change < 1e-3 * eps {
            converged = true;
            break;
        }
    }
    if clamped {
        log::warn!("exp MEM: exponent clamp |f| <= {EXPONENT_CLAMP} was active");
    }
    Ok(MemSolution {
        object: a.iter().copied().collect(),
        f_value: value,
        iterations,
        converged,
        model_params: None,
        model: model.to_vec(),
        clamped,
        history,
    })
}
