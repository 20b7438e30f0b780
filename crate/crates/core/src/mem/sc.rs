//! Self-consistent engine: inner entropy solve, overlap refit of the model,
//! repeat.

use super::model::{fit_model, ModelClass};
use super::{exp_mem_solve_with_sink, mem_solve_direct_with_sink, std_mem_solve_with_sink};
use super::{IterateSink, MemConfig, MemSolution};
use crate::error::{Error, Result};
use crate::problem::DiscretizedProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemVariant {
    Standard,
    Direct,
    Exponential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScMemConfig {
    pub inner: MemConfig,
    pub variant: MemVariant,
    pub max_outer: usize,
    /// stop when `‖A_n − A_{n−1}‖ < outer_eps·‖A_n‖`
    pub outer_eps: f64,
}

impl Default for ScMemConfig {
    fn default() -> Self {
        Self {
            inner: MemConfig::default(),
            variant: MemVariant::Standard,
            max_outer: 30,
            outer_eps: 1e-4,
        }
    }
}

pub fn sc_mem_solve(
    problem: &DiscretizedProblem,
    class: &ModelClass,
    f0: &[f64],
    config: &ScMemConfig,
) -> Result<MemSolution> {
    sc_mem_solve_with_sink(problem, class, f0, config, &mut |_| {})
}

/// After each refit the amplitude parameters are rescaled so that the
/// model carries the same total mass as the current solution.
pub fn sc_mem_solve_with_sink(
    problem: &DiscretizedProblem,
    class: &ModelClass,
    f0: &[f64],
    config: &ScMemConfig,
    sink: IterateSink<'_>,
) -> Result<MemSolution> {
    config.inner.validate()?;
    class.check_params(f0)?;
    if config.max_outer == 0 {
        return Err(Error::InvalidArgument("max_outer must be at least 1".into()));
    }
    if !(config.outer_eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "outer_eps must be positive, got {}",
            config.outer_eps
        )));
    }
    let grid = problem.grid();
    let mut params = f0.to_vec();
    let mut previous: Option<Vec<f64>> = None;
    let mut total_iterations = 0;
    let mut history = Vec::new();

    for outer in 1..=config.max_outer {
        let wrap = |e: Error| Error::Outer { outer, source: Box::new(e) };
        let model = class.evaluate(grid, &params, config.inner.floor_rel).map_err(wrap)?;
        let mut inner = match config.variant {
            MemVariant::Standard => std_mem_solve_with_sink(problem, &model, &config.inner, sink),
            MemVariant::Direct => mem_solve_direct_with_sink(problem, &model, &config.inner, sink),
            MemVariant::Exponential => exp_mem_solve_with_sink(problem, &model, &config.inner, sink),
        }
        .map_err(wrap)?;
        total_iterations += inner.iterations;
        history.append(&mut inner.history);

        let fit = fit_model(&inner.object, class, grid, &params).map_err(wrap)?;
        params = fit.params;
        let amp = class.amplitude_params();
        if !amp.is_empty() {
            let m = class.evaluate_raw(grid, &params).map_err(wrap)?;
            let sm: f64 = m.iter().sum();
            let sa: f64 = inner.object.iter().sum();
            if sm > 0.0 && sa > 0.0 {
                for &i in amp {
                    params[i] *= sa / sm;
                }
                params = class.clamp(&params);
            }
        }

        let done = previous.as_ref().is_some_and(|prev| {
            let diff: f64 = prev.iter().zip(&inner.object).map(|(p, a)| (p - a) * (p - a)).sum::<f64>().sqrt();
            let norm: f64 = inner.object.iter().map(|a| a * a).sum::<f64>().sqrt();
            diff < config.outer_eps * norm
        });
        log::debug!("sc MEM outer {outer}: overlap {:.6}", fit.overlap);
        if done || outer == config.max_outer {
            if !done {
                log::warn!("sc MEM reached {outer} outer iterations without settling");
            }
            return Ok(MemSolution {
                iterations: total_iterations,
                converged: done && inner.converged,
                model_params: Some(params),
                history,
                ..inner
            });
        }
        previous = Some(inner.object);
    }
    unreachable!("loop returns on its last iteration")
}
