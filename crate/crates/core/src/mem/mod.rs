//! Maximum entropy engines.
//!
//! Every variant minimizes the penalized likelihood
//! `½χ²(A) + α Σ [A_j log(A_j/M_j) − A_j + M_j] + Σ_l θ_l (c_l − Σ_j g_l(x_j) dx A_j)²`
//! where the last sum runs over the integral constraints attached to the
//! problem. The entropy term equals `Σ A log(A/M)` whenever `Σ A = Σ M`; the
//! extra `M − A` makes `A = M` the unconstrained minimizer for exact data and
//! is the functional whose stationary point the γ/ω least-squares iteration
//! reaches.

mod direct;
pub mod entropy;
mod exp;
pub mod model;
mod sc;
mod standard;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::problem::DiscretizedProblem;

pub use direct::{mem_solve_direct, mem_solve_direct_with_sink};
pub use entropy::{
    entropy, likelihood, likelihood_gradient, noninformative_entropy, penalized_likelihood,
    penalized_likelihood_gradient, std_mem_quadratic_terms,
};
pub use exp::{exp_mem_solve, exp_mem_solve_with_sink};
pub use model::{fit_model, overlap, ModelClass, ModelFit};
pub use sc::{sc_mem_solve, sc_mem_solve_with_sink, MemVariant, ScMemConfig};
pub use standard::{std_mem_solve, std_mem_solve_with_sink};

#[derive(Debug, Clone, PartialEq)]
pub struct MemConfig {
    pub alpha: f64,
    /// mixing parameter of the standard iteration
    pub xi: f64,
    /// stop tolerance on the iterate change; `None` means `1e-6·‖M‖`
    pub eps: Option<f64>,
    pub max_iters: usize,
    /// positivity floor relative to `max(M)`
    pub floor_rel: f64,
}

impl Default for MemConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            xi: 0.1,
            eps: None,
            max_iters: 500,
            floor_rel: 1e-12,
        }
    }
}

impl MemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::InvalidArgument(format!("xi must lie in (0, 1), got {}", self.xi)));
        }
        if let Some(eps) = self.eps {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.floor_rel > 0.0 && self.floor_rel < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "floor_rel must lie in (0, 1), got {}",
                self.floor_rel
            )));
        }
        Ok(())
    }

    pub(crate) fn eps_for(&self, model: &[f64]) -> f64 {
        self.eps
            .unwrap_or_else(|| 1e-6 * model.iter().map(|m| m * m).sum::<f64>().sqrt())
    }
}

/// One entry of the iterate history.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub iteration: usize,
    pub f_value: f64,
    pub constraint_residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemSolution {
    pub object: Vec<f64>,
    pub f_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// final model parameters (self-consistent engine only)
    pub model_params: Option<Vec<f64>>,
    /// final model used by the last inner solve
    pub model: Vec<f64>,
    /// set when the exponential parametrization hit its exponent clamp
    pub clamped: bool,
    pub history: Vec<IterateRecord>,
}

/// Receives every accepted iterate.
pub type IterateSink<'a> = &'a mut dyn FnMut(&IterateRecord);

pub(crate) const DIVERGENCE_NORM: f64 = 1e12;

/// Precomputed pieces of the penalized likelihood.
pub(crate) struct Objective {
    k: DMatrix<f64>,
    w: DVector<f64>,
    gt: DVector<f64>,
    model: Vec<f64>,
    log_model: Vec<f64>,
    alpha: f64,
    /// (quadrature weights g_l dx, target c_l, stiffness θ_l)
    constraints: Vec<(DVector<f64>, f64, f64)>,
    /// KᵀWK
    h0: DMatrix<f64>,
    /// KᵀWG̃
    rhs0: DVector<f64>,
}

impl Objective {
    pub(crate) fn new(problem: &DiscretizedProblem, model: &[f64], alpha: f64) -> Result<Self> {
        check_len("model", problem.n_grid(), model.len())?;
        if let Some(i) = model.iter().position(|m| !(*m > 0.0)) {
            return Err(Error::Domain(format!("model[{i}] = {} is not positive", model[i])));
        }
        let k = problem.kmatrix().clone();
        let data = problem.data();
        let w = DVector::from_iterator(data.len(), data.sigmas().iter().map(|s| 1.0 / (s * s)));
        let gt = DVector::from_column_slice(data.values());
        let mut wk = k.clone();
        for i in 0..wk.nrows() {
            wk.row_mut(i).scale_mut(w[i]);
        }
        let h0 = k.transpose() * &wk;
        let rhs0 = wk.transpose() * &gt;
        let constraints = problem
            .integral_constraints()
            .iter()
            .map(|c| {
                (
                    DVector::from_vec(c.grid_weights(problem.grid())),
                    c.target(),
                    c.stiffness(),
                )
            })
            .collect();
        Ok(Self {
            k,
            w,
            gt,
            model: model.to_vec(),
            log_model: model.iter().map(|m| m.ln()).collect(),
            alpha,
            constraints,
            h0,
            rhs0,
        })
    }

    pub(crate) fn n(&self) -> usize {
        self.model.len()
    }

    pub(crate) fn alpha(&self) -> f64 {
        self.alpha
    }

    pub(crate) fn rhs0(&self) -> &DVector<f64> {
        &self.rhs0
    }

    pub(crate) fn constraints(&self) -> &[(DVector<f64>, f64, f64)] {
        &self.constraints
    }

    /// `Kᵀ W (K A − G̃)`.
    fn data_gradient(&self, a: &DVector<f64>) -> DVector<f64> {
        let mut r = &self.k * a - &self.gt;
        r.component_mul_assign(&self.w);
        self.k.transpose() * r
    }

    fn half_chi2(&self, a: &DVector<f64>) -> f64 {
        let r = &self.k * a - &self.gt;
        0.5 * r.iter().zip(self.w.iter()).map(|(r, w)| r * r * w).sum::<f64>()
    }

    pub(crate) fn residuals(&self, a: &DVector<f64>) -> Vec<f64> {
        self.constraints.iter().map(|(g, c, _)| c - g.dot(a)).collect()
    }

    fn penalty(&self, a: &DVector<f64>) -> f64 {
        self.constraints
            .iter()
            .map(|(g, c, th)| {
                let r = c - g.dot(a);
                th * r * r
            })
            .sum()
    }

    fn penalty_gradient(&self, a: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(a.len());
        for (g, c, th) in &self.constraints {
            let r = c - g.dot(a);
            out.axpy(-2.0 * th * r, g, 1.0);
        }
        out
    }

    /// `Σ [A log(A/M) − A + M]` with `0·log 0 = 0`; `A` must be nonnegative.
    fn neg_entropy(&self, a: &DVector<f64>) -> f64 {
        a.iter()
            .zip(&self.log_model)
            .zip(&self.model)
            .map(|((&a, lm), m)| {
                let t = if a > 0.0 { a * (a.ln() - lm) } else { 0.0 };
                t - a + m
            })
            .sum()
    }

    pub(crate) fn value(&self, a: &DVector<f64>) -> f64 {
        self.half_chi2(a) + self.alpha * self.neg_entropy(a) + self.penalty(a)
    }

    /// Penalized likelihood at `A = M e^f`, with `log(A/M) = f` taken exactly.
    pub(crate) fn value_exp(&self, f: &DVector<f64>, a: &DVector<f64>) -> f64 {
        let ent: f64 = a
            .iter()
            .zip(f.iter())
            .zip(&self.model)
            .map(|((a, f), m)| a * f - a + m)
            .sum();
        self.half_chi2(a) + self.alpha * ent + self.penalty(a)
    }

    /// Gradient with respect to `A` of every term except the entropy.
    pub(crate) fn smooth_gradient(&self, a: &DVector<f64>) -> DVector<f64> {
        self.data_gradient(a) + self.penalty_gradient(a)
    }

    /// Full gradient; `A` must be strictly positive.
    pub(crate) fn gradient(&self, a: &DVector<f64>) -> DVector<f64> {
        let mut g = self.smooth_gradient(a);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += self.alpha * (a[j].ln() - self.log_model[j]);
        }
        g
    }

    /// `KᵀWK + 2Σθ g gᵀ`, the Hessian of the non-entropic terms.
    pub(crate) fn smooth_hessian(&self) -> DMatrix<f64> {
        let mut h = self.h0.clone();
        for (g, _, th) in &self.constraints {
            h.ger(2.0 * th, g, g, 1.0);
        }
        h
    }

    pub(crate) fn record(&self, iteration: usize, a: &DVector<f64>, f_value: f64) -> IterateRecord {
        IterateRecord {
            iteration,
            f_value,
            constraint_residuals: self.residuals(a),
        }
    }
}

/// Model with entries below `floor_rel·max(M)` raised to the floor.
pub(crate) fn floored_model(model: &[f64], floor_rel: f64) -> Result<(Vec<f64>, f64)> {
    let max = model.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0 && max.is_finite()) {
        return Err(Error::Domain("model has no positive finite entries".into()));
    }
    if let Some(i) = model.iter().position(|m| m.is_nan()) {
        return Err(Error::Domain(format!("model[{i}] is NaN")));
    }
    let floor = floor_rel * max;
    Ok((model.iter().map(|m| m.max(floor)).collect(), floor))
}

pub(crate) fn check_divergence(iteration: usize, a: &DVector<f64>) -> Result<()> {
    let norm = a.norm();
    if !norm.is_finite() || norm > DIVERGENCE_NORM {
        return Err(Error::Divergence { iteration, norm });
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testutil {
    use crate::problem::{discretize_kernel, DataSet, DiscretizedProblem, KernelSpec, ObjectGrid};

    /// Small Laplace-type problem with data generated from `object`.
    pub fn laplace_problem(object: impl Fn(f64) -> f64, noise_rel: f64) -> (DiscretizedProblem, Vec<f64>) {
        let grid = ObjectGrid::new(0.0, 3.0, 41).unwrap();
        let truth = grid.sample(&object);
        let y: Vec<f64> = (0..12).map(|i| 0.1 + 0.25 * i as f64).collect();
        let kernel = KernelSpec::new(|x, y| (-x * y).exp());
        let placeholder = DataSet::new(y.clone(), vec![1.0; 12], vec![1.0; 12]).unwrap();
        let p = discretize_kernel(&kernel, &grid, &placeholder).unwrap();
        let g = p.apply_forward(&truth).unwrap();
        let sig: Vec<f64> = g.iter().map(|v| (noise_rel * v.abs()).max(1e-15)).collect();
        let p = p.with_data(DataSet::new(y, g, sig).unwrap()).unwrap();
        (p, truth)
    }

    pub fn bump(x: f64) -> f64 {
        0.2 + (-(x - 1.2) * (x - 1.2) / 0.3).exp()
    }
}
