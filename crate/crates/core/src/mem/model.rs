//! Parametrized default models and the overlap refit.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::linalg::nelder_mead;
use crate::problem::ObjectGrid;

type ModelFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A family `M(x; f)` with box bounds on `f`.
#[derive(Clone)]
pub struct ModelClass {
    name: String,
    param_names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// parameters that scale the whole model linearly
    amplitude: Vec<usize>,
    eval: ModelFn,
}

fn normal(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

impl ModelClass {
    pub fn new(
        name: impl Into<String>,
        param_names: Vec<String>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        eval: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        check_len("model lower bounds", param_names.len(), lower.len())?;
        check_len("model upper bounds", param_names.len(), upper.len())?;
        if param_names.is_empty() {
            return Err(Error::InvalidArgument("model class needs parameters".into()));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::InvalidArgument(format!(
                "bounds of parameter '{}' are crossed",
                param_names[i]
            )));
        }
        Ok(Self {
            name: name.into(),
            param_names,
            lower,
            upper,
            amplitude: Vec::new(),
            eval: Arc::new(eval),
        })
    }

    /// Marks parameters that multiply the whole model, letting the
    /// self-consistent engine rescale the model's mass.
    pub fn with_amplitude_params(mut self, idx: Vec<usize>) -> Result<Self> {
        if let Some(&i) = idx.iter().find(|&&i| i >= self.param_names.len()) {
            return Err(Error::InvalidArgument(format!("amplitude index {i} out of range")));
        }
        self.amplitude = idx;
        Ok(self)
    }

    /// `c N(x; μ, σ)` with parameters `(c, μ, σ)`.
    pub fn gaussian() -> Self {
        Self::new(
            "gaussian",
            vec!["c".into(), "mu".into(), "sigma".into()],
            vec![1e-3, -5.0, 0.05],
            vec![10.0, 5.0, 5.0],
            |x, p| p[0] * normal(x, p[1], p[2]),
        )
        .and_then(|m| m.with_amplitude_params(vec![0]))
        .expect("static bounds are valid")
    }

    /// `c1 N(x; μ1, σ1) + c2 N(x; μ2, σ2)` with parameters
    /// `(c1, c2, μ1, μ2, σ1, σ2)`.
    pub fn two_gaussian() -> Self {
        Self::new(
            "two_gaussian",
            ["c1", "c2", "mu1", "mu2", "sigma1", "sigma2"].iter().map(|s| s.to_string()).collect(),
            vec![1e-3, 1e-3, -5.0, -5.0, 0.05, 0.05],
            vec![10.0, 10.0, 5.0, 5.0, 5.0, 5.0],
            |x, p| p[0] * normal(x, p[2], p[4]) + p[1] * normal(x, p[3], p[5]),
        )
        .and_then(|m| m.with_amplitude_params(vec![0, 1]))
        .expect("static bounds are valid")
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len("model lower bounds", self.n_params(), lower.len())?;
        check_len("model upper bounds", self.n_params(), upper.len())?;
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::InvalidArgument(format!(
                "bounds of parameter '{}' are crossed",
                self.param_names[i]
            )));
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn amplitude_params(&self) -> &[usize] {
        &self.amplitude
    }

    pub fn clamp(&self, params: &[f64]) -> Vec<f64> {
        params
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(p, (l, u))| p.clamp(*l, *u))
            .collect()
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        check_len("model parameters", self.n_params(), params.len())?;
        for (i, p) in params.iter().enumerate() {
            if !(*p >= self.lower[i] && *p <= self.upper[i]) {
                return Err(Error::InvalidArgument(format!(
                    "parameter '{}' = {p} outside [{}, {}]",
                    self.param_names[i], self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    /// Raw values `M(x_j; f)` without any floor.
    pub fn evaluate_raw(&self, grid: &ObjectGrid, params: &[f64]) -> Result<Vec<f64>> {
        check_len("model parameters", self.n_params(), params.len())?;
        Ok(grid.points().iter().map(|&x| (self.eval)(x, params)).collect())
    }

    /// Model on the grid, raised to `floor_rel·max(M)` where smaller.
    pub fn evaluate(&self, grid: &ObjectGrid, params: &[f64], floor_rel: f64) -> Result<Vec<f64>> {
        let raw = self.evaluate_raw(grid, params)?;
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > 0.0 && max.is_finite()) {
            return Err(Error::Domain(format!(
                "model '{}' has no positive values at parameters {params:?}",
                self.name
            )));
        }
        let floor = floor_rel * max;
        Ok(raw.into_iter().map(|v| if v.is_nan() { floor } else { v.max(floor) }).collect())
    }
}

impl fmt::Debug for ModelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelClass")
            .field("name", &self.name)
            .field("param_names", &self.param_names)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .finish_non_exhaustive()
    }
}

/// `(Σ A M)² / (Σ A² Σ M²)`.
pub fn overlap(a: &[f64], m: &[f64]) -> Result<f64> {
    check_len("overlap", a.len(), m.len())?;
    let aa: f64 = a.iter().map(|v| v * v).sum();
    let mm: f64 = m.iter().map(|v| v * v).sum();
    if !(aa > 0.0) || !(mm > 0.0) {
        return Err(Error::Domain("overlap of a zero-norm vector".into()));
    }
    let am: f64 = a.iter().zip(m).map(|(x, y)| x * y).sum();
    Ok(((am * am) / (aa * mm)).min(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub params: Vec<f64>,
    pub overlap: f64,
    /// the simplex search ran out of evaluations before meeting its tolerance
    pub stagnated: bool,
}

const FIT_RESTARTS: usize = 3;
const FIT_MAX_EVALS: usize = 4000;

fn overlap_at(a: &[f64], class: &ModelClass, grid: &ObjectGrid, p: &[f64]) -> f64 {
    match class.evaluate_raw(grid, p) {
        Ok(m) => overlap(a, &m).unwrap_or(0.0),
        Err(_) => 0.0,
    }
}

/// Parameters in the class box maximizing the overlap with `A`.
///
/// Bounded Nelder–Mead restarted from its own best point; the result never
/// has a lower overlap than `f0`.
pub fn fit_model(a: &[f64], class: &ModelClass, grid: &ObjectGrid, f0: &[f64]) -> Result<ModelFit> {
    check_len("object", grid.len(), a.len())?;
    class.check_params(f0)?;
    if !(a.iter().map(|v| v * v).sum::<f64>() > 0.0) {
        return Err(Error::Domain("cannot fit a model to a zero object".into()));
    }
    let cost = |p: &[f64]| -overlap_at(a, class, grid, p);
    let mut best = f0.to_vec();
    let mut best_value = cost(f0);
    let mut stagnated = false;
    for _ in 0..FIT_RESTARTS {
        let r = nelder_mead(cost, &best, class.lower(), class.upper(), FIT_MAX_EVALS, 1e-13)?;
        stagnated = !r.converged;
        if r.value < best_value {
            best_value = r.value;
            best = r.x;
        }
    }
    if stagnated {
        log::warn!("model fit for '{}' stopped before convergence", class.name());
    }
    Ok(ModelFit {
        params: best,
        overlap: -best_value,
        stagnated,
    })
}
