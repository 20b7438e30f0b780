//! The discretized inverse problem shared by every solver.
//!
//! An object `A(x)` sampled on a uniform [`ObjectGrid`] is mapped to data
//! through `G_i = Σ_j K_ij A_j` with rectangle weights
//! `K_ij = K(x_j, y_i)·dx`. A [`SupportInterval`] zeroes the kernel columns
//! whose grid point lies outside it, so grid indices stay stable when the
//! presumed support changes.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};

/// Uniform grid on `[a, b]` including both endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectGrid {
    a: f64,
    b: f64,
    points: Vec<f64>,
    dx: f64,
}

impl ObjectGrid {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "object grid needs at least 2 points, got {n}"
            )));
        }
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(Error::InvalidArgument(format!(
                "object grid needs finite a < b, got a = {a}, b = {b}"
            )));
        }
        let dx = (b - a) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|j| a + j as f64 * dx).collect();
        points[n - 1] = b;
        Ok(Self { a, b, points, dx })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Evaluates `f` at every grid point.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.points.iter().map(|&x| f(x)).collect()
    }
}

/// Measurement abscissae, noisy values and their standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    y: Vec<f64>,
    values: Vec<f64>,
    sigmas: Vec<f64>,
}

impl DataSet {
    pub fn new(y: Vec<f64>, values: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidArgument("data set is empty".into()));
        }
        check_len("data values", y.len(), values.len())?;
        check_len("data sigmas", y.len(), sigmas.len())?;
        if let Some(i) = sigmas.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "sigma[{i}] = {} must be positive and finite",
                sigmas[i]
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "data value [{i}] = {} is not finite",
                values[i]
            )));
        }
        if let Some(i) = y.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(format!(
                "measurement points must be strictly increasing (y[{}] = {}, y[{}] = {})",
                i,
                y[i],
                i + 1,
                y[i + 1]
            )));
        }
        Ok(Self { y, values, sigmas })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}

/// Open interval `(lo, hi)` outside which the object is assumed to vanish.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportInterval {
    lo: f64,
    hi: f64,
}

impl SupportInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "support interval needs lo < hi, got ({lo}, {hi})"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Indicator of the open interval.
    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }
}

pub type KernelFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type WeightFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A kernel `K(x, y)` together with an optional support restriction.
#[derive(Clone)]
pub struct KernelSpec {
    eval: KernelFn,
    support: Option<SupportInterval>,
}

impl KernelSpec {
    pub fn new(eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(eval),
            support: None,
        }
    }

    pub fn with_support(mut self, support: SupportInterval) -> Self {
        self.support = Some(support);
        self
    }

    pub fn support(&self) -> Option<SupportInterval> {
        self.support
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.eval)(x, y)
    }
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("support", &self.support)
            .finish_non_exhaustive()
    }
}

/// `∫ g(x) A(x) dx = target`, enforced by a quadratic penalty of the given
/// stiffness in the entropy solvers and exactly in the constrained SVD solve.
#[derive(Clone)]
pub struct IntegralConstraint {
    name: String,
    weight: WeightFn,
    target: f64,
    stiffness: f64,
}

impl IntegralConstraint {
    /// Stiffness defaults to `1e4 / target²` (1e4 when the target is zero).
    pub fn new(
        name: impl Into<String>,
        weight: impl Fn(f64) -> f64 + Send + Sync + 'static,
        target: f64,
    ) -> Self {
        let stiffness = if target != 0.0 {
            1e4 / (target * target)
        } else {
            1e4
        };
        Self {
            name: name.into(),
            weight: Arc::new(weight),
            target,
            stiffness,
        }
    }

    pub fn with_stiffness(mut self, stiffness: f64) -> Result<Self> {
        if !(stiffness >= 0.0 && stiffness.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "constraint stiffness must be a finite non-negative number, got {stiffness}"
            )));
        }
        self.stiffness = stiffness;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn stiffness(&self) -> f64 {
        self.stiffness
    }

    pub fn weight(&self, x: f64) -> f64 {
        (self.weight)(x)
    }

    /// Quadrature weights `g(x_j)·dx` on the grid.
    pub fn grid_weights(&self, grid: &ObjectGrid) -> Vec<f64> {
        let dx = grid.dx();
        grid.points().iter().map(|&x| self.weight(x) * dx).collect()
    }

    /// `target − Σ_j g(x_j) dx A_j`.
    pub fn residual(&self, grid: &ObjectGrid, object: &[f64]) -> Result<f64> {
        check_len("constraint residual", grid.len(), object.len())?;
        let dx = grid.dx();
        let integral: f64 = grid
            .points()
            .iter()
            .zip(object)
            .map(|(&x, &a)| self.weight(x) * dx * a)
            .sum();
        Ok(self.target - integral)
    }
}

impl fmt::Debug for IntegralConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntegralConstraint")
            .field("name", &self.name)
            .field("target", &self.target)
            .field("stiffness", &self.stiffness)
            .finish_non_exhaustive()
    }
}

/// `lower ≤ A(x_index) ≤ upper` at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstraint {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
}

impl BoundConstraint {
    pub fn new(index: usize, lower: f64, upper: f64) -> Result<Self> {
        if !(lower <= upper) {
            return Err(Error::InvalidArgument(format!(
                "bound constraint at index {index} has lower {lower} > upper {upper}"
            )));
        }
        Ok(Self {
            index,
            lower,
            upper,
        })
    }

    /// `A_j ≥ 0` at every grid point.
    pub fn nonnegative(grid: &ObjectGrid) -> Vec<Self> {
        (0..grid.len())
            .map(|index| Self {
                index,
                lower: 0.0,
                upper: f64::INFINITY,
            })
            .collect()
    }
}

/// Kernel matrix, grid, data and constraints of one inverse problem.
#[derive(Debug, Clone)]
pub struct DiscretizedProblem {
    grid: ObjectGrid,
    data: DataSet,
    kmatrix: DMatrix<f64>,
    support: Option<SupportInterval>,
    integral_constraints: Vec<IntegralConstraint>,
    bound_constraints: Vec<BoundConstraint>,
}

/// Builds `K_ij = K(x_j, y_i)·dx`, zeroing columns outside the kernel support.
pub fn discretize_kernel(
    kernel: &KernelSpec,
    grid: &ObjectGrid,
    data: &DataSet,
) -> Result<DiscretizedProblem> {
    let dx = grid.dx();
    let support = kernel.support();
    let mut k = DMatrix::zeros(data.len(), grid.len());
    for (j, &x) in grid.points().iter().enumerate() {
        if let Some(s) = support {
            if !s.contains(x) {
                continue;
            }
        }
        for (i, &y) in data.y().iter().enumerate() {
            let value = kernel.eval(x, y);
            if !value.is_finite() {
                return Err(Error::KernelEvaluation { x, y, value });
            }
            k[(i, j)] = value * dx;
        }
    }
    Ok(DiscretizedProblem {
        grid: grid.clone(),
        data: data.clone(),
        kmatrix: k,
        support,
        integral_constraints: Vec::new(),
        bound_constraints: Vec::new(),
    })
}

impl DiscretizedProblem {
    /// Wraps an already discretized matrix (rows = data points, columns = grid points).
    pub fn from_matrix(grid: ObjectGrid, data: DataSet, kmatrix: DMatrix<f64>) -> Result<Self> {
        check_len("kernel matrix rows", data.len(), kmatrix.nrows())?;
        check_len("kernel matrix columns", grid.len(), kmatrix.ncols())?;
        if kmatrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "kernel matrix has non-finite entries".into(),
            ));
        }
        Ok(Self {
            grid,
            data,
            kmatrix,
            support: None,
            integral_constraints: Vec::new(),
            bound_constraints: Vec::new(),
        })
    }

    pub fn with_integral_constraint(mut self, c: IntegralConstraint) -> Self {
        self.integral_constraints.push(c);
        self
    }

    pub fn with_bound_constraints(mut self, bounds: Vec<BoundConstraint>) -> Result<Self> {
        if let Some(b) = bounds.iter().find(|b| b.index >= self.grid.len()) {
            return Err(Error::InvalidArgument(format!(
                "bound constraint index {} outside grid of {} points",
                b.index,
                self.grid.len()
            )));
        }
        self.bound_constraints.extend(bounds);
        Ok(self)
    }

    /// Same kernel and constraints with a different data vector.
    pub fn with_data(&self, data: DataSet) -> Result<Self> {
        check_len("replacement data", self.data.len(), data.len())?;
        let mut out = self.clone();
        out.data = data;
        Ok(out)
    }

    pub fn without_integral_constraints(&self) -> Self {
        let mut out = self.clone();
        out.integral_constraints.clear();
        out
    }

    pub fn grid(&self) -> &ObjectGrid {
        &self.grid
    }

    pub fn data(&self) -> &DataSet {
        &self.data
    }

    pub fn kmatrix(&self) -> &DMatrix<f64> {
        &self.kmatrix
    }

    pub fn support(&self) -> Option<SupportInterval> {
        self.support
    }

    pub fn integral_constraints(&self) -> &[IntegralConstraint] {
        &self.integral_constraints
    }

    pub fn bound_constraints(&self) -> &[BoundConstraint] {
        &self.bound_constraints
    }

    pub fn n_data(&self) -> usize {
        self.data.len()
    }

    pub fn n_grid(&self) -> usize {
        self.grid.len()
    }

    /// `G_i = Σ_j K_ij A_j`.
    pub fn apply_forward(&self, object: &[f64]) -> Result<Vec<f64>> {
        check_len("forward map", self.n_grid(), object.len())?;
        let k = &self.kmatrix;
        Ok((0..k.nrows())
            .map(|i| k.row(i).iter().zip(object).map(|(kij, a)| kij * a).sum())
            .collect())
    }

    /// `Σ_i K_ij w_i`, the adjoint of the forward map.
    pub fn apply_adjoint(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint map", self.n_data(), w.len())?;
        let k = &self.kmatrix;
        Ok((0..k.ncols())
            .map(|j| k.column(j).iter().zip(w).map(|(kij, wi)| kij * wi).sum())
            .collect())
    }

    /// `(G̃_i − G_i)/σ_i`.
    pub fn weighted_residuals(&self, object: &[f64]) -> Result<Vec<f64>> {
        let g = self.apply_forward(object)?;
        Ok(self
            .data
            .values()
            .iter()
            .zip(&g)
            .zip(self.data.sigmas())
            .map(|((gt, g), s)| (gt - g) / s)
            .collect())
    }

    /// Residuals of every integral constraint, in declaration order.
    pub fn constraint_residuals(&self, object: &[f64]) -> Result<Vec<f64>> {
        self.integral_constraints
            .iter()
            .map(|c| c.residual(&self.grid, object))
            .collect()
    }
}

/// Uncorrelated data-space inner product `Σ_i v_i w_i`.
///
/// Correlated data would replace this with `vᵀ W w`, `W` the inverse
/// covariance; every solver routes its data-space products through here.
pub fn inner_product_data(v: &[f64], w: &[f64]) -> Result<f64> {
    check_len("data inner product", v.len(), w.len())?;
    Ok(v.iter().zip(w).map(|(a, b)| a * b).sum())
}

/// Unhalved `χ² = Σ_i ((G̃_i − G_i)/σ_i)²`.
pub fn chi_squared(problem: &DiscretizedProblem, object: &[f64]) -> Result<f64> {
    let r = problem.weighted_residuals(object)?;
    inner_product_data(&r, &r)
}

pub fn rmse(a: &[f64], reference: &[f64]) -> Result<f64> {
    check_len("rmse", reference.len(), a.len())?;
    if a.is_empty() {
        return Err(Error::InvalidArgument("rmse of empty vectors".into()));
    }
    let ss: f64 = a.iter().zip(reference).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}
