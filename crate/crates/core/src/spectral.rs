//! Fermionic analytic-continuation benchmark: kernel, artificial spectral
//! objects, noisy propagators, physical constraints and the resolution
//! sweep.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{
    discretize_kernel, BoundConstraint, DataSet, DiscretizedProblem, IntegralConstraint, KernelSpec,
    ObjectGrid, SupportInterval,
};

const INV_2PI: f64 = 1.0 / (2.0 * PI);
/// Smallest σ attached to noiseless data.
pub const SIGMA_FLOOR: f64 = 1e-15;
/// Fine-grid refinement used to compute noiseless data of sampled objects.
pub const QUADRATURE_REFINEMENT: usize = 100;

/// `1/(1 + e^t)` without overflow.
fn logistic_neg(t: f64) -> f64 {
    if t > 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

fn kernel_unchecked(x: f64, y: f64, beta: f64) -> f64 {
    let v = if x >= 0.0 {
        (-x * y).exp() / (1.0 + (-x * beta).exp())
    } else {
        (x * (beta - y)).exp() / (1.0 + (x * beta).exp())
    };
    -INV_2PI * v
}

/// `K(x, y) = −(1/2π) e^{−xy}/(1 + e^{−xβ})` for `0 ≤ y ≤ β`.
pub fn fermionic_kernel(x: f64, y: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    if !(0.0..=beta).contains(&y) {
        return Err(Error::Domain(format!("imaginary time {y} outside [0, {beta}]")));
    }
    Ok(kernel_unchecked(x, y, beta))
}

/// The fermionic kernel as a [`KernelSpec`]; out-of-range `y` evaluates to
/// NaN and is reported by discretization.
pub fn fermionic_kernel_spec(beta: f64) -> KernelSpec {
    KernelSpec::new(move |x, y| fermionic_kernel(x, y, beta).unwrap_or(f64::NAN))
}

fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

/// `½N(x; −1.5, 0.5) + ½N(x; 2.0, 0.7)`.
pub fn two_gaussian_density(x: f64) -> f64 {
    0.5 * normal_pdf(x, -1.5, 0.5) + 0.5 * normal_pdf(x, 2.0, 0.7)
}

pub fn two_gaussian_object(grid: &ObjectGrid) -> Vec<f64> {
    grid.sample(two_gaussian_density)
}

/// Uniform imaginary-time points `y_i = iβ/(Nτ − 1)` on `[0, β]`.
pub fn tau_points(beta: f64, ntau: usize) -> Vec<f64> {
    match ntau {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let mut y: Vec<f64> = (0..ntau).map(|i| beta * i as f64 / (ntau - 1) as f64).collect();
            y[ntau - 1] = beta;
            y
        }
    }
}

/// Closed-form data of `δ(x + Δ0) + δ(x − Δ0)` at the given times.
pub fn delta_pair_values(half_gap: f64, beta: f64, y: &[f64]) -> Vec<f64> {
    let d = half_gap.abs();
    y.iter()
        .map(|&t| {
            // e^{d t}/(1 + e^{dβ}) written as e^{d(t−β)}/(1 + e^{−dβ})
            let up = (d * (t - beta)).exp() / (1.0 + (-d * beta).exp());
            let down = (-d * t).exp() / (1.0 + (-d * beta).exp());
            -INV_2PI * (up + down)
        })
        .collect()
}

/// Noiseless delta-pair data set at `Nτ` uniform times, σ at the floor.
pub fn delta_pair_propagator(half_gap: f64, beta: f64, ntau: usize) -> Result<DataSet> {
    if !half_gap.is_finite() {
        return Err(Error::InvalidArgument(format!("half gap must be finite, got {half_gap}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let y = tau_points(beta, ntau);
    let g = delta_pair_values(half_gap, beta, &y);
    DataSet::new(y, g, vec![SIGMA_FLOOR; ntau])
}

pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ObjectKind {
    TwoGaussian,
    DeltaPair { half_gap: f64 },
    Custom { name: String, density: DensityFn },
}

impl fmt::Debug for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TwoGaussian => write!(f, "TwoGaussian"),
            Self::DeltaPair { half_gap } => write!(f, "DeltaPair {{ half_gap: {half_gap} }}"),
            Self::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralBenchmark {
    pub beta: f64,
    pub ntau: usize,
    pub grid: ObjectGrid,
    pub object: ObjectKind,
    pub noise_level: f64,
    pub seed: u64,
    pub support: Option<SupportInterval>,
}

impl SpectralBenchmark {
    /// β = 10, Nτ = 25, grid [−5, 5]×201, two-Gaussian object, no noise.
    pub fn standard() -> Self {
        Self {
            beta: 10.0,
            ntau: 25,
            grid: ObjectGrid::new(-5.0, 5.0, 201).expect("static grid"),
            object: ObjectKind::TwoGaussian,
            noise_level: 0.0,
            seed: 0,
            support: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {}", self.beta)));
        }
        if self.ntau == 0 {
            return Err(Error::InvalidArgument("ntau must be at least 1".into()));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise level must be non-negative, got {}",
                self.noise_level
            )));
        }
        if let ObjectKind::DeltaPair { half_gap } = self.object {
            if !half_gap.is_finite() {
                return Err(Error::InvalidArgument("delta-pair half gap must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    /// object sampled on the problem grid
    Sampled(Vec<f64>),
    DeltaPair { half_gap: f64 },
}

impl Truth {
    pub fn sampled(&self) -> Option<&[f64]> {
        match self {
            Self::Sampled(v) => Some(v),
            Self::DeltaPair { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedBenchmark {
    /// problem with noisy data, nonnegativity bounds and the normalization
    /// and sum-rule constraints attached
    pub problem: DiscretizedProblem,
    pub truth: Truth,
    /// noiseless data
    pub clean: Vec<f64>,
    /// `(1/2π) ∫ A dx` of the true object
    pub normalization: f64,
    /// `−G(β)` of the noiseless data
    pub sum_rule: f64,
}

/// `Σ K(x, y_i) A(x) dx` on a grid refined by [`QUADRATURE_REFINEMENT`],
/// together with `∫ A dx`.
pub fn fine_quadrature(
    density: &dyn Fn(f64) -> f64,
    grid: &ObjectGrid,
    beta: f64,
    y: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let fine = ObjectGrid::new(grid.a(), grid.b(), QUADRATURE_REFINEMENT * (grid.len() - 1) + 1)?;
    let dx = fine.dx();
    let a = fine.sample(density);
    let mass = a.iter().sum::<f64>() * dx;
    let mut g = Vec::with_capacity(y.len());
    for &t in y {
        let mut s = 0.0;
        for (&x, &v) in fine.points().iter().zip(&a) {
            s += fermionic_kernel(x, t, beta)? * v;
        }
        g.push(s * dx);
    }
    Ok((g, mass))
}

/// `(1/2π)/(1 + e^{xβ})`, the weight whose integral against `A` is `−G(β)`.
pub fn sum_rule_weight(x: f64, beta: f64) -> f64 {
    INV_2PI * logistic_neg(x * beta)
}

/// Noisy data, true object and constraints for one benchmark configuration.
pub fn generate_benchmark(bench: &SpectralBenchmark) -> Result<GeneratedBenchmark> {
    bench.validate()?;
    let beta = bench.beta;
    let y = tau_points(beta, bench.ntau);
    let (clean, truth, mass) = match &bench.object {
        ObjectKind::TwoGaussian => {
            let (g, mass) = fine_quadrature(&two_gaussian_density, &bench.grid, beta, &y)?;
            (g, Truth::Sampled(two_gaussian_object(&bench.grid)), mass)
        }
        ObjectKind::Custom { density, .. } => {
            let (g, mass) = fine_quadrature(density.as_ref(), &bench.grid, beta, &y)?;
            (g, Truth::Sampled(bench.grid.sample(density.as_ref())), mass)
        }
        ObjectKind::DeltaPair { half_gap } => (
            delta_pair_values(*half_gap, beta, &y),
            Truth::DeltaPair { half_gap: *half_gap },
            2.0,
        ),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(bench.seed);
    let mut values = Vec::with_capacity(clean.len());
    let mut sigmas = Vec::with_capacity(clean.len());
    for g in &clean {
        let z: f64 = StandardNormal.sample(&mut rng);
        let s = bench.noise_level * g.abs();
        values.push(g + z * s);
        sigmas.push(s.max(SIGMA_FLOOR));
    }
    let data = DataSet::new(y, values, sigmas)?;

    let mut kernel = fermionic_kernel_spec(beta);
    if let Some(s) = bench.support {
        kernel = kernel.with_support(s);
    }
    let normalization = INV_2PI * mass;
    let sum_rule = -clean[clean.len() - 1];
    let problem = discretize_kernel(&kernel, &bench.grid, &data)?
        .with_integral_constraint(IntegralConstraint::new("normalization", |_| INV_2PI, normalization))
        .with_integral_constraint(IntegralConstraint::new(
            "sum_rule",
            move |x| sum_rule_weight(x, beta),
            sum_rule,
        ))
        .with_bound_constraints(BoundConstraint::nonnegative(&bench.grid))?;
    Ok(GeneratedBenchmark {
        problem,
        truth,
        clean,
        normalization,
        sum_rule,
    })
}

/// Strict interior local maxima whose topographic prominence is at least
/// `prominence_tol·max(A)`, as grid indices in increasing order.
pub fn detect_peaks(a: &[f64], prominence_tol: f64) -> Vec<usize> {
    let n = a.len();
    if n < 3 {
        return Vec::new();
    }
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = prominence_tol * max;
    let mut peaks = Vec::new();
    for i in 1..n - 1 {
        if !(a[i] > a[i - 1] && a[i] > a[i + 1]) {
            continue;
        }
        let mut left_min = a[i];
        for j in (0..i).rev() {
            if a[j] > a[i] {
                break;
            }
            left_min = left_min.min(a[j]);
        }
        let mut right_min = a[i];
        for &v in &a[i + 1..] {
            if v > a[i] {
                break;
            }
            right_min = right_min.min(v);
        }
        if a[i] - left_min.max(right_min) >= threshold {
            peaks.push(i);
        }
    }
    peaks
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionConfig {
    pub betas: Vec<f64>,
    pub half_gaps: Vec<f64>,
    pub ntau: usize,
    pub grid: ObjectGrid,
    pub support: Option<SupportInterval>,
    pub noise_level: f64,
    pub seed: u64,
    pub prominence_tol: f64,
}

impl Default for ResolutionConfig {
    /// β ∈ {5, 10, 20}, Δ0 = 0, 0.05, …, 1.95, Nτ = 25, support (−2, 2),
    /// noiseless data and a half-maximum prominence rule.
    fn default() -> Self {
        Self {
            betas: vec![5.0, 10.0, 20.0],
            half_gaps: (0..40).map(|i| i as f64 / 20.0).collect(),
            ntau: 25,
            grid: ObjectGrid::new(-5.0, 5.0, 201).expect("static grid"),
            support: Some(SupportInterval::new(-2.0, 2.0).expect("static support")),
            noise_level: 0.0,
            seed: 0,
            prominence_tol: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionRow {
    pub beta: f64,
    pub half_gap: f64,
    /// `2Δ0`
    pub true_gap: f64,
    pub n_peaks: usize,
    /// distance between the outermost peaks, 0 when unimodal
    pub reconstructed_gap: f64,
    pub bimodal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionResult {
    pub rows: Vec<ResolutionRow>,
    /// smallest bimodal Δ0 per β, in the order of `betas`
    pub limits: Vec<(f64, Option<f64>)>,
}

/// Delta-pair data for every `(β, Δ0)`, reconstructed by `solve`, with the
/// peak structure of each reconstruction. Cells run in parallel; the row
/// order is β-major, Δ0-minor as configured.
pub fn resolution_experiment<F>(config: &ResolutionConfig, solve: F) -> Result<ResolutionResult>
where
    F: Fn(&GeneratedBenchmark) -> Result<Vec<f64>> + Sync,
{
    if !(config.prominence_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "prominence tolerance must be non-negative, got {}",
            config.prominence_tol
        )));
    }
    let cells: Vec<(usize, f64, f64)> = config
        .betas
        .iter()
        .flat_map(|&b| config.half_gaps.iter().map(move |&d| (b, d)))
        .enumerate()
        .map(|(i, (b, d))| (i, b, d))
        .collect();
    let points = config.grid.points();
    let rows: Vec<ResolutionRow> = cells
        .par_iter()
        .map(|&(i, beta, half_gap)| {
            let bench = SpectralBenchmark {
                beta,
                ntau: config.ntau,
                grid: config.grid.clone(),
                object: ObjectKind::DeltaPair { half_gap },
                noise_level: config.noise_level,
                seed: config.seed.wrapping_add(i as u64),
                support: config.support,
            };
            let generated = generate_benchmark(&bench)?;
            let a = solve(&generated)?;
            let peaks = detect_peaks(&a, config.prominence_tol);
            let reconstructed_gap = match (peaks.first(), peaks.last()) {
                (Some(&l), Some(&r)) if peaks.len() >= 2 => points[r] - points[l],
                _ => 0.0,
            };
            Ok(ResolutionRow {
                beta,
                half_gap,
                true_gap: 2.0 * half_gap.abs(),
                n_peaks: peaks.len(),
                reconstructed_gap,
                bimodal: peaks.len() >= 2,
            })
        })
        .collect::<Result<_>>()?;
    let limits = config
        .betas
        .iter()
        .map(|&b| {
            let min = rows
                .iter()
                .filter(|r| r.beta == b && r.bimodal)
                .map(|r| r.half_gap)
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
            (b, min)
        })
        .collect();
    Ok(ResolutionResult { rows, limits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn kernel_examples() {
        assert_relative_eq!(fermionic_kernel(0.0, 3.0, 10.0).unwrap(), -1.0 / (4.0 * PI), epsilon = 1e-16);
        let lhs = fermionic_kernel(1.7, 10.0 - 2.3, 10.0).unwrap();
        let rhs = fermionic_kernel(-1.7, 2.3, 10.0).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
        let v = fermionic_kernel(700.0, 10.0, 10.0).unwrap();
        assert!(v.is_finite() && v <= 0.0);
        let v = fermionic_kernel(-1000.0, 0.0, 10.0).unwrap();
        assert!(v.is_finite() && v <= 0.0);
        assert!(fermionic_kernel(0.0, 10.5, 10.0).is_err());
        assert!(fermionic_kernel(0.0, -0.1, 10.0).is_err());
    }

    proptest! {
        #[test]
        fn kernel_reflection_identity(x in -50.0f64..50.0, frac in 0.0f64..1.0, beta in 0.5f64..40.0) {
            let y = frac * beta;
            let a = fermionic_kernel(x, beta - y, beta).unwrap();
            let b = fermionic_kernel(-x, y, beta).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!(a <= 0.0);
        }

        #[test]
        fn kernel_stable_for_large_arguments(x in -1e4f64..1e4, frac in 0.0f64..1.0) {
            let v = fermionic_kernel(x, frac, 1.0).unwrap();
            prop_assert!(v.is_finite());
        }
    }

    #[test]
    fn two_gaussian_object_properties() {
        let grid = ObjectGrid::new(-5.0, 5.0, 201).unwrap();
        let a = two_gaussian_object(&grid);
        let mass = a.iter().sum::<f64>() * grid.dx();
        assert!((0.999..=1.001).contains(&mass), "mass {mass}");
        assert!(a.iter().all(|v| *v > 0.0));
        let peaks = detect_peaks(&a, 0.05);
        assert_eq!(peaks.len(), 2);
        assert!((grid.points()[peaks[0]] + 1.5).abs() <= 0.05);
        assert!((grid.points()[peaks[1]] - 2.0).abs() <= 0.05);
    }

    #[test]
    fn delta_pair_examples() {
        let y = tau_points(10.0, 25);
        for v in delta_pair_values(0.0, 10.0, &y) {
            assert_relative_eq!(v, -INV_2PI, epsilon = 1e-15);
        }
        for d0 in [0.1, 0.7, 1.5, 30.0] {
            let g = delta_pair_values(d0, 10.0, &y);
            assert_relative_eq!(g[0] + g[24], -1.0 / PI, epsilon = 1e-14);
            assert_eq!(g, delta_pair_values(-d0, 10.0, &y));
        }
        // closed form against the kernel at ±Δ0
        let d0 = 0.8;
        let g = delta_pair_values(d0, 10.0, &y);
        for (gi, t) in g.iter().zip(&y) {
            let direct = fermionic_kernel(d0, *t, 10.0).unwrap() + fermionic_kernel(-d0, *t, 10.0).unwrap();
            assert_relative_eq!(*gi, direct, epsilon = 1e-15, max_relative = 1e-13);
        }
        assert_eq!(delta_pair_propagator(0.5, 10.0, 25).unwrap().len(), 25);
    }

    #[test]
    fn discretized_forward_matches_fine_quadrature() {
        let b = generate_benchmark(&SpectralBenchmark::standard()).unwrap();
        let truth = b.truth.sampled().unwrap();
        let g = b.problem.apply_forward(truth).unwrap();
        for (gi, ci) in g.iter().zip(&b.clean) {
            assert!(((gi - ci) / ci).abs() < 1e-4, "{gi} vs {ci}");
        }
        // noiseless data reproduce the quadrature oracle exactly
        assert_eq!(b.problem.data().values(), b.clean.as_slice());
    }

    #[test]
    fn sum_rule_identity_on_forward_data() {
        let b = generate_benchmark(&SpectralBenchmark::standard()).unwrap();
        let truth = b.truth.sampled().unwrap();
        let g = b.problem.apply_forward(truth).unwrap();
        let mass = truth.iter().sum::<f64>() * b.problem.grid().dx();
        assert!((g[0] + g[24] + INV_2PI * mass).abs() < 1e-6);
        assert!(g.iter().all(|v| *v < 0.0));
        assert!((b.clean[0] + b.clean[24] + b.normalization).abs() < 1e-12);
    }

    #[test]
    fn constraints_hold_for_the_truth() {
        let b = generate_benchmark(&SpectralBenchmark::standard()).unwrap();
        let truth = b.truth.sampled().unwrap();
        for r in b.problem.constraint_residuals(truth).unwrap() {
            assert!(r.abs() < 1e-6, "residual {r}");
        }
        assert_eq!(b.problem.bound_constraints().len(), 201);
    }

    #[test]
    fn seeded_noise_is_deterministic() {
        let bench = SpectralBenchmark { noise_level: 0.01, seed: 42, ..SpectralBenchmark::standard() };
        let a = generate_benchmark(&bench).unwrap();
        let b = generate_benchmark(&bench).unwrap();
        assert_eq!(a.problem.data(), b.problem.data());
        let c = generate_benchmark(&SpectralBenchmark { seed: 43, ..bench }).unwrap();
        assert_ne!(a.problem.data().values(), c.problem.data().values());
    }

    #[test]
    fn peak_detection_basics() {
        assert!(detect_peaks(&[1.0; 10], 0.0).is_empty());
        let g: Vec<f64> = (0..50).map(|i| (-((i as f64 - 20.0) / 5.0).powi(2)).exp()).collect();
        assert_eq!(detect_peaks(&g, 0.1), vec![20]);
        // a shallow shoulder is not prominent enough
        let mut h = g.clone();
        h[35] = 0.02;
        h[34] = 0.01;
        h[36] = 0.01;
        assert_eq!(detect_peaks(&h, 0.1), vec![20]);
        assert_eq!(detect_peaks(&h, 0.0).len(), 2);
    }
}
