//! Entropy functionals and the likelihood they enter.

use nalgebra::DVector;

use super::Objective;
use crate::error::{check_len, Error, Result};
use crate::problem::DiscretizedProblem;

fn check_pair(a: &[f64], m: &[f64]) -> Result<()> {
    check_len("entropy", m.len(), a.len())?;
    if let Some(i) = m.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Domain(format!("model[{i}] = {} must be positive", m[i])));
    }
    if let Some(i) = a.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::Domain(format!("object[{i}] = {} must be nonnegative", a[i])));
    }
    Ok(())
}

/// Relative entropy `−Σ A_j log(A_j/M_j)` with `0·log 0 = 0`.
pub fn entropy(a: &[f64], m: &[f64]) -> Result<f64> {
    check_pair(a, m)?;
    Ok(-a
        .iter()
        .zip(m)
        .map(|(&a, &m)| if a > 0.0 { a * (a / m).ln() } else { 0.0 })
        .sum::<f64>())
}

/// `−α Σ p_i log p_i` with `p_i = A_i/Σ_j A_j`. No solver uses it.
pub fn noninformative_entropy(a: &[f64], alpha: f64) -> Result<f64> {
    if let Some(i) = a.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::Domain(format!("object[{i}] = {} must be nonnegative", a[i])));
    }
    let total: f64 = a.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Domain("object sums to zero".into()));
    }
    Ok(-alpha
        * a.iter()
            .map(|&v| {
                let p = v / total;
                if p > 0.0 {
                    p * p.ln()
                } else {
                    0.0
                }
            })
            .sum::<f64>())
}

/// `F(A) = ½χ²(A) + α Σ A_j log(A_j/M_j)`.
pub fn likelihood(problem: &DiscretizedProblem, a: &[f64], m: &[f64], alpha: f64) -> Result<f64> {
    check_pair(a, m)?;
    let chi2 = crate::problem::chi_squared(problem, a)?;
    Ok(0.5 * chi2 - alpha * entropy(a, m)?)
}

/// `∇F = KᵀW(KA − G̃) + α(log(A/M) + 1)`; `A` must be strictly positive.
pub fn likelihood_gradient(
    problem: &DiscretizedProblem,
    a: &[f64],
    m: &[f64],
    alpha: f64,
) -> Result<Vec<f64>> {
    let obj = Objective::new(&problem.without_integral_constraints(), m, alpha)?;
    let mut g = gradient_of(&obj, a)?;
    for gj in &mut g {
        *gj += alpha;
    }
    Ok(g)
}

/// The functional the solvers minimize: `½χ² + α Σ [A log(A/M) − A + M]`
/// plus the penalties `Σθ_l(c_l − g_l·A)²` of the problem's integral
/// constraints. Without constraints and with `Σ A = Σ M` it equals
/// [`likelihood`].
pub fn penalized_likelihood(
    problem: &DiscretizedProblem,
    a: &[f64],
    m: &[f64],
    alpha: f64,
) -> Result<f64> {
    check_pair(a, m)?;
    let obj = Objective::new(problem, m, alpha)?;
    Ok(obj.value(&DVector::from_column_slice(a)))
}

pub fn penalized_likelihood_gradient(
    problem: &DiscretizedProblem,
    a: &[f64],
    m: &[f64],
    alpha: f64,
) -> Result<Vec<f64>> {
    let obj = Objective::new(problem, m, alpha)?;
    gradient_of(&obj, a)
}

fn gradient_of(obj: &Objective, a: &[f64]) -> Result<Vec<f64>> {
    check_len("gradient", obj.n(), a.len())?;
    if let Some(i) = a.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Domain(format!("object[{i}] = {} must be positive", a[i])));
    }
    Ok(obj.gradient(&DVector::from_column_slice(a)).iter().copied().collect())
}

/// `γ_i = A0_i(1 − L_i)` and `ω_i = M_i − A0_i(1 − L_i + ½L_i²)` with
/// `L_i = log(A0_i/M_i)`. Around `A0`,
/// `Σ A log(A/M) ≈ Σ [(γ − A)²/(2A0) + ω]` to second order whenever
/// `Σ A = Σ M`.
pub fn std_mem_quadratic_terms(a0: &[f64], m: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("quadratic terms", m.len(), a0.len())?;
    if let Some(i) = a0.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Domain(format!("A0[{i}] = {} must be positive", a0[i])));
    }
    if let Some(i) = m.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Domain(format!("model[{i}] = {} must be positive", m[i])));
    }
    let mut gamma = Vec::with_capacity(a0.len());
    let mut omega = Vec::with_capacity(a0.len());
    for (&a, &mm) in a0.iter().zip(m) {
        let l = (a / mm).ln();
        gamma.push(a * (1.0 - l));
        omega.push(mm - a * (1.0 - l + 0.5 * l * l));
    }
    Ok((gamma, omega))
}
