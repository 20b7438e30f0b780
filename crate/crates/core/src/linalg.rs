//! Small dense solvers used by the SVD and entropy engines.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// Solves `H x = rhs` for symmetric positive definite `H`.
///
/// A failed factorization is retried with a diagonal shift growing from
/// `1e-14·max|H_ii|`; semidefinite systems from rank-deficient kernels hit
/// this path.
pub fn spd_solve(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("spd solve", h.nrows(), rhs.len())?;
    if let Some(ch) = h.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    let scale = h.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut shift = 1e-14 * scale;
    for _ in 0..12 {
        let mut hs = h.clone();
        for i in 0..hs.nrows() {
            hs[(i, i)] += shift;
        }
        if let Some(ch) = hs.cholesky() {
            log::debug!("spd_solve: factorized with diagonal shift {shift:e}");
            return Ok(ch.solve(rhs));
        }
        shift *= 10.0;
    }
    Err(Error::LinearAlgebra(
        "matrix is not positive definite even after diagonal shifting".into(),
    ))
}

/// Minimizes `½ xᵀHx + gᵀx` subject to `lo ≤ x ≤ hi` with a primal
/// active-set method. `H` must be positive definite on every free subspace.
/// Infinite bounds are allowed.
pub fn box_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &[f64],
    hi: &[f64],
    x0: &[f64],
) -> Result<DVector<f64>> {
    let n = g.len();
    check_len("box qp hessian", n, h.nrows())?;
    check_len("box qp hessian", n, h.ncols())?;
    check_len("box qp lower", n, lo.len())?;
    check_len("box qp upper", n, hi.len())?;
    check_len("box qp start", n, x0.len())?;
    if let Some(i) = (0..n).find(|&i| !(lo[i] <= hi[i])) {
        return Err(Error::InvalidArgument(format!(
            "box bounds crossed at {i}: {} > {}",
            lo[i], hi[i]
        )));
    }

    let mut x = DVector::from_iterator(n, (0..n).map(|i| x0[i].clamp(lo[i], hi[i])));
    // fixed[i]: Some(true) at upper bound, Some(false) at lower bound
    let mut fixed: Vec<Option<bool>> = (0..n)
        .map(|i| if lo[i] == hi[i] { Some(false) } else { None })
        .collect();
    let hscale = h.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let tol = 1e-12 * hscale;

    let mut stationary = false;
    for _ in 0..(20 * n + 100) {
        let grad = h * &x + g;
        if stationary {
            // minimizer on the working set: release a bound with a wrong-sign multiplier
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..n {
                if lo[i] == hi[i] {
                    continue;
                }
                let mult = match fixed[i] {
                    Some(false) => grad[i],
                    Some(true) => -grad[i],
                    None => continue,
                };
                if mult < -tol && worst.is_none_or(|(_, w)| mult < w) {
                    worst = Some((i, mult));
                }
            }
            match worst {
                Some((i, _)) => fixed[i] = None,
                None => return Ok(x),
            }
            stationary = false;
            continue;
        }
        let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
        let mut p = DVector::zeros(n);
        if !free.is_empty() {
            let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
            let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| -grad[i]));
            let pf = spd_solve(&hff, &rhs)?;
            for (a, &i) in free.iter().enumerate() {
                p[i] = pf[a];
            }
        }
        if p.amax() <= 1e-14 * x.amax().max(1.0) {
            stationary = true;
            continue;
        }
        let mut step = 1.0;
        let mut blocking = None;
        for &i in &free {
            let t = if p[i] < 0.0 && lo[i].is_finite() {
                (lo[i] - x[i]) / p[i]
            } else if p[i] > 0.0 && hi[i].is_finite() {
                (hi[i] - x[i]) / p[i]
            } else {
                continue;
            };
            if t < step {
                step = t.max(0.0);
                blocking = Some((i, p[i] > 0.0));
            }
        }
        x += step * &p;
        if let Some((i, upper)) = blocking {
            x[i] = if upper { hi[i] } else { lo[i] };
            fixed[i] = Some(upper);
        } else {
            stationary = true;
        }
    }
    Err(Error::LinearAlgebra(
        "box-constrained QP did not terminate".into(),
    ))
}

/// Result of a bounded Nelder–Mead run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Derivative-free minimization of `f` over the box `[lo, hi]`.
///
/// Points are clamped into the box before each evaluation, and the returned
/// point is clamped as well.
pub fn nelder_mead(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_evals: usize,
    ftol: f64,
) -> Result<SimplexResult> {
    let n = x0.len();
    check_len("nelder-mead lower", n, lo.len())?;
    check_len("nelder-mead upper", n, hi.len())?;
    if n == 0 {
        return Err(Error::InvalidArgument("nelder-mead needs at least one parameter".into()));
    }
    let clamp = |p: &[f64]| -> Vec<f64> { p.iter().zip(lo).zip(hi).map(|((v, l), h)| v.clamp(*l, *h)).collect() };
    let evals = std::cell::Cell::new(0usize);
    let eval = |p: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(&clamp(p));
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let start = clamp(x0);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(&start);
    simplex.push((start.clone(), v0));
    for k in 0..n {
        let mut p = start.clone();
        let width = hi[k] - lo[k];
        let mut h = if p[k] != 0.0 { 0.05 * p[k].abs() } else { 2.5e-4 };
        if width.is_finite() {
            h = h.min(0.25 * width).max(1e-3 * width);
        }
        p[k] = if p[k] + h <= hi[k] { p[k] + h } else { p[k] - h };
        let v = eval(&p);
        simplex.push((p, v));
    }

    let mut converged = false;
    while evals.get() < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= ftol * (best.abs() + ftol) {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|s| s.0[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < worst.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for s in simplex.iter_mut().skip(1) {
            let p: Vec<f64> = x_best.iter().zip(&s.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
            let v = eval(&p);
            *s = (p, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Ok(SimplexResult {
        x: clamp(&x),
        value,
        evaluations: evals.get(),
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn spd_solve_small_system() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let x = spd_solve(&h, &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_relative_eq!(x[0], 1.0 / 11.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], 7.0 / 11.0, epsilon = 1e-14);
    }

    #[test]
    fn box_qp_unconstrained_minimum_inside() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let g = DVector::from_vec(vec![-2.0, -4.0]);
        let x = box_qp(&h, &g, &[-10.0, -10.0], &[10.0, 10.0], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn box_qp_projects_separable_problem() {
        let h = DMatrix::identity(3, 3);
        let g = DVector::from_vec(vec![-5.0, 5.0, -0.5]);
        let x = box_qp(&h, &g, &[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 0.0, 0.5]);
    }

    #[test]
    fn box_qp_fixed_variables() {
        let h = DMatrix::identity(2, 2);
        let g = DVector::from_vec(vec![-5.0, -5.0]);
        let x = box_qp(&h, &g, &[0.3, 0.0], &[0.3, 10.0], &[0.0, 0.0]).unwrap();
        assert_eq!(x[0], 0.3);
        assert_relative_eq!(x[1], 5.0, epsilon = 1e-12);
    }

    fn brute_force_2d(h: &DMatrix<f64>, g: &DVector<f64>, lo: &[f64], hi: &[f64]) -> f64 {
        let q = |a: f64, b: f64| {
            let x = DVector::from_vec(vec![a, b]);
            0.5 * (x.transpose() * h * &x)[0] + g.dot(&x)
        };
        let mut best = f64::INFINITY;
        let m = 400;
        for i in 0..=m {
            for j in 0..=m {
                let a = lo[0] + (hi[0] - lo[0]) * i as f64 / m as f64;
                let b = lo[1] + (hi[1] - lo[1]) * j as f64 / m as f64;
                best = best.min(q(a, b));
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn box_qp_matches_grid_search(
            a in 0.5f64..3.0, b in 0.5f64..3.0, c in -0.4f64..0.4,
            g0 in -5.0f64..5.0, g1 in -5.0f64..5.0,
        ) {
            let off = c * (a * b).sqrt();
            let h = DMatrix::from_row_slice(2, 2, &[a, off, off, b]);
            let g = DVector::from_vec(vec![g0, g1]);
            let lo = [-1.0, -0.5];
            let hi = [0.75, 1.0];
            let x = box_qp(&h, &g, &lo, &hi, &[0.0, 0.0]).unwrap();
            for i in 0..2 {
                prop_assert!(x[i] >= lo[i] && x[i] <= hi[i]);
            }
            let qx = 0.5 * (x.transpose() * &h * &x)[0] + g.dot(&x);
            prop_assert!(qx <= brute_force_2d(&h, &g, &lo, &hi) + 1e-9);
        }
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |p: &[f64]| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2);
        let r = nelder_mead(f, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], 20_000, 1e-16).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn nelder_mead_respects_bounds() {
        let f = |p: &[f64]| (p[0] - 3.0).powi(2);
        let r = nelder_mead(f, &[0.0], &[-1.0], &[1.0], 2000, 1e-14).unwrap();
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-6);
    }
}
