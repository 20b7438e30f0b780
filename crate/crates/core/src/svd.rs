//! Singular-system analysis: normal solution, noise-driven truncation and
//! the box-constrained coefficient optimization for integral constraints.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg::box_qp;
use crate::problem::{inner_product_data, DataSet, DiscretizedProblem, IntegralConstraint};

/// Default relative rank tolerance `λ_M/λ_1`.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// `λ_i`, data-space vectors `v_i` and object-space functions `u_i` with
/// `K u_i = λ_i v_i` and `Kᵀ v_i = λ_i u_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSystem {
    lambdas: Vec<f64>,
    /// columns are `v_i` (length Nτ)
    v: DMatrix<f64>,
    /// columns are `u_i` on the grid (length N)
    u: DMatrix<f64>,
}

impl SingularSystem {
    /// Decomposes an Nτ×N matrix, keeping singular values with
    /// `λ_i/λ_1 ≥ rank_tol`.
    pub fn from_matrix(k: &DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        if !(rank_tol > 0.0 && rank_tol < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rank_tol must lie in (0, 1), got {rank_tol}"
            )));
        }
        let svd = k.clone().svd(true, true);
        let (Some(uu), Some(vt)) = (svd.u, svd.v_t) else {
            return Err(Error::LinearAlgebra("SVD did not produce singular vectors".into()));
        };
        let s = svd.singular_values;
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let lambda1 = order.first().map(|&i| s[i]).unwrap_or(0.0);
        if !(lambda1 > 0.0) {
            return Err(Error::Degenerate(
                "kernel matrix has no positive singular values".into(),
            ));
        }
        let kept: Vec<usize> = order
            .into_iter()
            .filter(|&i| s[i] / lambda1 >= rank_tol)
            .collect();
        let m = kept.len();
        let mut v = DMatrix::zeros(k.nrows(), m);
        let mut u = DMatrix::zeros(k.ncols(), m);
        let mut lambdas = Vec::with_capacity(m);
        for (c, &i) in kept.iter().enumerate() {
            let mut vi = uu.column(i).clone_owned();
            let mut ui = vt.row(i).transpose();
            let cutoff = 1e-12 * vi.amax();
            if let Some(first) = vi.iter().find(|x| x.abs() > cutoff) {
                if *first < 0.0 {
                    vi.neg_mut();
                    ui.neg_mut();
                }
            }
            v.set_column(c, &vi);
            u.set_column(c, &ui);
            lambdas.push(s[i]);
        }
        Ok(Self { lambdas, v, u })
    }

    pub fn rank(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v_vec(&self, i: usize) -> Vec<f64> {
        self.v.column(i).iter().copied().collect()
    }

    pub fn u_vec(&self, i: usize) -> Vec<f64> {
        self.u.column(i).iter().copied().collect()
    }

    /// `λ_i/λ_1` for every retained term.
    pub fn relative_lambdas(&self) -> Vec<f64> {
        let l1 = self.lambdas[0];
        self.lambdas.iter().map(|l| l / l1).collect()
    }

    /// Number of terms with `λ_i/λ_1 ≥ cutoff`.
    pub fn count_above(&self, cutoff: f64) -> usize {
        let l1 = self.lambdas[0];
        self.lambdas.iter().take_while(|&&l| l / l1 >= cutoff).count()
    }
}

/// `b_i = (v_i, G̃)/λ_i` and the box half-widths `Δb_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub b: Vec<f64>,
    pub db: Vec<f64>,
}

impl CoefficientSet {
    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// First `r` coefficients.
    pub fn truncated(&self, r: usize) -> Result<Self> {
        if r > self.b.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate {} coefficients to {r}",
                self.b.len()
            )));
        }
        Ok(Self {
            b: self.b[..r].to_vec(),
            db: self.db[..r].to_vec(),
        })
    }
}

/// `(K K†)_ij = Σ_k K_ik K_jk`.
pub fn build_gram(problem: &DiscretizedProblem) -> DMatrix<f64> {
    let k = problem.kmatrix();
    k * k.transpose()
}

pub fn compute_singular_system(
    problem: &DiscretizedProblem,
    rank_tol: f64,
) -> Result<SingularSystem> {
    SingularSystem::from_matrix(problem.kmatrix(), rank_tol)
}

pub fn expansion_coefficients(system: &SingularSystem, data: &DataSet) -> Result<CoefficientSet> {
    check_len("expansion coefficients", system.v.nrows(), data.len())?;
    let mut b = Vec::with_capacity(system.rank());
    let mut db = Vec::with_capacity(system.rank());
    for (i, &l) in system.lambdas.iter().enumerate() {
        let vi: Vec<f64> = system.v.column(i).iter().copied().collect();
        let vabs: Vec<f64> = vi.iter().map(|x| x.abs()).collect();
        b.push(inner_product_data(&vi, data.values())? / l);
        db.push(inner_product_data(&vabs, data.sigmas())? / l);
    }
    Ok(CoefficientSet { b, db })
}

/// Mean relative error `(1/n) Σ σ_i/|G̃_i|` over the nonzero data values,
/// with the number of excluded zero values.
pub fn noise_threshold(data: &DataSet) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut used = 0usize;
    for (g, s) in data.values().iter().zip(data.sigmas()) {
        if *g == 0.0 {
            continue;
        }
        sum += s / g.abs();
        used += 1;
    }
    let excluded = data.len() - used;
    if excluded > 0 {
        log::warn!("{excluded} zero data value(s) excluded from the truncation threshold");
    }
    if used == 0 {
        return Err(Error::Degenerate(
            "all data values are zero; truncation threshold undefined".into(),
        ));
    }
    Ok((sum / used as f64, excluded))
}

/// Number of leading terms with `λ_i/λ_1` at or above the mean relative
/// error of the data.
pub fn truncation_index(system: &SingularSystem, data: &DataSet) -> Result<usize> {
    let (threshold, _) = noise_threshold(data)?;
    Ok(system.count_above(threshold))
}

/// `Σ_{i ≤ r_cut} b_i u_i` on the grid.
pub fn reconstruct(system: &SingularSystem, coeffs: &CoefficientSet, r_cut: usize) -> Result<Vec<f64>> {
    if r_cut > system.rank() || r_cut > coeffs.len() {
        return Err(Error::InvalidArgument(format!(
            "r_cut = {r_cut} exceeds available terms (rank {}, {} coefficients)",
            system.rank(),
            coeffs.len()
        )));
    }
    let n = system.u.nrows();
    let mut a = vec![0.0; n];
    for i in 0..r_cut {
        let bi = coeffs.b[i];
        for (aj, uij) in a.iter_mut().zip(system.u.column(i).iter()) {
            *aj += bi * uij;
        }
    }
    Ok(a)
}

/// Result of a truncated SVD solve.
#[derive(Debug, Clone)]
pub struct TsvdSolution {
    pub object: Vec<f64>,
    pub r_cut: usize,
    pub threshold: f64,
    pub system: SingularSystem,
    pub coeffs: CoefficientSet,
}

/// Singular system, coefficients and reconstruction in one call.
///
/// `cutoff = None` uses the data-driven threshold; `Some(0.0)` keeps every
/// retained term (the normal solution).
pub fn tsvd_solve(
    problem: &DiscretizedProblem,
    rank_tol: f64,
    cutoff: Option<f64>,
) -> Result<TsvdSolution> {
    let system = compute_singular_system(problem, rank_tol)?;
    let coeffs = expansion_coefficients(&system, problem.data())?;
    let threshold = match cutoff {
        Some(c) if c >= 0.0 && c.is_finite() => c,
        Some(c) => {
            return Err(Error::InvalidArgument(format!(
                "cut-off must be a finite non-negative number, got {c}"
            )))
        }
        None => noise_threshold(problem.data())?.0,
    };
    let r_cut = system.count_above(threshold);
    let object = reconstruct(&system, &coeffs, r_cut)?;
    Ok(TsvdSolution {
        object,
        r_cut,
        threshold,
        system,
        coeffs,
    })
}

/// Cost minimized over the coefficient box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostFunctional {
    /// `Σ b̃_i²`, the squared object norm
    Norm,
    /// unhalved `Σ ((G̃_i − G_i(b̃))/σ_i)²`
    ChiSquared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedSvdConfig {
    pub cost: CostFunctional,
    /// relative part of the equality tolerance
    pub rel_tol: f64,
    /// absolute floor of the equality tolerance
    pub abs_tol: f64,
    pub continuation_steps: usize,
    pub penalty_factor: f64,
}

impl Default for ConstrainedSvdConfig {
    fn default() -> Self {
        Self {
            cost: CostFunctional::ChiSquared,
            rel_tol: 1e-6,
            abs_tol: 1e-10,
            continuation_steps: 8,
            penalty_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedSvdSolution {
    pub object: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// `Σ_j g_l(x_j) dx Ã(x_j) − c_l` per constraint
    pub residuals: Vec<f64>,
    pub cost: f64,
    pub penalty_steps: usize,
}

/// Minimizes the selected cost over `b_i − Δb_i ≤ b̃_i ≤ b_i + Δb_i` subject
/// to every integral constraint, using the first `coeffs.len()` terms of
/// `system`.
///
/// Equalities are enforced by an augmented Lagrangian whose penalty grows by
/// `penalty_factor` whenever the residual stalls; each subproblem is a
/// box-constrained QP.
pub fn constrained_svd_solve(
    problem: &DiscretizedProblem,
    system: &SingularSystem,
    coeffs: &CoefficientSet,
    constraints: &[IntegralConstraint],
    cfg: &ConstrainedSvdConfig,
) -> Result<ConstrainedSvdSolution> {
    if constraints.is_empty() {
        return Err(Error::InvalidArgument(
            "constrained SVD needs at least one integral constraint".into(),
        ));
    }
    let r = coeffs.len();
    if r == 0 || r > system.rank() {
        return Err(Error::InvalidArgument(format!(
            "coefficient count {r} must lie in 1..={}",
            system.rank()
        )));
    }
    check_len("constrained svd box widths", r, coeffs.db.len())?;
    if let Some(i) = coeffs.db.iter().position(|d| !(*d >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "box width db[{i}] = {} is negative",
            coeffs.db[i]
        )));
    }
    check_len("constrained svd grid", problem.n_grid(), system.u.nrows())?;

    let u = system.u.columns(0, r).clone_owned();
    // C_li = Σ_j g_l(x_j) dx u_i(x_j), rows normalized to unit length
    let mut cmat = DMatrix::zeros(constraints.len(), r);
    let mut targets = DVector::zeros(constraints.len());
    let mut tols = Vec::with_capacity(constraints.len());
    let mut row_scale = Vec::with_capacity(constraints.len());
    for (l, c) in constraints.iter().enumerate() {
        let w = DVector::from_vec(c.grid_weights(problem.grid()));
        let row = u.transpose() * &w;
        let norm = row.norm();
        if !(norm > 0.0) {
            return Err(Error::Degenerate(format!(
                "constraint '{}' is orthogonal to the retained singular functions",
                c.name()
            )));
        }
        cmat.set_row(l, &(row.transpose() / norm));
        targets[l] = c.target() / norm;
        tols.push((cfg.rel_tol * c.target().abs()).max(cfg.abs_tol));
        row_scale.push(norm);
    }

    let (h, g) = match cfg.cost {
        CostFunctional::Norm => (DMatrix::identity(r, r) * 2.0, DVector::zeros(r)),
        CostFunctional::ChiSquared => {
            let data = problem.data();
            let ku = problem.kmatrix() * &u;
            let winv: Vec<f64> = data.sigmas().iter().map(|s| 1.0 / (s * s)).collect();
            let mut wku = ku.clone();
            for (i, w) in winv.iter().enumerate() {
                wku.row_mut(i).scale_mut(*w);
            }
            let gt = DVector::from_column_slice(data.values());
            (ku.transpose() * &wku * 2.0, -(wku.transpose() * gt) * 2.0)
        }
    };
    let cost_const = match cfg.cost {
        CostFunctional::Norm => 0.0,
        CostFunctional::ChiSquared => problem
            .data()
            .values()
            .iter()
            .zip(problem.data().sigmas())
            .map(|(g, s)| (g / s) * (g / s))
            .sum(),
    };
    let cost_of = |b: &DVector<f64>| 0.5 * (b.transpose() * &h * b)[0] + g.dot(b) + cost_const;

    let lo: Vec<f64> = coeffs.b.iter().zip(&coeffs.db).map(|(b, d)| b - d).collect();
    let hi: Vec<f64> = coeffs.b.iter().zip(&coeffs.db).map(|(b, d)| b + d).collect();
    let residuals_of = |b: &DVector<f64>| -> Vec<f64> {
        let scaled = &cmat * b - &targets;
        scaled.iter().zip(&row_scale).map(|(v, s)| v * s).collect()
    };
    let feasible = |res: &[f64]| res.iter().zip(&tols).all(|(r, t)| r.abs() <= *t);
    let violation = |res: &[f64]| res.iter().zip(&tols).map(|(r, t)| r.abs() / t).fold(0.0, f64::max);

    let hscale = h.diagonal().iter().fold(0.0_f64, |m, v| m.max(*v)).max(f64::MIN_POSITIVE);
    let mut rho = hscale;
    let mut mult = DVector::<f64>::zeros(constraints.len());
    let mut x = coeffs.b.clone();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let ctc = cmat.transpose() * &cmat;

    for step in 0..=cfg.continuation_steps {
        let mut prev_violation = f64::INFINITY;
        for _ in 0..25 {
            // ½bᵀHb + gᵀb + multᵀ(Cb − c) + ½ρ‖Cb − c‖²
            let ha = &h + &ctc * rho;
            let ga = &g + cmat.transpose() * (&mult - &targets * rho);
            let b = box_qp(&ha, &ga, &lo, &hi, &x)?;
            let res = residuals_of(&b);
            let viol = violation(&res);
            let worst_abs = res.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
            if best.as_ref().is_none_or(|(v, _)| worst_abs < *v) {
                best = Some((worst_abs, res.clone()));
            }
            x = b.iter().copied().collect();
            if feasible(&res) {
                let coefficients = x.clone();
                let object = (&u * &b).iter().copied().collect();
                return Ok(ConstrainedSvdSolution {
                    object,
                    coefficients,
                    residuals: res,
                    cost: cost_of(&b),
                    penalty_steps: step,
                });
            }
            mult += (&cmat * &b - &targets) * rho;
            if viol > 0.25 * prev_violation {
                break;
            }
            prev_violation = viol;
        }
        rho *= cfg.penalty_factor;
    }
    let (best_residual, _) = best.unwrap_or((f64::INFINITY, Vec::new()));
    Err(Error::Infeasible {
        best_residual,
        tolerance: tols.iter().copied().fold(f64::INFINITY, f64::min),
    })
}
