//! Maximum likelihood and minimum-DPD fitting, sandwich covariance, Wald
//! intervals and tuning-parameter selection.

use nalgebra::{Matrix4, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{empirical_probs, EmpiricalProbs, FailureCounts, TestPlan};
use crate::divergence::{
    bw_gradient_q, log_likelihood, log_likelihood_gradient, powg, wdpd_gradient_q, wdpd_q,
    weighted_log_likelihood_gradient_q,
};
use crate::error::{NosdError, Result};
use crate::model::{cells_with_gradient, ModelParams, Vec4};

pub type Mat4 = Matrix4<f64>;

/// Largest condition number accepted when inverting `Q`.
pub const MAX_CONDITION: f64 = 1e13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    /// Log-likelihood for the MLE, weighted DPD for the WMDPDE.
    pub objective: f64,
    /// Coordinate-descent sweeps.
    pub iterations: usize,
    pub converged: bool,
    /// `0` for the MLE.
    pub gamma: f64,
    /// Norm of the estimating-equation residual at `params`.
    pub residual_norm: f64,
}

/// Stopping rule and line-search settings of the coordinate descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub initial_half_width: f64,
    pub max_half_width: f64,
    /// Run damped Newton steps on the analytic gradient after the sweeps.
    pub polish: bool,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_sweeps: 500, initial_half_width: 0.5, max_half_width: 8.0, polish: true }
    }
}

/// Outcome of a generic minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec4,
    pub value: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective after each completed sweep, starting with the initial value.
    pub trace: Vec<f64>,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn golden_section(f: &mut impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, xtol: f64) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > xtol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes one coordinate of `f` around `x[j]`; never returns a worse point.
fn line_minimize(f: &impl Fn(&Vec4) -> f64, x: &Vec4, fx: f64, j: usize, opts: &DescentOptions) -> (f64, f64) {
    let x0 = x[j];
    let mut g = |t: f64| {
        let mut y = *x;
        y[j] = t;
        finite_or_inf(f(&y))
    };
    let mut h = opts.initial_half_width;
    loop {
        let bracketed = g(x0 - h) >= fx && g(x0 + h) >= fx;
        if bracketed || h >= opts.max_half_width {
            break;
        }
        h *= 2.0;
    }
    let (t, ft) = golden_section(&mut g, x0 - h, x0 + h, 1e-10 * (1.0 + x0.abs()));
    if ft < fx {
        (t, ft)
    } else {
        (x0, fx)
    }
}

fn fd_hessian(grad: &impl Fn(&Vec4) -> Option<Vec4>, x: &Vec4) -> Option<Mat4> {
    let mut h = Mat4::zeros();
    for j in 0..4 {
        let step = 1e-5 * (1.0 + x[j].abs());
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += step;
        xm[j] -= step;
        let col = (grad(&xp)? - grad(&xm)?) / (2.0 * step);
        h.set_column(j, &col);
    }
    Some((h + h.transpose()) * 0.5)
}

/// Damped Newton refinement; a step is kept only if it does not raise the
/// objective and lowers the gradient norm.
fn newton_polish(
    f: &impl Fn(&Vec4) -> f64,
    grad: &impl Fn(&Vec4) -> Option<Vec4>,
    mut x: Vec4,
    mut fx: f64,
) -> (Vec4, f64) {
    let Some(mut gx) = grad(&x) else { return (x, fx) };
    for _ in 0..60 {
        let gnorm = gx.norm();
        if gnorm < 1e-13 {
            break;
        }
        let Some(hess) = fd_hessian(grad, &x) else { break };
        let eig = SymmetricEigen::new(hess);
        let floor = eig.eigenvalues.abs().max() * 1e-10 + 1e-300;
        // modified Newton: flip and floor eigenvalues so the step is a descent direction
        let lam = eig.eigenvalues.map(|v| v.abs().max(floor));
        let mut step = -(eig.eigenvectors * Mat4::from_diagonal(&lam.map(|v| 1.0 / v)) * eig.eigenvectors.transpose() * gx);
        let sn = step.norm();
        if sn > 1.0 {
            step /= sn;
        }
        let mut accepted = false;
        let mut t = 1.0;
        for _ in 0..40 {
            let y = x + step * t;
            let fy = finite_or_inf(f(&y));
            if fy <= fx + 1e-14 * fx.abs().max(1e-300) {
                if let Some(gy) = grad(&y) {
                    if gy.norm() < gnorm || fy < fx {
                        x = y;
                        fx = fy;
                        gx = gy;
                        accepted = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (x, fx)
}

/// Cyclic coordinate descent with golden-section line searches, optionally
/// followed by a Newton polish driven by `grad`.
pub fn coordinate_descent(
    f: impl Fn(&Vec4) -> f64,
    grad: impl Fn(&Vec4) -> Option<Vec4>,
    init: Vec4,
    opts: &DescentOptions,
) -> Result<Minimum> {
    let mut x = init;
    let mut fx = finite_or_inf(f(&x));
    if !fx.is_finite() {
        return Err(NosdError::NonFiniteStart);
    }
    let mut trace = vec![fx];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..4 {
            let (t, ft) = line_minimize(&f, &x, fx, j, opts);
            max_change = max_change.max((t - x[j]).abs());
            x[j] = t;
            fx = ft;
        }
        trace.push(fx);
        if max_change < opts.tol {
            converged = true;
            break;
        }
    }
    if opts.polish {
        let (xp, fp) = newton_polish(&f, &grad, x, fx);
        x = xp;
        fx = fp;
    }
    Ok(Minimum { x, value: fx, sweeps, converged, trace })
}

/// Best point of `{-1, -0.5, 0, 0.5, 1}^4` under `f` (minimized).
pub fn grid_search(f: impl Fn(&Vec4) -> f64 + Sync) -> Vec4 {
    const LEVELS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
    (0..625usize)
        .into_par_iter()
        .map(|k| {
            let x = Vec4::new(LEVELS[k % 5], LEVELS[(k / 5) % 5], LEVELS[(k / 25) % 5], LEVELS[k / 125]);
            (k, x, finite_or_inf(f(&x)))
        })
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)))
        .map(|(_, x, _)| x)
        .expect("grid is nonempty")
}

fn neg_scaled_ll<'a>(plan: &'a TestPlan, counts: &'a FailureCounts) -> impl Fn(&Vec4) -> f64 + Sync + 'a {
    let scale = 1.0 / plan.total_devices() as f64;
    move |x: &Vec4| {
        log_likelihood(&ModelParams::from_vector(x), plan, counts).map_or(f64::INFINITY, |v| -v * scale)
    }
}

/// Grid-search starting point maximizing the likelihood.
pub fn mle_grid_init(plan: &TestPlan, counts: &FailureCounts) -> Result<ModelParams> {
    counts.validate_estimable(plan)?;
    Ok(ModelParams::from_vector(&grid_search(neg_scaled_ll(plan, counts))))
}

/// Grid-search starting point minimizing the weighted DPD.
pub fn wmdpde_grid_init(plan: &TestPlan, counts: &FailureCounts, gamma: f64) -> Result<ModelParams> {
    counts.validate_estimable(plan)?;
    let q = empirical_probs(counts, plan)?;
    wdpd_q(&ModelParams::from_array([0.0; 4]), plan, &q, gamma)?;
    Ok(ModelParams::from_vector(&grid_search(|x: &Vec4| {
        wdpd_q(&ModelParams::from_vector(x), plan, &q, gamma).unwrap_or(f64::INFINITY)
    })))
}

/// Residual of the estimating equations, `sum_i w_i sum_h (q - p) p^{gamma-1} dp`
/// (the weighted score at `gamma = 0`).
pub fn estimating_equation_residual(params: &ModelParams, plan: &TestPlan, q: &EmpiricalProbs, gamma: f64) -> Result<Vec4> {
    if gamma == 0.0 {
        weighted_log_likelihood_gradient_q(params, plan, q)
    } else {
        bw_gradient_q(params, plan, q, gamma)
    }
}

pub fn fit_mle(plan: &TestPlan, counts: &FailureCounts, init: ModelParams) -> Result<FitResult> {
    fit_mle_with(plan, counts, init, &DescentOptions::default())
}

pub fn fit_mle_with(plan: &TestPlan, counts: &FailureCounts, init: ModelParams, opts: &DescentOptions) -> Result<FitResult> {
    counts.validate_estimable(plan)?;
    let scale = 1.0 / plan.total_devices() as f64;
    let grad = |x: &Vec4| log_likelihood_gradient(&ModelParams::from_vector(x), plan, counts).ok().map(|g| -g * scale);
    let m = coordinate_descent(neg_scaled_ll(plan, counts), grad, init.to_vector(), opts)?;
    let params = ModelParams::from_vector(&m.x);
    let q = empirical_probs(counts, plan)?;
    let residual_norm = estimating_equation_residual(&params, plan, &q, 0.0)?.norm();
    Ok(FitResult {
        params,
        objective: -m.value / scale,
        iterations: m.sweeps,
        converged: m.converged,
        gamma: 0.0,
        residual_norm,
    })
}

pub fn fit_wmdpde(plan: &TestPlan, counts: &FailureCounts, gamma: f64, init: ModelParams) -> Result<FitResult> {
    counts.validate_estimable(plan)?;
    fit_wmdpde_q(plan, &empirical_probs(counts, plan)?, gamma, init, &DescentOptions::default())
}

/// WMDPDE against arbitrary cell frequencies.
pub fn fit_wmdpde_q(plan: &TestPlan, q: &EmpiricalProbs, gamma: f64, init: ModelParams, opts: &DescentOptions) -> Result<FitResult> {
    if !(gamma > 0.0) {
        return Err(NosdError::InvalidGamma(gamma));
    }
    let f = |x: &Vec4| wdpd_q(&ModelParams::from_vector(x), plan, q, gamma).unwrap_or(f64::INFINITY);
    let grad = |x: &Vec4| wdpd_gradient_q(&ModelParams::from_vector(x), plan, q, gamma).ok();
    let m = coordinate_descent(f, grad, init.to_vector(), opts)?;
    let params = ModelParams::from_vector(&m.x);
    let residual_norm = estimating_equation_residual(&params, plan, q, gamma)?.norm();
    Ok(FitResult { params, objective: m.value, iterations: m.sweeps, converged: m.converged, gamma, residual_norm })
}

/// Asymptotic covariance `Q^{-1} R Q^{-1} / G` of the WMDPDE.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichCovariance {
    pub q: Mat4,
    pub r: Mat4,
    pub cov: Mat4,
    pub total_devices: u64,
}

impl SandwichCovariance {
    /// `tr(Q^{-1} R Q^{-1})`, the unscaled asymptotic variance.
    pub fn trace_unscaled(&self) -> f64 {
        self.cov.trace() * self.total_devices as f64
    }

    pub fn std_errors(&self) -> [f64; 4] {
        std::array::from_fn(|j| self.cov[(j, j)].max(0.0).sqrt())
    }
}

/// Eigen-decomposition based inverse of a symmetric matrix with a condition check.
pub fn symmetric_inverse(m: &Mat4, name: &'static str) -> Result<Mat4> {
    let eig = SymmetricEigen::new(*m);
    let abs = eig.eigenvalues.abs();
    let condition = abs.max() / abs.min();
    if !condition.is_finite() || condition > MAX_CONDITION || !abs.iter().all(|v| v.is_finite()) {
        return Err(NosdError::SingularMatrix { name, condition });
    }
    let inv = eig.eigenvectors * Mat4::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v)) * eig.eigenvectors.transpose();
    Ok((inv + inv.transpose()) * 0.5)
}

/// `Q_gamma` and `R_gamma` at `params`.
pub fn sandwich_matrices(params: &ModelParams, plan: &TestPlan, gamma: f64) -> Result<(Mat4, Mat4)> {
    if !(gamma >= 0.0) {
        return Err(NosdError::InvalidGamma(gamma));
    }
    let w = plan.weights();
    let mut q = Mat4::zeros();
    let mut r = Mat4::zeros();
    for (i, g) in plan.groups.iter().enumerate() {
        let (p, du) = cells_with_gradient(params, g)?;
        let mut xi = Vec4::zeros();
        let mut ri = Mat4::zeros();
        for (c, pc) in p.flat().into_iter().enumerate() {
            let u: Vec4 = du.column(c).into();
            let uu = u * u.transpose();
            q += uu * (w[i] * powg(pc, gamma - 1.0));
            ri += uu * powg(pc, 2.0 * gamma - 1.0);
            xi += u * powg(pc, gamma);
        }
        r += (ri - xi * xi.transpose()) * w[i];
    }
    Ok(((q + q.transpose()) * 0.5, (r + r.transpose()) * 0.5))
}

pub fn sandwich_covariance(params: &ModelParams, plan: &TestPlan, gamma: f64) -> Result<SandwichCovariance> {
    let (q, r) = sandwich_matrices(params, plan, gamma)?;
    let qi = symmetric_inverse(&q, "Q")?;
    let total = plan.total_devices();
    let cov = qi * r * qi / total as f64;
    Ok(SandwichCovariance { q, r, cov: (cov + cov.transpose()) * 0.5, total_devices: total })
}

/// `estimate_j +/- z_{(1+level)/2} sqrt(cov_jj)`.
pub fn wald_ci(fit: &FitResult, cov: &SandwichCovariance, level: f64) -> Result<[(f64, f64); 4]> {
    if !(level > 0.0 && level < 1.0) {
        return Err(NosdError::Config(format!("confidence level {level} outside (0, 1)")));
    }
    let z = Normal::standard().inverse_cdf((1.0 + level) / 2.0);
    let est = fit.params.to_array();
    let se = cov.std_errors();
    Ok(std::array::from_fn(|j| (est[j] - z * se[j], est[j] + z * se[j])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRow {
    pub gamma: f64,
    pub params: ModelParams,
    pub divergence: f64,
    pub trace: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSelection {
    pub gamma_star: f64,
    pub rows: Vec<TuningRow>,
    /// Grid points whose fit or covariance failed, with the reason.
    pub failures: Vec<(f64, String)>,
}

/// `gamma` values `0.10, 0.15, ..., 1.00`.
pub fn default_tuning_grid() -> Vec<f64> {
    (0..19).map(|k| (10 + 5 * k) as f64 / 100.0).collect()
}

/// Minimizes `C1 * D_gamma(fit) + C2 * tr(Q^{-1} R Q^{-1})` over `grid`.
pub fn select_tuning(plan: &TestPlan, counts: &FailureCounts, grid: &[f64], c1: f64, c2: f64) -> Result<TuningSelection> {
    if c1 < 0.0 || c2 < 0.0 || ((c1 + c2) - 1.0).abs() > 1e-12 {
        return Err(NosdError::Config(format!("weights C1 = {c1}, C2 = {c2} must be nonnegative and sum to one")));
    }
    if grid.is_empty() || grid.iter().any(|&g| !(g > 0.0 && g <= 1.0)) {
        return Err(NosdError::Config("tuning grid must be nonempty and inside (0, 1]".into()));
    }
    counts.validate_estimable(plan)?;
    let q = empirical_probs(counts, plan)?;
    let results: Vec<std::result::Result<TuningRow, (f64, String)>> = grid
        .par_iter()
        .map(|&gamma| {
            let row = || -> Result<TuningRow> {
                let init = wmdpde_grid_init(plan, counts, gamma)?;
                let fit = fit_wmdpde_q(plan, &q, gamma, init, &DescentOptions::default())?;
                let sc = sandwich_covariance(&fit.params, plan, gamma)?;
                let trace = sc.trace_unscaled();
                Ok(TuningRow { gamma, params: fit.params, divergence: fit.objective, trace, phi: c1 * fit.objective + c2 * trace })
            };
            row().map_err(|e| (gamma, e.to_string()))
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => {
                log::warn!("tuning fit at gamma = {} failed: {}", f.0, f.1);
                failures.push(f);
            }
        }
    }
    let gamma_star = rows
        .iter()
        .filter(|r| r.phi.is_finite())
        .min_by(|a, b| a.phi.total_cmp(&b.phi))
        .map(|r| r.gamma)
        .ok_or_else(|| NosdError::Config("no tuning value could be evaluated".into()))?;
    Ok(TuningSelection { gamma_star, rows, failures })
}
