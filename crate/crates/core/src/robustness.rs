//! Influence functions of the WMDPDE, the WRBE and the Bayes factor under
//! point contamination of the failure-time distribution.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TestPlan;
use crate::divergence::powg;
use crate::error::{NosdError, Result};
use crate::estimate::{sandwich_matrices, symmetric_inverse};
use crate::hmc::PosteriorChains;
use crate::model::{cell_probabilities, cells_with_gradient, clamp_prob, failure_cell, GroupDesign, ModelParams, Vec4};
use crate::testing::HypothesisSpec;

/// Degenerate contamination at failure time `time` from `cause` (1 or 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationPoint {
    pub time: f64,
    pub cause: u8,
    /// Contaminated group; `None` contaminates every group at once.
    #[serde(default)]
    pub group: Option<usize>,
}

impl ContaminationPoint {
    pub fn all_groups(time: f64, cause: u8) -> Self {
        Self { time, cause, group: None }
    }

    pub fn validate(&self, plan: &TestPlan) -> Result<()> {
        if !(self.time >= 0.0) || !self.time.is_finite() {
            return Err(NosdError::Config(format!("contamination time must be nonnegative, got {}", self.time)));
        }
        if !(1..=2).contains(&self.cause) {
            return Err(NosdError::Config(format!("cause must be 1 or 2, got {}", self.cause)));
        }
        if let Some(i) = self.group {
            if i >= plan.n_groups() {
                return Err(NosdError::Config(format!("group {i} out of range")));
            }
        }
        Ok(())
    }

    fn applies_to(&self, i: usize) -> bool {
        self.group.is_none_or(|g| g == i)
    }
}

/// Flat cell receiving the point mass: the interval `(tau_{l-1}, tau_l]`
/// holding `time` (with `time = 0` in the first), or survival past `tau_L`.
pub fn indicator_cell(point: &ContaminationPoint, design: &GroupDesign) -> usize {
    match design.tau.iter().position(|&tau| point.time <= tau) {
        Some(l) => failure_cell(l, usize::from(point.cause - 1)),
        None => 0,
    }
}

/// Influence function of the WMDPDE with tuning `gamma` (the MLE at `gamma = 0`).
pub fn if_wmdpde(point: &ContaminationPoint, params: &ModelParams, plan: &TestPlan, gamma: f64) -> Result<Vec4> {
    point.validate(plan)?;
    let (q, _) = sandwich_matrices(params, plan, gamma)?;
    let qi = symmetric_inverse(&q, "Q")?;
    Ok(qi * wmdpde_score(point, params, plan, gamma)?)
}

/// `sum_i w_i sum_h (delta - p) p^{gamma - 1} dp` over contaminated groups.
fn wmdpde_score(point: &ContaminationPoint, params: &ModelParams, plan: &TestPlan, gamma: f64) -> Result<Vec4> {
    let w = plan.weights();
    let mut s = Vec4::zeros();
    for (i, g) in plan.groups.iter().enumerate().filter(|(i, _)| point.applies_to(*i)) {
        let (p, du) = cells_with_gradient(params, g)?;
        let hit = indicator_cell(point, g);
        for (c, pc) in p.flat().into_iter().enumerate() {
            let delta = if c == hit { 1.0 } else { 0.0 };
            s += du.column(c) * (w[i] * (delta - pc) * powg(pc, gamma - 1.0));
        }
    }
    Ok(s)
}

/// Average of `if_wmdpde` over the model's own cell distribution, one group at
/// a time; zero for a Fisher-consistent functional.
pub fn if_wmdpde_model_average(params: &ModelParams, plan: &TestPlan, gamma: f64) -> Result<Vec4> {
    let (q, _) = sandwich_matrices(params, plan, gamma)?;
    let qi = symmetric_inverse(&q, "Q")?;
    let w = plan.weights();
    let mut total = Vec4::zeros();
    for (i, g) in plan.groups.iter().enumerate() {
        let (p, du) = cells_with_gradient(params, g)?;
        let p = p.flat();
        for (hit, &ph) in p.iter().enumerate() {
            let mut s = Vec4::zeros();
            for (c, &pc) in p.iter().enumerate() {
                let delta = if c == hit { 1.0 } else { 0.0 };
                s += du.column(c) * (w[i] * (delta - pc) * powg(pc, gamma - 1.0));
            }
            total += qi * s * ph;
        }
    }
    Ok(total)
}

/// `X_gamma(params) = (1/gamma) sum_i w_i sum_h (delta_ih - p_ref,ih) p_ih(params)^gamma`,
/// with the `gamma -> 0` limit `sum (delta - p_ref) ln p`.
pub fn x_gamma(point: &ContaminationPoint, params: &ModelParams, reference: &ModelParams, plan: &TestPlan, gamma: f64) -> Result<f64> {
    let w = plan.weights();
    let mut total = 0.0;
    for (i, g) in plan.groups.iter().enumerate().filter(|(i, _)| point.applies_to(*i)) {
        let p = cell_probabilities(params, g)?.flat();
        let pref = cell_probabilities(reference, g)?.flat();
        let hit = indicator_cell(point, g);
        for (c, (&pc, &rc)) in p.iter().zip(&pref).enumerate() {
            let delta = if c == hit { 1.0 } else { 0.0 };
            let weight = if gamma == 0.0 { clamp_prob(pc).ln() } else { powg(pc, gamma) / gamma };
            total += w[i] * (delta - rc) * weight;
        }
    }
    Ok(total)
}

/// Sample covariance between each coordinate and `values`.
fn cross_covariance(draws: &[[f64; 4]], values: &[f64]) -> Vec4 {
    let n = draws.len() as f64;
    if draws.len() < 2 {
        return Vec4::zeros();
    }
    let mx = values.iter().sum::<f64>() / n;
    let mut mean = Vec4::zeros();
    for d in draws {
        mean += Vec4::from(*d);
    }
    mean /= n;
    let mut cov = Vec4::zeros();
    for (d, v) in draws.iter().zip(values) {
        cov += (Vec4::from(*d) - mean) * (v - mx);
    }
    cov / (n - 1.0)
}

/// Influence function of the WRBE: posterior covariance of the parameters
/// with `X_gamma`, using `reference` as the uncontaminated model.
pub fn if_wrbe(
    point: &ContaminationPoint,
    chains: &PosteriorChains,
    plan: &TestPlan,
    gamma: f64,
    reference: &ModelParams,
) -> Result<Vec4> {
    point.validate(plan)?;
    let draws = chains.pooled();
    let xs = draws
        .iter()
        .map(|d| x_gamma(point, &ModelParams::from_array(*d), reference, plan, gamma))
        .collect::<Result<Vec<f64>>>()?;
    Ok(cross_covariance(&draws, &xs))
}

/// Splits pooled draws into the null ball and its complement.
pub fn split_by_region(chains: &PosteriorChains, hyp: &HypothesisSpec) -> (Vec<[f64; 4]>, Vec<[f64; 4]>) {
    chains.iter().copied().partition(|d| hyp.contains(d))
}

/// Influence function of the Bayes factor: `bf01 * (E_0[X_gamma] - E_1[X_gamma])`
/// with expectations over draws from the null ball and its complement.
pub fn if_bayes_factor(
    point: &ContaminationPoint,
    bf01: f64,
    null_draws: &[[f64; 4]],
    alt_draws: &[[f64; 4]],
    plan: &TestPlan,
    gamma: f64,
    reference: &ModelParams,
) -> Result<f64> {
    point.validate(plan)?;
    if null_draws.is_empty() {
        return Err(NosdError::EmptyRegion { region: "the null ball" });
    }
    if alt_draws.is_empty() {
        return Err(NosdError::EmptyRegion { region: "the alternative region" });
    }
    let mean_x = |draws: &[[f64; 4]]| -> Result<f64> {
        let s = draws
            .iter()
            .map(|d| x_gamma(point, &ModelParams::from_array(*d), reference, plan, gamma))
            .sum::<Result<f64>>()?;
        Ok(s / draws.len() as f64)
    };
    Ok(bf01 * (mean_x(null_draws)? - mean_x(alt_draws)?))
}

/// Influence values on a grid of contamination times for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfCurve {
    pub estimator: String,
    pub gamma: f64,
    pub cause: u8,
    pub t: Vec<f64>,
    /// One row per `t`: four components, or one for the Bayes factor.
    pub values: Vec<Vec<f64>>,
}

impl IfCurve {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}

/// `n` evenly spaced times on `[0, 1.5 * max_i tau_iL]`.
pub fn default_t_grid(plan: &TestPlan, n: usize) -> Vec<f64> {
    let top = 1.5 * plan.groups.iter().map(GroupDesign::last_inspection).fold(0.0, f64::max);
    linspace(0.0, top, n)
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

fn curve(estimator: &str, gamma: f64, cause: u8, grid: &[f64], f: impl Fn(f64) -> Result<Vec<f64>> + Sync) -> Result<IfCurve> {
    let values = grid.par_iter().map(|&t| f(t)).collect::<Result<Vec<_>>>()?;
    Ok(IfCurve { estimator: estimator.to_string(), gamma, cause, t: grid.to_vec(), values })
}

pub fn if_wmdpde_curve(params: &ModelParams, plan: &TestPlan, gamma: f64, cause: u8, grid: &[f64]) -> Result<IfCurve> {
    let (q, _) = sandwich_matrices(params, plan, gamma)?;
    let qi = symmetric_inverse(&q, "Q")?;
    curve("wmdpde", gamma, cause, grid, |t| {
        let point = ContaminationPoint::all_groups(t, cause);
        point.validate(plan)?;
        Ok((qi * wmdpde_score(&point, params, plan, gamma)?).iter().copied().collect())
    })
}

pub fn if_wrbe_curve(
    chains: &PosteriorChains,
    plan: &TestPlan,
    gamma: f64,
    reference: &ModelParams,
    cause: u8,
    grid: &[f64],
) -> Result<IfCurve> {
    curve("wrbe", gamma, cause, grid, |t| {
        Ok(if_wrbe(&ContaminationPoint::all_groups(t, cause), chains, plan, gamma, reference)?.iter().copied().collect())
    })
}

#[allow(clippy::too_many_arguments)]
pub fn if_bayes_factor_curve(
    bf01: f64,
    null_draws: &[[f64; 4]],
    alt_draws: &[[f64; 4]],
    plan: &TestPlan,
    gamma: f64,
    reference: &ModelParams,
    cause: u8,
    grid: &[f64],
) -> Result<IfCurve> {
    curve("bayes_factor", gamma, cause, grid, |t| {
        let point = ContaminationPoint::all_groups(t, cause);
        Ok(vec![if_bayes_factor(&point, bf01, null_draws, alt_draws, plan, gamma, reference)?])
    })
}

const COMPONENTS: [&str; 4] = ["a1", "b1", "a2", "b2"];

/// Plot-ready CSV with columns `t,gamma,estimator,component,value`.
pub fn write_if_csv<W: Write>(mut out: W, curves: &[IfCurve]) -> Result<()> {
    writeln!(out, "t,gamma,estimator,component,value")?;
    for c in curves {
        for (t, row) in c.t.iter().zip(&c.values) {
            for (k, v) in row.iter().enumerate() {
                let comp = if row.len() == 4 { COMPONENTS[k] } else { "bf01" };
                writeln!(out, "{t},{},{}_cause{},{comp},{v}", c.gamma, c.estimator, c.cause)?;
            }
        }
    }
    Ok(())
}
