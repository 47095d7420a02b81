//! Likelihood, weighted density power divergence and the maximizer surface `B^w_gamma`.
//!
//! Every objective has a `*_q` form taking cell frequencies directly, so the
//! same code serves raw frequencies, smoothed frequencies and point masses.

use crate::dataset::{empirical_probs, EmpiricalProbs, FailureCounts, TestPlan};
use crate::error::{NosdError, Result};
use crate::model::{cell_probabilities, cells_with_gradient, clamp_prob, ModelParams, Vec4};

/// Divergence order and group weights `w_i = g_i / G`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpdConfig {
    pub gamma: f64,
    pub weights: Vec<f64>,
}

impl DpdConfig {
    pub fn new(gamma: f64, plan: &TestPlan) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(NosdError::InvalidGamma(gamma));
        }
        Ok(Self { gamma, weights: plan.weights() })
    }
}

fn require_positive_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(NosdError::InvalidGamma(gamma))
    }
}

/// `p^gamma` through the log, with the probability floor.
#[inline]
pub(crate) fn powg(p: f64, gamma: f64) -> f64 {
    (gamma * clamp_prob(p).ln()).exp()
}

/// Multinomial log-likelihood with the additive constant dropped.
///
/// Returns `-inf` when a cell with a positive count has zero probability.
pub fn log_likelihood(params: &ModelParams, plan: &TestPlan, counts: &FailureCounts) -> Result<f64> {
    counts.validate_estimable(plan)?;
    let mut ll = 0.0;
    for (i, g) in plan.groups.iter().enumerate() {
        let p = cell_probabilities(params, g)?.flat();
        for (&n, &pc) in counts.flat(i).iter().zip(&p) {
            if n > 0 {
                if pc <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                ll += n as f64 * pc.ln();
            }
        }
    }
    Ok(ll)
}

/// Gradient of [`log_likelihood`].
pub fn log_likelihood_gradient(params: &ModelParams, plan: &TestPlan, counts: &FailureCounts) -> Result<Vec4> {
    counts.validate_estimable(plan)?;
    let mut grad = Vec4::zeros();
    for (i, g) in plan.groups.iter().enumerate() {
        let (p, du) = cells_with_gradient(params, g)?;
        let p = p.flat();
        for (c, &n) in counts.flat(i).iter().enumerate() {
            if n > 0 {
                grad += du.column(c) * (n as f64 / clamp_prob(p[c]));
            }
        }
    }
    Ok(grad)
}

/// `sum_i w_i sum_h q_ih ln p_ih`.
pub fn weighted_log_likelihood_q(params: &ModelParams, plan: &TestPlan, q: &EmpiricalProbs) -> Result<f64> {
    let w = plan.weights();
    let mut total = 0.0;
    for (i, g) in plan.groups.iter().enumerate() {
        let p = cell_probabilities(params, g)?.flat();
        let s: f64 = q.group(i).iter().zip(&p).filter(|(&qc, _)| qc > 0.0).map(|(&qc, &pc)| qc * clamp_prob(pc).ln()).sum();
        total += w[i] * s;
    }
    Ok(total)
}

pub fn weighted_log_likelihood_gradient_q(params: &ModelParams, plan: &TestPlan, q: &EmpiricalProbs) -> Result<Vec4> {
    let w = plan.weights();
    let mut grad = Vec4::zeros();
    for (i, g) in plan.groups.iter().enumerate() {
        let (p, du) = cells_with_gradient(params, g)?;
        for (c, (&qc, pc)) in q.group(i).iter().zip(p.flat()).enumerate() {
            if qc > 0.0 {
                grad += du.column(c) * (w[i] * qc / clamp_prob(pc));
            }
        }
    }
    Ok(grad)
}

/// Weighted DPD between frequencies `q` and the model at `params`.
pub fn wdpd_q(params: &ModelParams, plan: &TestPlan, q: &EmpiricalProbs, gamma: f64) -> Result<f64> {
    require_positive_gamma(gamma)?;
    let w = plan.weights();
    let mut total = 0.0;
    for (i, g) in plan.groups.iter().enumerate() {
        let p = cell_probabilities(params, g)?.flat();
        let mut s = 0.0;
        for (&qc, &pc) in q.group(i).iter().zip(&p) {
            let pg = powg(pc, gamma);
            // p^{g+1} - (g+1)/g q p^g + q^{g+1}/g, regrouped so that g -> 0 stays finite
            s += pc.max(0.0) * pg - qc * pg;
            if qc > 0.0 {
                let lr = qc.ln() - clamp_prob(pc).ln();
                s += qc * pg * (gamma * lr).exp_m1() / gamma;
            }
        }
        total += w[i] * s;
    }
    Ok(total)
}

/// Gradient of [`wdpd_q`]: `(gamma + 1) sum_i w_i sum_h (p - q) p^{gamma - 1} dp`.
pub fn wdpd_gradient_q(params: &ModelParams, plan: &TestPlan, q: &EmpiricalProbs, gamma: f64) -> Result<Vec4> {
    Ok(-(gamma + 1.0) * bw_gradient_q(params, plan, q, gamma)?)
}

/// `B^w_gamma = sum_i w_i [ (1/gamma) sum_h q p^gamma - sum_h p^{gamma+1} / (gamma + 1) ]`.
pub fn bw_objective_q(params: &ModelParams, plan: &TestPlan, q: &EmpiricalProbs, gamma: f64) -> Result<f64> {
    require_positive_gamma(gamma)?;
    let w = plan.weights();
    let mut total = 0.0;
    for (i, g) in plan.groups.iter().enumerate() {
        let p = cell_probabilities(params, g)?.flat();
        let mut s = 0.0;
        for (&qc, &pc) in q.group(i).iter().zip(&p) {
            let pg = powg(pc, gamma);
            s += qc * pg / gamma - pc.max(0.0) * pg / (gamma + 1.0);
        }
        total += w[i] * s;
    }
    Ok(total)
}

/// Gradient of [`bw_objective_q`]: `sum_i w_i sum_h (q - p) p^{gamma - 1} dp`.
pub fn bw_gradient_q(params: &ModelParams, plan: &TestPlan, q: &EmpiricalProbs, gamma: f64) -> Result<Vec4> {
    require_positive_gamma(gamma)?;
    let w = plan.weights();
    let mut grad = Vec4::zeros();
    for (i, g) in plan.groups.iter().enumerate() {
        let (p, du) = cells_with_gradient(params, g)?;
        for (c, (&qc, pc)) in q.group(i).iter().zip(p.flat()).enumerate() {
            let coef = (qc - pc) * powg(pc, gamma - 1.0);
            grad += du.column(c) * (w[i] * coef);
        }
    }
    Ok(grad)
}

/// Weighted KL divergence `sum_i w_i sum_h q ln(q / p)`, `+inf` if `q > 0 = p`.
pub fn kl_divergence_q(params: &ModelParams, plan: &TestPlan, q: &EmpiricalProbs) -> Result<f64> {
    let w = plan.weights();
    let mut total = 0.0;
    for (i, g) in plan.groups.iter().enumerate() {
        let p = cell_probabilities(params, g)?.flat();
        for (&qc, &pc) in q.group(i).iter().zip(&p) {
            if qc > 0.0 {
                if pc <= 0.0 {
                    return Ok(f64::INFINITY);
                }
                total += w[i] * qc * (qc.ln() - pc.ln());
            }
        }
    }
    Ok(total)
}

/// Data-only constant `sum_i w_i (1/gamma) sum_h q^{gamma+1}` linking the two objectives.
pub fn dpd_offset_q(plan: &TestPlan, q: &EmpiricalProbs, gamma: f64) -> Result<f64> {
    require_positive_gamma(gamma)?;
    let w = plan.weights();
    Ok((0..plan.n_groups())
        .map(|i| w[i] * q.group(i).iter().map(|&qc| powg(qc, gamma) * qc).sum::<f64>() / gamma)
        .sum())
}

pub fn wdpd(params: &ModelParams, plan: &TestPlan, counts: &FailureCounts, gamma: f64) -> Result<f64> {
    require_positive_gamma(gamma)?;
    wdpd_q(params, plan, &empirical_probs(counts, plan)?, gamma)
}

pub fn wdpd_gradient(params: &ModelParams, plan: &TestPlan, counts: &FailureCounts, gamma: f64) -> Result<Vec4> {
    wdpd_gradient_q(params, plan, &empirical_probs(counts, plan)?, gamma)
}

pub fn kl_divergence(params: &ModelParams, plan: &TestPlan, counts: &FailureCounts) -> Result<f64> {
    kl_divergence_q(params, plan, &empirical_probs(counts, plan)?)
}

pub fn bw_objective(params: &ModelParams, plan: &TestPlan, counts: &FailureCounts, gamma: f64) -> Result<f64> {
    require_positive_gamma(gamma)?;
    bw_objective_q(params, plan, &empirical_probs(counts, plan)?, gamma)
}

pub fn bw_gradient(params: &ModelParams, plan: &TestPlan, counts: &FailureCounts, gamma: f64) -> Result<Vec4> {
    bw_gradient_q(params, plan, &empirical_probs(counts, plan)?, gamma)
}

/// Model cell probabilities of every group, packaged as frequencies.
pub fn model_probs(params: &ModelParams, plan: &TestPlan) -> Result<EmpiricalProbs> {
    Ok(EmpiricalProbs {
        cells: plan.groups.iter().map(|g| cell_probabilities(params, g).map(|p| p.flat())).collect::<Result<_>>()?,
    })
}
