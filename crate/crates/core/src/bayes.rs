//! Data-driven Normal and Dirichlet priors and the DPD pseudo-posterior.

use serde::{Deserialize, Serialize};

use crate::dataset::{empirical_probs, smoothed_probs, EmpiricalProbs, FailureCounts, TestPlan};
use crate::divergence::{bw_gradient_q, bw_objective_q, weighted_log_likelihood_gradient_q, weighted_log_likelihood_q};
use crate::error::{NosdError, Result};
use crate::hmc::LogDensity;
use crate::model::{cell_probabilities, cells_with_gradient, clamp_prob, failure_cell, ModelParams, Vec4};

/// Smallest Dirichlet hyperparameter kept after clamping.
pub const HYPER_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Normal,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: PriorKind,
    /// Prior variance of the survival probability (Dirichlet only).
    #[serde(default = "default_sigma2")]
    pub sigma2_p: f64,
    /// Multiplier on `B^w_gamma`; `0` leaves the prior alone.
    #[serde(default = "default_scale")]
    pub posterior_scale: f64,
}

fn default_sigma2() -> f64 {
    0.06
}

fn default_scale() -> f64 {
    1.0
}

impl PriorSpec {
    pub fn normal() -> Self {
        Self { kind: PriorKind::Normal, sigma2_p: default_sigma2(), posterior_scale: 1.0 }
    }

    pub fn dirichlet(sigma2_p: f64) -> Self {
        Self { kind: PriorKind::Dirichlet, sigma2_p, posterior_scale: 1.0 }
    }

    pub fn with_scale(mut self, posterior_scale: f64) -> Self {
        self.posterior_scale = posterior_scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.posterior_scale >= 0.0) || !self.posterior_scale.is_finite() {
            return Err(NosdError::Config(format!("posterior_scale must be nonnegative, got {}", self.posterior_scale)));
        }
        if self.kind == PriorKind::Dirichlet && !(self.sigma2_p > 0.0) {
            return Err(NosdError::Config(format!("sigma2_p must be positive, got {}", self.sigma2_p)));
        }
        Ok(())
    }
}

/// Dirichlet hyperparameters per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletHyper {
    pub beta0: Vec<f64>,
    pub beta: Vec<Vec<[f64; 2]>>,
    /// Set when some hyperparameter was raised to [`HYPER_FLOOR`].
    pub clamped: bool,
}

impl DirichletHyper {
    /// Hyperparameters of group `i` in flat cell order.
    pub fn flat(&self, i: usize) -> Vec<f64> {
        let mut v = vec![self.beta0[i]];
        for b in &self.beta[i] {
            v.extend_from_slice(b);
        }
        v
    }
}

/// Moment-matched hyperparameters: `beta_ilr = q_ilr * c_i`, `beta_i0 = q_i0 * c_i`
/// with `c_i = q_i0 (1 - q_i0) / sigma2 - 1`.
///
/// Groups with `c_i <= 0` are clamped to [`HYPER_FLOOR`] with a warning; the
/// call fails only when no group is feasible.
pub fn dirichlet_hyperparams(qtilde: &EmpiricalProbs, sigma2_p: f64) -> Result<DirichletHyper> {
    if !(sigma2_p > 0.0) {
        return Err(NosdError::HyperparameterInfeasible(format!("sigma2_p = {sigma2_p} must be positive")));
    }
    let mut beta0 = Vec::new();
    let mut beta = Vec::new();
    let mut clamped = false;
    let mut any_feasible = false;
    for (i, cells) in qtilde.cells.iter().enumerate() {
        let q0 = cells[0];
        let c = q0 * (1.0 - q0) / sigma2_p - 1.0;
        if c > 0.0 {
            any_feasible = true;
        } else {
            log::warn!("group {i}: sigma2_p = {sigma2_p} exceeds q0(1-q0) = {}; hyperparameters clamped", q0 * (1.0 - q0));
        }
        let mut fix = |v: f64| {
            if v > HYPER_FLOOR {
                v
            } else {
                clamped = true;
                HYPER_FLOOR
            }
        };
        let raw: Vec<[f64; 2]> = (0..(cells.len() - 1) / 2)
            .map(|l| [cells[failure_cell(l, 0)] * c, cells[failure_cell(l, 1)] * c])
            .collect();
        let b0 = fix(c - raw.iter().map(|r| r[0] + r[1]).sum::<f64>());
        let rows: Vec<[f64; 2]> = raw.iter().map(|r| [fix(r[0]), fix(r[1])]).collect();
        beta0.push(b0);
        beta.push(rows);
    }
    if !any_feasible {
        return Err(NosdError::HyperparameterInfeasible(format!(
            "sigma2_p = {sigma2_p} is not below q0(1-q0) in any group"
        )));
    }
    if clamped {
        log::warn!("Dirichlet hyperparameters clamped to {HYPER_FLOOR}");
    }
    Ok(DirichletHyper { beta0, beta, clamped })
}

/// `-I L ln sum_i sum_l sum_r (p_ilr - q_ilr)^2` against smoothed frequencies.
pub fn log_normal_prior_q(params: &ModelParams, plan: &TestPlan, qtilde: &EmpiricalProbs) -> Result<f64> {
    let mut ss = 0.0;
    for (i, g) in plan.groups.iter().enumerate() {
        let p = cell_probabilities(params, g)?.flat();
        ss += (1..p.len()).map(|c| (p[c] - qtilde.cells[i][c]).powi(2)).sum::<f64>();
    }
    let il = (plan.n_groups() * plan.n_intervals()) as f64;
    if ss == 0.0 {
        log::warn!("Normal prior evaluated at an exact fit to the smoothed frequencies");
        return Ok(f64::NEG_INFINITY);
    }
    Ok(-il * ss.ln())
}

pub fn log_normal_prior_gradient_q(params: &ModelParams, plan: &TestPlan, qtilde: &EmpiricalProbs) -> Result<Vec4> {
    let mut ss = 0.0;
    let mut dss = Vec4::zeros();
    for (i, g) in plan.groups.iter().enumerate() {
        let (p, du) = cells_with_gradient(params, g)?;
        let p = p.flat();
        for c in 1..p.len() {
            let d = p[c] - qtilde.cells[i][c];
            ss += d * d;
            dss += du.column(c) * (2.0 * d);
        }
    }
    let il = (plan.n_groups() * plan.n_intervals()) as f64;
    Ok(-il * dss / ss)
}

pub fn log_normal_prior(params: &ModelParams, plan: &TestPlan, counts: &FailureCounts) -> Result<f64> {
    log_normal_prior_q(params, plan, &smoothed_probs(counts, plan)?)
}

/// `sum_i [ (beta_i0 - 1) ln p_i0 + sum_l sum_r (beta_ilr - 1) ln p_ilr ]`.
pub fn log_dirichlet_prior(params: &ModelParams, plan: &TestPlan, hyper: &DirichletHyper) -> Result<f64> {
    let mut total = 0.0;
    for (i, g) in plan.groups.iter().enumerate() {
        let p = cell_probabilities(params, g)?.flat();
        for (pc, b) in p.iter().zip(hyper.flat(i)) {
            if b != 1.0 {
                if *pc <= 0.0 {
                    return Ok(if b > 1.0 { f64::NEG_INFINITY } else { f64::INFINITY });
                }
                total += (b - 1.0) * pc.ln();
            }
        }
    }
    Ok(total)
}

pub fn log_dirichlet_prior_gradient(params: &ModelParams, plan: &TestPlan, hyper: &DirichletHyper) -> Result<Vec4> {
    let mut grad = Vec4::zeros();
    for (i, g) in plan.groups.iter().enumerate() {
        let (p, du) = cells_with_gradient(params, g)?;
        for (c, (pc, b)) in p.flat().into_iter().zip(hyper.flat(i)).enumerate() {
            grad += du.column(c) * ((b - 1.0) / clamp_prob(pc));
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
enum PriorTerm {
    Normal { qtilde: EmpiricalProbs },
    Dirichlet { hyper: DirichletHyper },
}

/// Unnormalized log pseudo-posterior `scale * B^w_gamma + log prior`.
///
/// At `gamma = 0` the data term is the weighted log-likelihood
/// `sum_i w_i sum_h q ln p`, so `scale = G` gives the usual posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPosterior {
    pub plan: TestPlan,
    pub qhat: EmpiricalProbs,
    pub gamma: f64,
    pub spec: PriorSpec,
    prior: PriorTerm,
}

impl PseudoPosterior {
    pub fn new(plan: &TestPlan, counts: &FailureCounts, gamma: f64, spec: PriorSpec) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(NosdError::InvalidGamma(gamma));
        }
        spec.validate()?;
        counts.validate_estimable(plan)?;
        let qtilde = smoothed_probs(counts, plan)?;
        let prior = match spec.kind {
            PriorKind::Normal => PriorTerm::Normal { qtilde },
            PriorKind::Dirichlet => PriorTerm::Dirichlet { hyper: dirichlet_hyperparams(&qtilde, spec.sigma2_p)? },
        };
        Ok(Self { plan: plan.clone(), qhat: empirical_probs(counts, plan)?, gamma, spec, prior })
    }

    /// The same prior with the data term switched off.
    pub fn prior_only(&self) -> Self {
        let mut out = self.clone();
        out.spec.posterior_scale = 0.0;
        out
    }

    pub fn hyper(&self) -> Option<&DirichletHyper> {
        match &self.prior {
            PriorTerm::Dirichlet { hyper } => Some(hyper),
            PriorTerm::Normal { .. } => None,
        }
    }

    pub fn log_prior(&self, params: &ModelParams) -> Result<f64> {
        match &self.prior {
            PriorTerm::Normal { qtilde } => log_normal_prior_q(params, &self.plan, qtilde),
            PriorTerm::Dirichlet { hyper } => log_dirichlet_prior(params, &self.plan, hyper),
        }
    }

    pub fn log_prior_gradient(&self, params: &ModelParams) -> Result<Vec4> {
        match &self.prior {
            PriorTerm::Normal { qtilde } => log_normal_prior_gradient_q(params, &self.plan, qtilde),
            PriorTerm::Dirichlet { hyper } => log_dirichlet_prior_gradient(params, &self.plan, hyper),
        }
    }

    fn data_term(&self, params: &ModelParams) -> Result<f64> {
        if self.gamma == 0.0 {
            weighted_log_likelihood_q(params, &self.plan, &self.qhat)
        } else {
            bw_objective_q(params, &self.plan, &self.qhat, self.gamma)
        }
    }

    fn data_gradient(&self, params: &ModelParams) -> Result<Vec4> {
        if self.gamma == 0.0 {
            weighted_log_likelihood_gradient_q(params, &self.plan, &self.qhat)
        } else {
            bw_gradient_q(params, &self.plan, &self.qhat, self.gamma)
        }
    }

    pub fn value(&self, params: &ModelParams) -> Result<f64> {
        let prior = self.log_prior(params)?;
        if self.spec.posterior_scale == 0.0 {
            return Ok(prior);
        }
        Ok(self.spec.posterior_scale * self.data_term(params)? + prior)
    }

    pub fn gradient(&self, params: &ModelParams) -> Result<Vec4> {
        let prior = self.log_prior_gradient(params)?;
        if self.spec.posterior_scale == 0.0 {
            return Ok(prior);
        }
        Ok(self.spec.posterior_scale * self.data_gradient(params)? + prior)
    }
}

impl LogDensity for PseudoPosterior {
    fn log_density(&self, x: &Vec4) -> f64 {
        self.value(&ModelParams::from_vector(x)).unwrap_or(f64::NEG_INFINITY)
    }

    fn gradient(&self, x: &Vec4) -> Option<Vec4> {
        PseudoPosterior::gradient(self, &ModelParams::from_vector(x)).ok().filter(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Free-function form of [`PseudoPosterior::value`].
pub fn log_pseudo_posterior(
    params: &ModelParams,
    plan: &TestPlan,
    counts: &FailureCounts,
    gamma: f64,
    prior: PriorSpec,
) -> Result<(f64, Vec4)> {
    let post = PseudoPosterior::new(plan, counts, gamma, prior)?;
    Ok((post.value(params)?, post.gradient(params)?))
}
