//! Bayes-factor tests with an epsilon-ball null, parametric-bootstrap
//! goodness of fit and bootstrap bias/RMSE.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{PriorSpec, PseudoPosterior};
use crate::dataset::{simulate_counts_with_rng, smoothed_probs, FailureCounts, TestPlan};
use crate::error::{NosdError, Result};
use crate::estimate::{fit_mle, fit_wmdpde, mle_grid_init, wmdpde_grid_init, FitResult};
use crate::hmc::{sample, HmcConfig, LogDensity, PosteriorChains};
use crate::model::{cell_probabilities, ModelParams, Vec4};

/// Prior probability of the null region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorMass {
    /// A fixed `rho0` in `(0, 1)`.
    Fixed(f64),
    /// Estimated from prior draws.
    Empirical(EmpiricalTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmpiricalTag {
    Empirical,
}

impl Default for PriorMass {
    fn default() -> Self {
        PriorMass::Empirical(EmpiricalTag::Empirical)
    }
}

/// Point null `lambda0` widened to a Euclidean ball of radius `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpec {
    pub lambda0: ModelParams,
    pub radius: f64,
    #[serde(default)]
    pub rho0: PriorMass,
}

impl HypothesisSpec {
    pub fn new(lambda0: ModelParams, radius: f64) -> Self {
        Self { lambda0, radius, rho0: PriorMass::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(NosdError::Config(format!("ball radius must be positive, got {}", self.radius)));
        }
        if let PriorMass::Fixed(r) = self.rho0 {
            if !(r > 0.0 && r < 1.0) {
                return Err(NosdError::Config(format!("rho0 must lie in (0, 1), got {r}")));
            }
        }
        if !self.lambda0.is_finite() {
            return Err(NosdError::Config("lambda0 must be finite".into()));
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64; 4]) -> bool {
        (Vec4::from(*x) - self.lambda0.to_vector()).norm() <= self.radius
    }

    /// Fraction of draws inside the ball.
    pub fn fraction_inside(&self, chains: &PosteriorChains) -> f64 {
        let n = chains.n_draws();
        if n == 0 {
            return 0.0;
        }
        chains.iter().filter(|d| self.contains(d)).count() as f64 / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BfCategory {
    Negative,
    BareMention,
    Positive,
    Strong,
    VeryStrong,
}

impl BfCategory {
    pub fn label(self) -> &'static str {
        match self {
            BfCategory::Negative => "Negative",
            BfCategory::BareMention => "Not worth more than a bare mention",
            BfCategory::Positive => "Positive",
            BfCategory::Strong => "Strong",
            BfCategory::VeryStrong => "Very Strong",
        }
    }
}

impl fmt::Display for BfCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Evidence bands for `BF01`, closed on the left.
pub fn interpret_bf(bf01: f64) -> BfCategory {
    if bf01 < 1.0 {
        BfCategory::Negative
    } else if bf01 < 3.0 {
        BfCategory::BareMention
    } else if bf01 < 20.0 {
        BfCategory::Positive
    } else if bf01 < 150.0 {
        BfCategory::Strong
    } else {
        BfCategory::VeryStrong
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesFactorResult {
    pub gamma: f64,
    pub prior_fraction: f64,
    pub posterior_fraction: f64,
    pub prior_odds: f64,
    pub posterior_odds: f64,
    pub bf01: f64,
    pub category: BfCategory,
}

fn odds(fraction: f64, region: &'static str, complement: &'static str) -> Result<f64> {
    if fraction <= 0.0 {
        return Err(NosdError::EmptyRegion { region });
    }
    if fraction >= 1.0 {
        return Err(NosdError::EmptyRegion { region: complement });
    }
    Ok(fraction / (1.0 - fraction))
}

/// Odds and `BF01` from prior-only and pseudo-posterior draws.
pub fn bayes_factor_from_chains(
    hyp: &HypothesisSpec,
    gamma: f64,
    prior_chains: &PosteriorChains,
    posterior_chains: &PosteriorChains,
) -> Result<BayesFactorResult> {
    hyp.validate()?;
    let prior_fraction = hyp.fraction_inside(prior_chains);
    let posterior_fraction = hyp.fraction_inside(posterior_chains);
    let empirical_prior_odds = odds(prior_fraction, "the prior null ball", "the prior alternative region")?;
    let empirical_post_odds = odds(posterior_fraction, "the posterior null ball", "the posterior alternative region")?;
    let bf01 = empirical_post_odds / empirical_prior_odds;
    let (prior_odds, posterior_odds) = match hyp.rho0 {
        PriorMass::Empirical(_) => (empirical_prior_odds, empirical_post_odds),
        PriorMass::Fixed(r) => {
            let po = r / (1.0 - r);
            (po, po * bf01)
        }
    };
    Ok(BayesFactorResult {
        gamma,
        prior_fraction,
        posterior_fraction,
        prior_odds,
        posterior_odds,
        bf01,
        category: interpret_bf(bf01),
    })
}

/// Bayes factor together with the chains it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesFactorRun {
    pub result: BayesFactorResult,
    pub prior_chains: PosteriorChains,
    pub posterior_chains: PosteriorChains,
}

/// Runs prior-only and pseudo-posterior HMC from `lambda0` and compares the
/// ball fractions; a region without draws is an error.
pub fn bayes_factor_run(
    plan: &TestPlan,
    counts: &FailureCounts,
    gamma: f64,
    prior: PriorSpec,
    hyp: &HypothesisSpec,
    mc: &HmcConfig,
) -> Result<BayesFactorRun> {
    hyp.validate()?;
    let post = PseudoPosterior::new(plan, counts, gamma, prior)?;
    let prior_chains = sample(&post.prior_only(), mc, hyp.lambda0)?;
    let posterior_chains = sample(&post, mc, hyp.lambda0)?;
    let result = bayes_factor_from_chains(hyp, gamma, &prior_chains, &posterior_chains)?;
    Ok(BayesFactorRun { result, prior_chains, posterior_chains })
}

pub fn bayes_factor(
    plan: &TestPlan,
    counts: &FailureCounts,
    gamma: f64,
    prior: PriorSpec,
    hyp: &HypothesisSpec,
    mc: &HmcConfig,
) -> Result<BayesFactorResult> {
    bayes_factor_run(plan, counts, gamma, prior, hyp, mc).map(|r| r.result)
}

/// A density truncated to the inside (or outside) of a ball.
pub struct BallRestricted<D> {
    pub inner: D,
    pub center: Vec4,
    pub radius: f64,
    pub inside: bool,
}

impl<D: LogDensity> BallRestricted<D> {
    fn admits(&self, x: &Vec4) -> bool {
        ((x - self.center).norm() <= self.radius) == self.inside
    }
}

impl<D: LogDensity> LogDensity for BallRestricted<D> {
    fn log_density(&self, x: &Vec4) -> f64 {
        if self.admits(x) {
            self.inner.log_density(x)
        } else {
            f64::NEG_INFINITY
        }
    }

    fn gradient(&self, x: &Vec4) -> Option<Vec4> {
        self.inner.gradient(x)
    }
}

/// Draws from `target` restricted to the null ball, started at its center.
pub fn sample_in_ball<D: LogDensity>(target: D, hyp: &HypothesisSpec, mc: &HmcConfig) -> Result<PosteriorChains> {
    let restricted = BallRestricted { inner: target, center: hyp.lambda0.to_vector(), radius: hyp.radius, inside: true };
    sample(&restricted, mc, hyp.lambda0)
}

/// `max |q~ - p|` over every group and cell.
pub fn gof_statistic(params: &ModelParams, plan: &TestPlan, counts: &FailureCounts) -> Result<f64> {
    let qt = smoothed_probs(counts, plan)?;
    let mut t: f64 = 0.0;
    for (i, g) in plan.groups.iter().enumerate() {
        let p = cell_probabilities(params, g)?.flat();
        for (a, b) in qt.group(i).iter().zip(&p) {
            t = t.max((a - b).abs());
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub t_obs: f64,
    pub p_value: f64,
    pub mle: ModelParams,
    pub n_used: usize,
    pub n_failed: usize,
}

fn replicate_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

fn check_boot(n_boot: usize) -> Result<()> {
    if n_boot < 100 {
        return Err(NosdError::Config(format!("n_boot = {n_boot}; at least 100 replicates are required")));
    }
    Ok(())
}

/// Parametric bootstrap around a given maximum-likelihood fit.
pub fn gof_bootstrap_from(plan: &TestPlan, counts: &FailureCounts, mle: &FitResult, n_boot: usize, seed: u64) -> Result<GofResult> {
    check_boot(n_boot)?;
    let t_obs = gof_statistic(&mle.params, plan, counts)?;
    let stats: Vec<Option<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(seed, b);
            let sim = simulate_counts_with_rng(&mle.params, plan, &mut rng).ok()?;
            let refit = fit_mle(plan, &sim, mle.params).ok()?;
            gof_statistic(&refit.params, plan, &sim).ok()
        })
        .collect();
    let used: Vec<f64> = stats.iter().flatten().copied().collect();
    let n_failed = n_boot - used.len();
    if n_failed > 0 {
        log::warn!("{n_failed} of {n_boot} bootstrap refits failed and were dropped");
    }
    if used.is_empty() {
        return Err(NosdError::Config("every bootstrap replicate failed".into()));
    }
    let p_value = used.iter().filter(|&&t| t >= t_obs).count() as f64 / used.len() as f64;
    Ok(GofResult { t_obs, p_value, mle: mle.params, n_used: used.len(), n_failed })
}

/// Goodness-of-fit test at the MLE found from a grid-search start.
pub fn gof_bootstrap(plan: &TestPlan, counts: &FailureCounts, n_boot: usize, seed: u64) -> Result<GofResult> {
    let init = mle_grid_init(plan, counts)?;
    let mle = fit_mle(plan, counts, init)?;
    gof_bootstrap_from(plan, counts, &mle, n_boot, seed)
}

/// Point estimator used inside bootstrap loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "lowercase")]
pub enum EstimatorSpec {
    Mle,
    Wmdpde { gamma: f64 },
}

impl EstimatorSpec {
    pub fn fit(&self, plan: &TestPlan, counts: &FailureCounts, init: ModelParams) -> Result<FitResult> {
        match *self {
            EstimatorSpec::Mle => fit_mle(plan, counts, init),
            EstimatorSpec::Wmdpde { gamma } => fit_wmdpde(plan, counts, gamma, init),
        }
    }

    pub fn grid_init(&self, plan: &TestPlan, counts: &FailureCounts) -> Result<ModelParams> {
        match *self {
            EstimatorSpec::Mle => mle_grid_init(plan, counts),
            EstimatorSpec::Wmdpde { gamma } => wmdpde_grid_init(plan, counts, gamma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub estimate: ModelParams,
    pub bias: [f64; 4],
    pub rmse: [f64; 4],
    pub n_used: usize,
    pub n_failed: usize,
}

/// Bias and RMSE of `estimator` over data simulated at `estimate`.
pub fn bootstrap_bias_rmse_with(
    plan: &TestPlan,
    estimate: ModelParams,
    n_boot: usize,
    seed: u64,
    estimator: impl Fn(&FailureCounts) -> Result<ModelParams> + Sync,
) -> Result<BootstrapSummary> {
    check_boot(n_boot)?;
    let reps: Vec<Option<[f64; 4]>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(seed, b);
            let sim = simulate_counts_with_rng(&estimate, plan, &mut rng).ok()?;
            estimator(&sim).ok().map(ModelParams::to_array)
        })
        .collect();
    let used: Vec<[f64; 4]> = reps.into_iter().flatten().collect();
    let n_failed = n_boot - used.len();
    if n_failed > 0 {
        log::warn!("{n_failed} of {n_boot} bootstrap fits failed and were dropped");
    }
    if used.is_empty() {
        return Err(NosdError::Config("every bootstrap replicate failed".into()));
    }
    let n = used.len() as f64;
    let est = estimate.to_array();
    let bias = std::array::from_fn(|j| used.iter().map(|r| r[j]).sum::<f64>() / n - est[j]);
    let rmse = std::array::from_fn(|j| (used.iter().map(|r| (r[j] - est[j]).powi(2)).sum::<f64>() / n).sqrt());
    Ok(BootstrapSummary { estimate, bias, rmse, n_used: used.len(), n_failed })
}

/// Fits `spec` to the data, then bootstraps it with warm-started refits.
pub fn bootstrap_bias_rmse(
    plan: &TestPlan,
    counts: &FailureCounts,
    spec: EstimatorSpec,
    init: Option<ModelParams>,
    n_boot: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    let init = match init {
        Some(p) => p,
        None => spec.grid_init(plan, counts)?,
    };
    let point = spec.fit(plan, counts, init)?.params;
    bootstrap_bias_rmse_with(plan, point, n_boot, seed, |sim| spec.fit(plan, sim, point).map(|f| f.params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{fixture, preset_plan, simulate_counts, LAMBDA_1, SEER_FIXTURE};

    #[test]
    fn bands_are_closed_on_the_left() {
        assert_eq!(interpret_bf(0.5), BfCategory::Negative);
        assert_eq!(interpret_bf(1.0), BfCategory::BareMention);
        assert_eq!(interpret_bf(3.0), BfCategory::Positive);
        assert_eq!(interpret_bf(20.0), BfCategory::Strong);
        assert_eq!(interpret_bf(23.5).label(), "Strong");
        assert_eq!(interpret_bf(150.0), BfCategory::VeryStrong);
    }

    #[test]
    fn rho0_parses_from_number_or_word() {
        let h: HypothesisSpec =
            serde_json::from_str(r#"{"lambda0":{"a1":0,"b1":0,"a2":0,"b2":0},"radius":0.1,"rho0":"empirical"}"#).unwrap();
        assert_eq!(h.rho0, PriorMass::default());
        let h: HypothesisSpec =
            serde_json::from_str(r#"{"lambda0":{"a1":0,"b1":0,"a2":0,"b2":0},"radius":0.1,"rho0":0.3}"#).unwrap();
        assert_eq!(h.rho0, PriorMass::Fixed(0.3));
    }

    fn chains_with(inside: usize, outside: usize) -> PosteriorChains {
        let mut d = vec![[0.0; 4]; inside];
        d.extend(vec![[1.0, 0.0, 0.0, 0.0]; outside]);
        PosteriorChains::from_draws(vec![d])
    }

    #[test]
    fn odds_identity_and_empty_regions() {
        let hyp = HypothesisSpec::new(ModelParams::new(0.0, 0.0, 0.0, 0.0), 0.5);
        let r = bayes_factor_from_chains(&hyp, 0.5, &chains_with(10, 90), &chains_with(60, 40)).unwrap();
        assert!((r.bf01 * r.prior_odds - r.posterior_odds).abs() < 1e-12 * r.posterior_odds);
        assert!((r.bf01 - 1.5 / (10.0 / 90.0)).abs() < 1e-12);
        let fixed = HypothesisSpec { rho0: PriorMass::Fixed(0.5), ..hyp };
        let r2 = bayes_factor_from_chains(&fixed, 0.5, &chains_with(10, 90), &chains_with(60, 40)).unwrap();
        assert_eq!(r2.prior_odds, 1.0);
        assert!((r2.posterior_odds - r.bf01).abs() < 1e-12);
        assert!(matches!(
            bayes_factor_from_chains(&hyp, 0.5, &chains_with(0, 50), &chains_with(5, 5)),
            Err(NosdError::EmptyRegion { .. })
        ));
    }

    #[test]
    fn restricted_sampler_stays_in_ball() {
        struct Flat;
        impl LogDensity for Flat {
            fn log_density(&self, _: &Vec4) -> f64 {
                0.0
            }
            fn gradient(&self, _: &Vec4) -> Option<Vec4> {
                Some(Vec4::zeros())
            }
        }
        let hyp = HypothesisSpec::new(ModelParams::new(0.1, 0.2, 0.3, 0.4), 0.01);
        let mc = HmcConfig { step_size: 0.002, n_samples: 400, burn_in: 100, mass_diag: [1.0; 4], ..HmcConfig::default() };
        let chains = sample_in_ball(Flat, &hyp, &mc).unwrap();
        assert!(chains.iter().all(|d| hyp.contains(d)));
        assert!(chains.accept_rate.iter().all(|a| *a > 0.1));
    }

    #[test]
    fn gof_statistic_is_nonnegative() {
        let d = fixture(SEER_FIXTURE).unwrap();
        let t = gof_statistic(&ModelParams::new(0.1, -0.2, 0.3, -0.1), &d.plan, &d.counts).unwrap();
        assert!(t > 0.0 && t < 1.0);
    }

    #[test]
    fn constant_estimator_bias() {
        let plan = preset_plan("sim1").unwrap();
        let c = ModelParams::new(1.0, 2.0, 3.0, 4.0);
        let s = bootstrap_bias_rmse_with(&plan, LAMBDA_1, 100, 1, |_| Ok(c)).unwrap();
        for j in 0..4 {
            assert!((s.bias[j] - (c.get(j) - LAMBDA_1.get(j))).abs() < 1e-12);
            assert!((s.rmse[j] - s.bias[j].abs()).abs() < 1e-12);
        }
        assert!(bootstrap_bias_rmse_with(&plan, LAMBDA_1, 10, 1, |_| Ok(c)).is_err());
    }

    #[test]
    fn gof_bootstrap_is_deterministic() {
        let plan = preset_plan("sim1").unwrap().scaled(4);
        let counts = simulate_counts(&LAMBDA_1, &plan, 2).unwrap();
        let mle = fit_mle(&plan, &counts, LAMBDA_1).unwrap();
        let a = gof_bootstrap_from(&plan, &counts, &mle, 100, 5).unwrap();
        let b = gof_bootstrap_from(&plan, &counts, &mle, 100, 5).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.p_value));
    }
}
