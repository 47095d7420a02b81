//! Monte Carlo bias studies over simulated test plans.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{PriorSpec, PseudoPosterior};
use crate::dataset::{simulate_counts_with_rng, FailureCounts, TestPlan};
use crate::error::{NosdError, Result};
use crate::hmc::{posterior_mean, sample, HmcConfig};
use crate::model::ModelParams;
use crate::testing::EstimatorSpec;

/// Summary of an estimator over replicated data sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub label: String,
    pub mean: [f64; 4],
    /// `mean - truth`.
    pub bias: [f64; 4],
    pub rmse: [f64; 4],
    pub n_used: usize,
    pub n_failed: usize,
}

impl BiasSummary {
    pub fn abs_bias(&self) -> [f64; 4] {
        self.bias.map(f64::abs)
    }
}

/// Data set `r` of a study: stream `r` of a ChaCha8 generator seeded with `seed`.
pub fn replicate_counts(generating: &ModelParams, plan: &TestPlan, seed: u64, r: usize) -> Result<FailureCounts> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    simulate_counts_with_rng(generating, plan, &mut rng)
}

/// Runs `estimator` on `reps` data sets drawn at `generating` and measures it
/// against `truth`; replicates without failures or with failed fits are dropped.
pub fn bias_study(
    label: &str,
    plan: &TestPlan,
    truth: &ModelParams,
    generating: &ModelParams,
    reps: usize,
    seed: u64,
    estimator: impl Fn(&FailureCounts) -> Result<ModelParams> + Sync,
) -> Result<BiasSummary> {
    let est: Vec<Option<[f64; 4]>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let counts = replicate_counts(generating, plan, seed, r).ok()?;
            estimator(&counts).ok().filter(ModelParams::is_finite).map(ModelParams::to_array)
        })
        .collect();
    let used: Vec<[f64; 4]> = est.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(NosdError::Config(format!("{label}: every replicate failed")));
    }
    let n = used.len() as f64;
    let t = truth.to_array();
    let mean: [f64; 4] = std::array::from_fn(|j| used.iter().map(|e| e[j]).sum::<f64>() / n);
    let bias = std::array::from_fn(|j| mean[j] - t[j]);
    let rmse = std::array::from_fn(|j| (used.iter().map(|e| (e[j] - t[j]).powi(2)).sum::<f64>() / n).sqrt());
    Ok(BiasSummary { label: label.to_string(), mean, bias, rmse, n_used: used.len(), n_failed: reps - used.len() })
}

/// Frequentist estimator started at `init`.
pub fn point_estimator(
    plan: &TestPlan,
    spec: EstimatorSpec,
    init: ModelParams,
) -> impl Fn(&FailureCounts) -> Result<ModelParams> + Sync + '_ {
    move |counts| spec.fit(plan, counts, init).map(|f| f.params)
}

/// Posterior mean of the pseudo-posterior sampled from `init`.
pub fn bayes_estimator(
    plan: &TestPlan,
    gamma: f64,
    prior: PriorSpec,
    hmc: HmcConfig,
    init: ModelParams,
) -> impl Fn(&FailureCounts) -> Result<ModelParams> + Sync + '_ {
    move |counts| {
        let post = PseudoPosterior::new(plan, counts, gamma, prior)?;
        Ok(posterior_mean(&sample(&post, &hmc, init)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{preset_plan, LAMBDA_1};

    #[test]
    fn oracle_estimator_has_zero_bias() {
        let plan = preset_plan("sim1").unwrap();
        let s = bias_study("truth", &plan, &LAMBDA_1, &LAMBDA_1, 20, 1, |_| Ok(LAMBDA_1)).unwrap();
        assert!(s.bias.iter().all(|b| b.abs() < 1e-15));
        assert_eq!(s.n_used, 20);
    }

    #[test]
    fn replicates_are_reproducible_and_distinct() {
        let plan = preset_plan("sim1").unwrap();
        let a = replicate_counts(&LAMBDA_1, &plan, 9, 0).unwrap();
        assert_eq!(a, replicate_counts(&LAMBDA_1, &plan, 9, 0).unwrap());
        let others: Vec<_> = (1..6).map(|r| replicate_counts(&LAMBDA_1, &plan, 9, r).unwrap()).collect();
        assert!(others.iter().any(|o| *o != a));
    }
}
