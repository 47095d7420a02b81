//! Test plans, failure counts, empirical cell frequencies and data generation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{NosdError, Result};
use crate::model::{cell_probabilities, failure_cell, CellProbabilities, GroupDesign, ModelParams};

/// Generating parameters of the first simulation layout.
pub const LAMBDA_1: ModelParams = ModelParams::new(-0.20, -0.06, 0.30, -0.17);
/// Generating parameters of the second simulation layout.
pub const LAMBDA_2: ModelParams = ModelParams::new(-0.11, 0.11, -0.68, 0.09);
/// Outlier shift applied to `LAMBDA_1`.
pub const SHIFT_1: [f64; 4] = [-0.01, -0.01, 0.02, 0.02];
/// Outlier shift applied to `LAMBDA_2`.
pub const SHIFT_2: [f64; 4] = [0.009, 0.02, -0.02, -0.009];

pub const SEER_FIXTURE: &str = "seer-pancreatic-2016";

/// Ordered groups sharing a common number of inspections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPlan {
    pub groups: Vec<GroupDesign>,
}

impl TestPlan {
    pub fn new(groups: Vec<GroupDesign>) -> Result<Self> {
        let plan = Self { groups };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .groups
            .first()
            .ok_or_else(|| NosdError::InvalidPlan("plan has no groups".into()))?;
        for g in &self.groups {
            g.validate()?;
            if g.n_intervals() != first.n_intervals() {
                return Err(NosdError::InvalidPlan(
                    "all groups must share the same number of inspections".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_intervals(&self) -> usize {
        self.groups[0].n_intervals()
    }

    pub fn total_devices(&self) -> u64 {
        self.groups.iter().map(|g| g.g as u64).sum()
    }

    /// `w_i = g_i / G`.
    pub fn weights(&self) -> Vec<f64> {
        let total = self.total_devices() as f64;
        self.groups.iter().map(|g| g.g as f64 / total).collect()
    }

    /// Same layout with every group size multiplied by `factor`.
    pub fn scaled(&self, factor: u32) -> Self {
        let mut out = self.clone();
        for g in &mut out.groups {
            g.g *= factor;
        }
        out
    }

    pub fn cell_probabilities(&self, params: &ModelParams) -> Result<Vec<CellProbabilities>> {
        self.groups.iter().map(|g| cell_probabilities(params, g)).collect()
    }
}

/// Per-group failure counts `n[i][l][r]` and survivors `k[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCounts {
    pub n: Vec<Vec<[u32; 2]>>,
    pub k: Vec<u32>,
}

impl FailureCounts {
    pub fn validate(&self, plan: &TestPlan) -> Result<()> {
        if self.n.len() != plan.n_groups() || self.k.len() != plan.n_groups() {
            return Err(NosdError::InconsistentCounts(format!(
                "expected {} groups, got {} failure rows and {} survivor counts",
                plan.n_groups(),
                self.n.len(),
                self.k.len()
            )));
        }
        for (i, (g, row)) in plan.groups.iter().zip(&self.n).enumerate() {
            if row.len() != g.n_intervals() {
                return Err(NosdError::InconsistentCounts(format!(
                    "group {i}: expected {} intervals, got {}",
                    g.n_intervals(),
                    row.len()
                )));
            }
            let total = self.group_total(i);
            if total != g.g as u64 {
                return Err(NosdError::InconsistentCounts(format!(
                    "group {i}: survivors plus failures = {total}, but g = {}",
                    g.g
                )));
            }
        }
        Ok(())
    }

    /// Validates against the plan and rejects data without any failure.
    pub fn validate_estimable(&self, plan: &TestPlan) -> Result<()> {
        self.validate(plan)?;
        if self.total_failures() == 0 {
            return Err(NosdError::NotEstimable);
        }
        Ok(())
    }

    pub fn group_total(&self, i: usize) -> u64 {
        self.k[i] as u64 + self.n[i].iter().map(|c| c[0] as u64 + c[1] as u64).sum::<u64>()
    }

    pub fn total_failures(&self) -> u64 {
        self.n.iter().flatten().map(|c| c[0] as u64 + c[1] as u64).sum()
    }

    /// Counts of group `i` in flat cell order (survivors first).
    pub fn flat(&self, i: usize) -> Vec<u32> {
        let mut v = Vec::with_capacity(2 * self.n[i].len() + 1);
        v.push(self.k[i]);
        for c in &self.n[i] {
            v.extend_from_slice(c);
        }
        v
    }

    /// Every count multiplied by `factor`.
    pub fn scaled(&self, factor: u32) -> Self {
        Self {
            n: self.n.iter().map(|row| row.iter().map(|c| [c[0] * factor, c[1] * factor]).collect()).collect(),
            k: self.k.iter().map(|k| k * factor).collect(),
        }
    }
}

/// Per-group cell frequencies in flat cell order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalProbs {
    pub cells: Vec<Vec<f64>>,
}

impl EmpiricalProbs {
    pub fn group(&self, i: usize) -> &[f64] {
        &self.cells[i]
    }

    pub fn survival(&self, i: usize) -> f64 {
        self.cells[i][0]
    }

    pub fn failure(&self, i: usize, l: usize, r: usize) -> f64 {
        self.cells[i][failure_cell(l, r)]
    }
}

/// Raw frequencies `n_ilr / g_i` and `k_i / g_i`.
pub fn empirical_probs(counts: &FailureCounts, plan: &TestPlan) -> Result<EmpiricalProbs> {
    counts.validate(plan)?;
    let cells = plan
        .groups
        .iter()
        .enumerate()
        .map(|(i, g)| counts.flat(i).iter().map(|&c| c as f64 / g.g as f64).collect())
        .collect();
    Ok(EmpiricalProbs { cells })
}

/// Add-one smoothed frequencies `(count + 1) / (g_i + 2L + 1)`.
pub fn smoothed_probs(counts: &FailureCounts, plan: &TestPlan) -> Result<EmpiricalProbs> {
    counts.validate(plan)?;
    let cells = plan
        .groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let denom = (g.g as usize + g.n_cells()) as f64;
            counts.flat(i).iter().map(|&c| (c as f64 + 1.0) / denom).collect()
        })
        .collect();
    Ok(EmpiricalProbs { cells })
}

/// Draws one multinomial sample per group by sequential binomial conditioning.
pub fn simulate_counts_with_rng<R: rand::Rng + ?Sized>(
    params: &ModelParams,
    plan: &TestPlan,
    rng: &mut R,
) -> Result<FailureCounts> {
    plan.validate()?;
    let mut n = Vec::with_capacity(plan.n_groups());
    let mut k = Vec::with_capacity(plan.n_groups());
    for g in &plan.groups {
        let probs = cell_probabilities(params, g)?.flat();
        let mut remaining = g.g as u64;
        let mut mass = 1.0;
        let mut row = vec![[0u32; 2]; g.n_intervals()];
        // failure cells in flat order; survivors take what is left
        for c in 1..probs.len() {
            let p = probs[c].max(0.0);
            let draw = if remaining == 0 || p <= 0.0 {
                0
            } else if mass <= p {
                remaining
            } else {
                let cond = (p / mass).min(1.0);
                Binomial::new(remaining, cond)
                    .map_err(|e| NosdError::Domain(format!("binomial draw: {e}")))?
                    .sample(rng)
            };
            row[(c - 1) / 2][(c - 1) % 2] = draw as u32;
            remaining -= draw;
            mass -= p;
        }
        n.push(row);
        k.push(remaining as u32);
    }
    Ok(FailureCounts { n, k })
}

/// Deterministic simulation driven by a ChaCha8 stream seeded with `seed`.
pub fn simulate_counts(params: &ModelParams, plan: &TestPlan, seed: u64) -> Result<FailureCounts> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_counts_with_rng(params, plan, &mut rng)
}

/// Componentwise shift of the link coefficients.
pub fn contaminate(params: &ModelParams, shifts: [f64; 4]) -> ModelParams {
    let p = params.to_array();
    ModelParams::from_array([p[0] + shifts[0], p[1] + shifts[1], p[2] + shifts[2], p[3] + shifts[3]])
}

/// A plan together with observed counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub plan: TestPlan,
    pub counts: FailureCounts,
}

impl Dataset {
    pub fn new(plan: TestPlan, counts: FailureCounts) -> Result<Self> {
        plan.validate()?;
        counts.validate(&plan)?;
        Ok(Self { plan, counts })
    }
}

fn group(g: u32, s: f64, tau: &[f64]) -> GroupDesign {
    GroupDesign { g, s, tau: tau.to_vec() }
}

/// Built-in simulation layouts `sim1` and `sim2`.
pub fn preset_plan(name: &str) -> Result<TestPlan> {
    match name {
        "sim1" => Ok(TestPlan {
            groups: vec![
                group(20, 1.5, &[0.1, 0.7, 1.6]),
                group(25, 3.5, &[0.3, 1.0, 2.7]),
                group(30, 5.5, &[0.3, 1.0, 3.0]),
            ],
        }),
        "sim2" => Ok(TestPlan {
            groups: vec![
                group(20, 2.0, &[0.1, 0.5, 1.0]),
                group(25, 4.0, &[0.2, 0.7, 2.0]),
                group(30, 6.0, &[0.3, 0.6, 1.0]),
            ],
        }),
        other => Err(NosdError::UnknownFixture(other.to_string())),
    }
}

/// Generating parameters and outlier shift associated with a preset.
pub fn preset_truth(name: &str) -> Result<(ModelParams, [f64; 4])> {
    match name {
        "sim1" => Ok((LAMBDA_1, SHIFT_1)),
        "sim2" => Ok((LAMBDA_2, SHIFT_2)),
        other => Err(NosdError::UnknownFixture(other.to_string())),
    }
}

/// Built-in observed datasets.
///
/// `seer-pancreatic-2016`: pancreatic cancer patients aged 50-55 diagnosed in
/// 2016, tumour-size stress codes 1/2/3, inspections in months, deaths split
/// into (cancer, other causes).
pub fn fixture(name: &str) -> Result<Dataset> {
    match name {
        SEER_FIXTURE => Ok(Dataset {
            plan: TestPlan {
                groups: vec![
                    group(69, 1.0, &[2.0, 10.0, 30.0]),
                    group(90, 2.0, &[1.0, 10.0, 34.0]),
                    group(76, 3.0, &[1.0, 8.0, 20.0]),
                ],
            },
            counts: FailureCounts {
                n: vec![
                    vec![[7, 1], [26, 0], [28, 2]],
                    vec![[14, 1], [33, 1], [31, 3]],
                    vec![[21, 1], [23, 1], [22, 1]],
                ],
                k: vec![5, 7, 7],
            },
        }),
        other => Err(NosdError::UnknownFixture(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seer_fixture_is_consistent() {
        let d = fixture(SEER_FIXTURE).unwrap();
        d.counts.validate_estimable(&d.plan).unwrap();
        assert_eq!(d.plan.total_devices(), 235);
    }

    #[test]
    fn empirical_frequencies_of_seer_group_one() {
        let d = fixture(SEER_FIXTURE).unwrap();
        let q = empirical_probs(&d.counts, &d.plan).unwrap();
        assert_eq!(q.failure(0, 0, 0), 7.0 / 69.0);
        for i in 0..3 {
            assert!((q.group(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothed_frequencies_of_seer_group_one() {
        let d = fixture(SEER_FIXTURE).unwrap();
        let q = smoothed_probs(&d.counts, &d.plan).unwrap();
        assert_eq!(q.survival(0), 6.0 / 76.0);
        // cause-2 deaths in interval 2 of group 1 are zero
        assert_eq!(q.failure(0, 1, 1), 1.0 / 76.0);
        for i in 0..3 {
            assert!((q.group(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(q.group(i).iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn all_survivors() {
        let plan = preset_plan("sim1").unwrap();
        let counts = FailureCounts {
            n: vec![vec![[0, 0]; 3]; 3],
            k: plan.groups.iter().map(|g| g.g).collect(),
        };
        let q = empirical_probs(&counts, &plan).unwrap();
        for i in 0..3 {
            assert_eq!(q.survival(i), 1.0);
            assert!(q.group(i)[1..].iter().all(|&v| v == 0.0));
        }
        assert!(matches!(counts.validate_estimable(&plan), Err(NosdError::NotEstimable)));
    }

    #[test]
    fn inconsistent_counts_rejected() {
        let d = fixture(SEER_FIXTURE).unwrap();
        let mut bad = d.counts.clone();
        bad.k[0] += 1;
        assert!(matches!(empirical_probs(&bad, &d.plan), Err(NosdError::InconsistentCounts(_))));
    }

    #[test]
    fn contamination_shifts() {
        let c = contaminate(&LAMBDA_1, SHIFT_1);
        let want = [-0.21, -0.07, 0.32, -0.15];
        for (a, b) in c.to_array().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(contaminate(&LAMBDA_2, [0.0; 4]), LAMBDA_2);
        let c2 = contaminate(&LAMBDA_2, SHIFT_2);
        let want2 = [-0.101, 0.13, -0.70, 0.081];
        for (a, b) in c2.to_array().iter().zip(want2) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn simulation_is_deterministic_and_conserves_devices() {
        let plan = preset_plan("sim1").unwrap();
        let a = simulate_counts(&LAMBDA_1, &plan, 11).unwrap();
        let b = simulate_counts(&LAMBDA_1, &plan, 11).unwrap();
        assert_eq!(a, b);
        a.validate(&plan).unwrap();
    }

    #[test]
    fn degenerate_plan_keeps_everyone_alive() {
        let plan = TestPlan::new(vec![GroupDesign::new(50, 1.0, vec![1e-12, 2e-12]).unwrap()]).unwrap();
        let c = simulate_counts(&LAMBDA_1, &plan, 3).unwrap();
        assert_eq!(c.k[0], 50);
    }

    #[test]
    fn large_sample_frequencies_approach_model() {
        let plan = preset_plan("sim1").unwrap().scaled(1000);
        let counts = simulate_counts(&LAMBDA_1, &plan, 5).unwrap();
        let q = empirical_probs(&counts, &plan).unwrap();
        for (i, g) in plan.groups.iter().enumerate() {
            let p = cell_probabilities(&LAMBDA_1, g).unwrap().flat();
            for (a, b) in q.group(i).iter().zip(&p) {
                assert!((a - b).abs() < 0.01);
            }
        }
    }
}
