//! Influence-function curves of the WMDPDE and the robust Bayes estimator,
//! written as plot-ready CSV on stdout.

use robust_nosd::bayes::{PriorSpec, PseudoPosterior};
use robust_nosd::dataset::{preset_plan, simulate_counts, LAMBDA_1};
use robust_nosd::hmc::{sample, HmcConfig};
use robust_nosd::robustness::{default_t_grid, if_wmdpde_curve, if_wrbe_curve, write_if_csv};

fn main() -> robust_nosd::Result<()> {
    let plan = preset_plan("sim1")?;
    let counts = simulate_counts(&LAMBDA_1, &plan, 5)?;
    let grid = default_t_grid(&plan, 41);
    let mut curves = Vec::new();
    for gamma in [0.2, 0.8] {
        let chains = sample(&PseudoPosterior::new(&plan, &counts, gamma, PriorSpec::normal())?, &HmcConfig::default(), LAMBDA_1)?;
        for cause in [1, 2] {
            curves.push(if_wmdpde_curve(&LAMBDA_1, &plan, gamma, cause, &grid)?);
            curves.push(if_wrbe_curve(&chains, &plan, gamma, &LAMBDA_1, cause, &grid)?);
        }
    }
    for c in &curves {
        eprintln!("{:<7} gamma {} cause {}: max |IF| {:.4e}", c.estimator, c.gamma, c.cause, c.max_abs());
    }
    write_if_csv(std::io::stdout().lock(), &curves)
}
