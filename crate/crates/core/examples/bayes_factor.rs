//! Bayes factor for a point null widened to a small ball, with the
//! interpretation band.
//!
//! With the default `posterior_scale = 1` the data term has unit weight
//! against the prior; scaling it by the number of devices gives the
//! conventional sample-size weighting.

use robust_nosd::bayes::PriorSpec;
use robust_nosd::dataset::{preset_plan, simulate_counts, LAMBDA_1};
use robust_nosd::hmc::HmcConfig;
use robust_nosd::testing::{bayes_factor, HypothesisSpec};
use robust_nosd::ModelParams;

fn main() -> robust_nosd::Result<()> {
    let plan = preset_plan("sim1")?;
    let counts = simulate_counts(&LAMBDA_1, &plan, 11)?;
    let mc = HmcConfig { n_samples: 4000, burn_in: 500, ..HmcConfig::default() };
    let nulls = [("true value", LAMBDA_1), ("shifted", ModelParams::new(-0.2, -0.06, 0.3, -0.12))];
    for scale in [1.0, plan.total_devices() as f64] {
        println!("posterior_scale = {scale}");
        for (label, lambda0) in nulls {
            let hyp = HypothesisSpec::new(lambda0, 0.01);
            for gamma in [0.2, 0.6, 1.0] {
                match bayes_factor(&plan, &counts, gamma, PriorSpec::normal().with_scale(scale), &hyp, &mc) {
                    Ok(bf) => println!(
                        "  {label:<10} gamma {gamma}: prior odds {:.4}, posterior odds {:.4}, BF01 {:.3} ({})",
                        bf.prior_odds, bf.posterior_odds, bf.bf01, bf.category
                    ),
                    Err(e) => println!("  {label:<10} gamma {gamma}: {e}"),
                }
            }
        }
    }
    Ok(())
}
