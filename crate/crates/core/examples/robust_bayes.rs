//! Robust Bayes estimation: sample the DPD pseudo-posterior by HMC.
//!
//! The default sampler (step 0.001, two leapfrog steps, 1200 iterations)
//! explores a neighbourhood of its starting point. Both priors are improper
//! along directions where the cell probabilities saturate, so long
//! well-mixed runs drift away from any finite mode.

use robust_nosd::bayes::{PriorSpec, PseudoPosterior};
use robust_nosd::dataset::{fixture, preset_plan, simulate_counts, LAMBDA_1, SEER_FIXTURE};
use robust_nosd::hmc::{hpd_interval, posterior_mean, sample, HmcConfig, PosteriorChains};
use robust_nosd::ModelParams;

fn show(label: &str, chains: &PosteriorChains) -> robust_nosd::Result<()> {
    let m = posterior_mean(chains).to_array();
    let hpd = hpd_interval(chains, 0.95)?;
    println!(
        "{label:<26} mean [{:.4}, {:.4}, {:.4}, {:.4}], a1 HPD [{:.4}, {:.4}], accept {:.2?}, rhat {:.3?}",
        m[0], m[1], m[2], m[3], hpd[0].0, hpd[0].1, chains.accept_rate, chains.rhat
    );
    Ok(())
}

fn main() -> robust_nosd::Result<()> {
    let plan = preset_plan("sim1")?;
    let counts = simulate_counts(&LAMBDA_1, &plan, 7)?;
    let config = HmcConfig::default();
    let g = plan.total_devices() as f64;
    for scale in [1.0, g] {
        for gamma in [0.0, 0.4, 0.8] {
            let post = PseudoPosterior::new(&plan, &counts, gamma, PriorSpec::normal().with_scale(scale))?;
            show(&format!("normal, scale {scale}, gamma {gamma}"), &sample(&post, &config, LAMBDA_1)?)?;
        }
    }

    let data = fixture(SEER_FIXTURE)?;
    let start = ModelParams::new(-0.6, 0.34, 0.5, 0.1);
    for gamma in [0.2, 0.6, 1.0] {
        let post = PseudoPosterior::new(&data.plan, &data.counts, gamma, PriorSpec::dirichlet(0.06))?;
        show(&format!("dirichlet, clinical, gamma {gamma}"), &sample(&post, &config, start)?)?;
    }
    Ok(())
}
