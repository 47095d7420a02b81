//! The bundled pancreatic cancer follow-up data: fit, goodness of fit and
//! tuning selection in one pass.

use robust_nosd::dataset::{fixture, SEER_FIXTURE};
use robust_nosd::estimate::{default_tuning_grid, fit_mle, fit_wmdpde, mle_grid_init, select_tuning};
use robust_nosd::testing::gof_bootstrap_from;

fn main() -> robust_nosd::Result<()> {
    let data = fixture(SEER_FIXTURE)?;
    for (i, g) in data.plan.groups.iter().enumerate() {
        println!("group {}: {} patients, tumor size {}, visits {:?}", i + 1, g.g, g.s, g.tau);
    }
    let init = mle_grid_init(&data.plan, &data.counts)?;
    let mle = fit_mle(&data.plan, &data.counts, init)?;
    println!("MLE {:?}, log-likelihood {:.4}", mle.params.to_array(), mle.objective);
    for gamma in [0.2, 0.6, 1.0] {
        let fit = fit_wmdpde(&data.plan, &data.counts, gamma, init)?;
        println!("WMDPDE {gamma}: {:?}", fit.params.to_array());
    }
    let gof = gof_bootstrap_from(&data.plan, &data.counts, &mle, 200, 1)?;
    println!("goodness of fit: T = {:.6}, p = {:.3}", gof.t_obs, gof.p_value);
    let sel = select_tuning(&data.plan, &data.counts, &default_tuning_grid(), 0.5, 0.5)?;
    println!("selected gamma = {} ({} grid points skipped)", sel.gamma_star, sel.failures.len());
    Ok(())
}
