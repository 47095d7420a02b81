//! Parametric-bootstrap goodness of fit of the Lindley model.

use robust_nosd::dataset::{preset_plan, simulate_counts, LAMBDA_2};
use robust_nosd::estimate::fit_mle;
use robust_nosd::testing::gof_bootstrap_from;

fn main() -> robust_nosd::Result<()> {
    let plan = preset_plan("sim2")?;
    let counts = simulate_counts(&LAMBDA_2, &plan, 2)?;
    let mle = fit_mle(&plan, &counts, LAMBDA_2)?;
    let gof = gof_bootstrap_from(&plan, &counts, &mle, 500, 9)?;
    println!("T = {:.6}, bootstrap p = {:.3} ({} refits, {} dropped)", gof.t_obs, gof.p_value, gof.n_used, gof.n_failed);
    Ok(())
}
