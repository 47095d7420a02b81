//! Choose the DPD tuning parameter by trading divergence against the trace
//! of the asymptotic covariance.

use robust_nosd::dataset::{contaminate, preset_plan, simulate_counts, LAMBDA_1, SHIFT_1};
use robust_nosd::estimate::{default_tuning_grid, select_tuning};

fn main() -> robust_nosd::Result<()> {
    let plan = preset_plan("sim1")?.scaled(5);
    let counts = simulate_counts(&contaminate(&LAMBDA_1, SHIFT_1), &plan, 4)?;
    let sel = select_tuning(&plan, &counts, &default_tuning_grid(), 0.5, 0.5)?;
    println!("{:>6} {:>12} {:>12} {:>12}", "gamma", "divergence", "trace", "phi");
    for r in &sel.rows {
        println!("{:>6.2} {:>12.4e} {:>12.4e} {:>12.4e}", r.gamma, r.divergence, r.trace, r.phi);
    }
    for (g, e) in &sel.failures {
        println!("{g:>6.2} skipped: {e}");
    }
    println!("selected gamma = {}", sel.gamma_star);
    Ok(())
}
