//! Simulate a test plan, then compare the MLE with robust WMDPDE fits and
//! their sandwich Wald intervals.

use robust_nosd::dataset::{contaminate, preset_plan, simulate_counts, LAMBDA_1, SHIFT_1};
use robust_nosd::estimate::{fit_mle, fit_wmdpde, sandwich_covariance, wald_ci, FitResult};

fn report(name: &str, fit: &FitResult, plan: &robust_nosd::dataset::TestPlan) {
    let p = fit.params.to_array();
    println!("{name:<12} {:>9.4} {:>9.4} {:>9.4} {:>9.4}  ({} sweeps)", p[0], p[1], p[2], p[3], fit.iterations);
    match sandwich_covariance(&fit.params, plan, fit.gamma).and_then(|cov| wald_ci(fit, &cov, 0.95)) {
        Ok(ci) => {
            let cells: Vec<String> = ci.iter().map(|(lo, hi)| format!("[{lo:.3}, {hi:.3}]")).collect();
            println!("{:<12} {}", "  95% CI", cells.join(" "));
        }
        Err(e) => println!("  no interval: {e}"),
    }
}

fn main() -> robust_nosd::Result<()> {
    let plan = preset_plan("sim1")?.scaled(10);
    for (label, truth) in [("pure", LAMBDA_1), ("contaminated", contaminate(&LAMBDA_1, SHIFT_1))] {
        let counts = simulate_counts(&truth, &plan, 42)?;
        println!("{label} data, {} failures", counts.total_failures());
        report("MLE", &fit_mle(&plan, &counts, LAMBDA_1)?, &plan);
        for gamma in [0.2, 0.4, 0.8] {
            report(&format!("WMDPDE {gamma}"), &fit_wmdpde(&plan, &counts, gamma, LAMBDA_1)?, &plan);
        }
        println!();
    }
    Ok(())
}
