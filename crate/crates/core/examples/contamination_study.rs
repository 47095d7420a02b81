//! Small Monte Carlo study of bias under pure and contaminated data.

use robust_nosd::dataset::{contaminate, preset_plan, LAMBDA_1, SHIFT_1};
use robust_nosd::simulation::{bias_study, point_estimator};
use robust_nosd::testing::EstimatorSpec;

fn main() -> robust_nosd::Result<()> {
    let plan = preset_plan("sim1")?;
    let reps: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    for (label, generating) in [("pure", LAMBDA_1), ("contaminated", contaminate(&LAMBDA_1, SHIFT_1))] {
        for spec in [EstimatorSpec::Mle, EstimatorSpec::Wmdpde { gamma: 0.4 }, EstimatorSpec::Wmdpde { gamma: 0.8 }] {
            let s = bias_study(label, &plan, &LAMBDA_1, &generating, reps, 2024, point_estimator(&plan, spec, LAMBDA_1))?;
            println!("{label:<13} {spec:?}: |bias| {:.4?}, rmse {:.4?}", s.abs_bias(), s.rmse);
        }
    }
    Ok(())
}
