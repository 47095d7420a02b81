//! Lindley competing-risk cell probabilities for one accelerated test group.

use robust_nosd::dataset::LAMBDA_1;
use robust_nosd::model::{cell_prob_gradient, cell_probabilities, stress_link, GroupDesign};

fn main() -> robust_nosd::Result<()> {
    let design = GroupDesign::new(20, 1.5, vec![0.1, 0.7, 1.6])?;
    let link = stress_link(&LAMBDA_1, design.s)?;
    println!("links at s = {}: {link:?}", design.s);

    let cells = cell_probabilities(&LAMBDA_1, &design)?;
    println!("survive past {}: {:.6}", design.last_inspection(), cells.p0);
    for (l, [p1, p2]) in cells.p.iter().enumerate() {
        println!("interval {}: cause 1 {p1:.6}, cause 2 {p2:.6}", l + 1);
    }
    println!("total {:.15}", cells.total());

    let grad = cell_prob_gradient(&LAMBDA_1, &design)?;
    println!("d p / d (a1, b1, a2, b2), one column per cell:\n{grad:.4}");
    Ok(())
}
