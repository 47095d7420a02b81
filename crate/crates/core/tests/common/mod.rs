//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_nosd::model::GroupDesign;
use robust_nosd::ModelParams;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two-parameter Lindley density written out from its definition.
pub fn lindley_pdf(t: f64, alpha: f64, theta: f64) -> f64 {
    theta * theta * (alpha + t) * (-theta * t).exp() / (alpha * theta + 1.0)
}

pub fn lindley_sf(t: f64, alpha: f64, theta: f64) -> f64 {
    (1.0 + alpha * theta + theta * t) * (-theta * t).exp() / (alpha * theta + 1.0)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (f(0.5 * (a + m)), f(0.5 * (m + b)));
    let left = simpson(a, m, fa, lm, fm);
    let right = simpson(m, b, fm, rm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, lm, fm, left, 0.5 * tol, depth - 1) + adaptive(f, m, b, fm, rm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(&f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Cell probabilities by numerical integration of the cause-specific
/// sub-densities, laid out as survival first then `(interval, cause)`.
pub fn quadrature_cells(params: &ModelParams, design: &GroupDesign) -> Vec<f64> {
    let s = design.s;
    let alpha = [(params.a1 * s).exp(), (params.a2 * s).exp()];
    let theta = [(params.b1 * s).exp(), (params.b2 * s).exp()];
    let tau_l = *design.tau.last().unwrap();
    let mut cells = vec![lindley_sf(tau_l, alpha[0], theta[0]) * lindley_sf(tau_l, alpha[1], theta[1])];
    let mut lo = 0.0;
    for &hi in &design.tau {
        for r in 0..2 {
            let o = 1 - r;
            cells.push(integrate(
                |t| lindley_pdf(t, alpha[r], theta[r]) * lindley_sf(t, alpha[o], theta[o]),
                lo,
                hi,
                1e-14,
            ));
        }
        lo = hi;
    }
    cells
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&ModelParams) -> f64, x: &ModelParams, h: f64) -> [f64; 4] {
    std::array::from_fn(|j| {
        let v = x.get(j);
        (f(&x.with(j, v + h)) - f(&x.with(j, v - h))) / (2.0 * h)
    })
}

/// `|a - b| / max(|b|, floor)` in the Euclidean norm.
pub fn rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(floor)
}

pub fn random_params(rng: &mut impl Rng, half_width: f64) -> ModelParams {
    ModelParams::from_array(std::array::from_fn(|_| rng.random_range(-half_width..half_width)))
}

pub fn random_design(rng: &mut impl Rng) -> GroupDesign {
    let n_int = rng.random_range(1..=5);
    let mut t = 0.0;
    let tau = (0..n_int)
        .map(|_| {
            t += rng.random_range(0.1..2.0);
            t
        })
        .collect();
    GroupDesign::new(rng.random_range(5..200), rng.random_range(0.3..3.0), tau).unwrap()
}
