//! Hamiltonian Monte Carlo with a diagonal mass matrix, plus chain summaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NosdError, Result};
use crate::model::{ModelParams, Vec4};

/// Energy error beyond which a trajectory counts as divergent and is rejected.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Unnormalized log density over `R^4`.
pub trait LogDensity: Sync {
    /// `-inf` (or NaN) outside the support.
    fn log_density(&self, x: &Vec4) -> f64;
    /// `None` when the gradient is not available at `x`.
    fn gradient(&self, x: &Vec4) -> Option<Vec4>;
}

impl<T: LogDensity + ?Sized> LogDensity for &T {
    fn log_density(&self, x: &Vec4) -> f64 {
        (**self).log_density(x)
    }

    fn gradient(&self, x: &Vec4) -> Option<Vec4> {
        (**self).gradient(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    pub step_size: f64,
    pub n_leapfrog: usize,
    /// Iterations per chain, burn-in included.
    pub n_samples: usize,
    pub burn_in: usize,
    /// Diagonal of the mass matrix `M`.
    pub mass_diag: [f64; 4],
    pub n_chains: usize,
    pub seed: u64,
    /// Tune the step size by dual averaging during burn-in.
    pub adapt_step_size: bool,
    pub target_accept: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            step_size: 0.001,
            n_leapfrog: 2,
            n_samples: 1200,
            burn_in: 200,
            mass_diag: [1.0 / 0.05; 4],
            n_chains: 2,
            seed: 0,
            adapt_step_size: false,
            target_accept: 0.65,
        }
    }
}

impl HmcConfig {
    /// Mass matrix `diag(1/v)`.
    pub fn with_variance(mut self, v: f64) -> Self {
        self.mass_diag = [1.0 / v; 4];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NosdError::Config(m.to_string()));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if self.n_leapfrog == 0 || self.n_chains == 0 {
            return bad("n_leapfrog and n_chains must be positive");
        }
        if self.burn_in >= self.n_samples {
            return bad("burn_in must be smaller than n_samples");
        }
        if self.mass_diag.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return bad("mass_diag entries must be positive");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Post-burn-in draws of every chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChains {
    pub draws: Vec<Vec<[f64; 4]>>,
    pub accept_rate: Vec<f64>,
    pub divergences: Vec<usize>,
    pub rhat: [f64; 4],
    /// Step size used after burn-in, per chain.
    pub step_size: Vec<f64>,
}

impl PosteriorChains {
    pub fn from_draws(draws: Vec<Vec<[f64; 4]>>) -> Self {
        let n = draws.len();
        let rhat = split_rhat(&draws);
        Self { draws, accept_rate: vec![1.0; n], divergences: vec![0; n], rhat, step_size: vec![0.0; n] }
    }

    pub fn n_draws(&self) -> usize {
        self.draws.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64; 4]> {
        self.draws.iter().flatten()
    }

    pub fn pooled(&self) -> Vec<[f64; 4]> {
        self.iter().copied().collect()
    }
}

fn kinetic(mom: &Vec4, mass: &Vec4) -> f64 {
    0.5 * mom.component_div(mass).dot(mom)
}

/// `n_steps` leapfrog steps of size `eps` for the potential `-log_density`.
///
/// Returns `None` if the gradient is unavailable anywhere along the path.
pub fn leapfrog(
    position: Vec4,
    momentum: Vec4,
    grad: impl Fn(&Vec4) -> Option<Vec4>,
    eps: f64,
    n_steps: usize,
    mass: &Vec4,
) -> Option<(Vec4, Vec4)> {
    let mut x = position;
    let mut p = momentum;
    let mut g = grad(&x)?;
    for _ in 0..n_steps {
        p += g * (0.5 * eps);
        x += p.component_div(mass) * eps;
        g = grad(&x)?;
        p += g * (0.5 * eps);
    }
    Some((x, p))
}

struct DualAveraging {
    mu: f64,
    log_eps_bar: f64,
    h_bar: f64,
    t: f64,
    target: f64,
}

impl DualAveraging {
    fn new(eps: f64, target: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), log_eps_bar: 0.0, h_bar: 0.0, t: 0.0, target }
    }

    fn update(&mut self, accept_prob: f64) -> f64 {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.t += 1.0;
        let eta = 1.0 / (self.t + T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_prob);
        let log_eps = self.mu - self.t.sqrt() / GAMMA * self.h_bar;
        let w = self.t.powf(-KAPPA);
        self.log_eps_bar = w * log_eps + (1.0 - w) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

struct ChainOutput {
    draws: Vec<[f64; 4]>,
    accepted: usize,
    divergences: usize,
    step_size: f64,
}

fn run_chain<D: LogDensity>(target: &D, cfg: &HmcConfig, init: Vec4, chain: usize) -> ChainOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let mass = Vec4::from(cfg.mass_diag);
    let sqrt_mass = mass.map(f64::sqrt);
    let mut x = init;
    let mut logp = target.log_density(&x);
    let mut eps = cfg.step_size;
    let mut adapt = cfg.adapt_step_size.then(|| DualAveraging::new(eps, cfg.target_accept));
    let mut draws = Vec::with_capacity(cfg.n_samples - cfg.burn_in);
    let mut accepted = 0;
    let mut divergences = 0;
    for it in 0..cfg.n_samples {
        let z = Vec4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let p0 = z.component_mul(&sqrt_mass);
        let h0 = -logp + kinetic(&p0, &mass);
        let proposal = leapfrog(x, p0, |y| target.gradient(y), eps, cfg.n_leapfrog, &mass);
        let u: f64 = rng.random();
        let mut accept_prob = 0.0;
        if let Some((x1, p1)) = proposal {
            let logp1 = target.log_density(&x1);
            let h1 = -logp1 + kinetic(&p1, &mass);
            let dh = h1 - h0;
            if dh.is_nan() || dh > DIVERGENCE_THRESHOLD {
                divergences += usize::from(it >= cfg.burn_in);
            } else {
                accept_prob = (-dh).exp().min(1.0);
                if u < accept_prob {
                    x = x1;
                    logp = logp1;
                    accepted += usize::from(it >= cfg.burn_in);
                }
            }
        } else {
            divergences += usize::from(it >= cfg.burn_in);
        }
        if it < cfg.burn_in {
            if let Some(da) = adapt.as_mut() {
                eps = da.update(accept_prob);
                if it + 1 == cfg.burn_in {
                    eps = da.final_step();
                }
            }
        } else {
            draws.push([x[0], x[1], x[2], x[3]]);
        }
    }
    ChainOutput { draws, accepted, divergences, step_size: eps }
}

/// Runs `n_chains` independent chains from `init`; chain `c` uses stream `c` of
/// a ChaCha8 generator seeded with `config.seed`.
pub fn sample<D: LogDensity>(target: &D, config: &HmcConfig, init: ModelParams) -> Result<PosteriorChains> {
    config.validate()?;
    let x0 = init.to_vector();
    if !target.log_density(&x0).is_finite() || target.gradient(&x0).is_none() {
        return Err(NosdError::NonFiniteStart);
    }
    let outputs: Vec<ChainOutput> =
        (0..config.n_chains).into_par_iter().map(|c| run_chain(target, config, x0, c)).collect();
    let kept = (config.n_samples - config.burn_in) as f64;
    let accept_rate: Vec<f64> = outputs.iter().map(|o| o.accepted as f64 / kept).collect();
    for (c, a) in accept_rate.iter().enumerate() {
        if *a < 0.01 {
            log::warn!("chain {c}: acceptance rate {a:.4} is below 1%");
        }
    }
    let divergences = outputs.iter().map(|o| o.divergences).collect();
    let step_size = outputs.iter().map(|o| o.step_size).collect();
    let draws: Vec<Vec<[f64; 4]>> = outputs.into_iter().map(|o| o.draws).collect();
    let rhat = split_rhat(&draws);
    Ok(PosteriorChains { draws, accept_rate, divergences, rhat, step_size })
}

/// Componentwise mean over all chains.
pub fn posterior_mean(chains: &PosteriorChains) -> ModelParams {
    let n = chains.n_draws() as f64;
    let mut s = [0.0; 4];
    for d in chains.iter() {
        for j in 0..4 {
            s[j] += d[j];
        }
    }
    ModelParams::from_array(s.map(|v| v / n))
}

/// Shortest interval containing `ceil(level * n)` pooled draws, per coordinate.
pub fn hpd_interval(chains: &PosteriorChains, level: f64) -> Result<[(f64, f64); 4]> {
    if !(level > 0.0 && level < 1.0) {
        return Err(NosdError::Config(format!("credible level {level} outside (0, 1)")));
    }
    let pooled = chains.pooled();
    if pooled.is_empty() {
        return Err(NosdError::Config("no draws to summarize".into()));
    }
    Ok(std::array::from_fn(|j| {
        let mut v: Vec<f64> = pooled.iter().map(|d| d[j]).collect();
        v.sort_by(f64::total_cmp);
        shortest_window(&v, level)
    }))
}

/// Shortest window of sorted values covering `ceil(level * n)` of them.
pub fn shortest_window(sorted: &[f64], level: f64) -> (f64, f64) {
    let n = sorted.len();
    let k = ((level * n as f64).ceil() as usize).clamp(1, n);
    (0..=n - k)
        .map(|i| (sorted[i], sorted[i + k - 1]))
        .min_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)))
        .expect("window exists")
}

/// Split-R-hat per coordinate; `1` when every half-chain is constant and equal.
pub fn split_rhat(draws: &[Vec<[f64; 4]>]) -> [f64; 4] {
    let n = draws.iter().map(Vec::len).min().unwrap_or(0) / 2;
    if n < 2 {
        return [f64::NAN; 4];
    }
    std::array::from_fn(|j| {
        let halves: Vec<Vec<f64>> = draws
            .iter()
            .flat_map(|c| [c[..n].iter().map(|d| d[j]).collect(), c[c.len() - n..].iter().map(|d| d[j]).collect()])
            .collect();
        if halves.iter().all(|h| h.iter().all(|x| *x == h[0])) {
            return if halves.iter().all(|h| h[0] == halves[0][0]) { 1.0 } else { f64::INFINITY };
        }
        let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n as f64).collect();
        let m = halves.len() as f64;
        let grand = means.iter().sum::<f64>() / m;
        let b = n as f64 * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m - 1.0);
        let w = halves
            .iter()
            .zip(&means)
            .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n as f64 - 1.0))
            .sum::<f64>()
            / m;
        let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
        (var_plus / w).sqrt()
    })
}

/// Acceptance rate per chain and split-R-hat per coordinate.
pub fn diagnostics(chains: &PosteriorChains) -> (Vec<f64>, [f64; 4]) {
    (chains.accept_rate.clone(), split_rhat(&chains.draws))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormal;

    impl LogDensity for StdNormal {
        fn log_density(&self, x: &Vec4) -> f64 {
            -0.5 * x.norm_squared()
        }

        fn gradient(&self, x: &Vec4) -> Option<Vec4> {
            Some(-x)
        }
    }

    struct Flat;

    impl LogDensity for Flat {
        fn log_density(&self, _: &Vec4) -> f64 {
            0.0
        }

        fn gradient(&self, _: &Vec4) -> Option<Vec4> {
            Some(Vec4::zeros())
        }
    }

    #[test]
    fn leapfrog_is_reversible() {
        let mass = Vec4::new(1.0, 2.0, 0.5, 3.0);
        let x0 = Vec4::new(0.3, -1.0, 2.0, 0.1);
        let p0 = Vec4::new(1.0, 0.5, -0.2, 0.7);
        let g = |x: &Vec4| Some(-x.map(|v| v * v * v));
        let (x1, p1) = leapfrog(x0, p0, g, 0.05, 20, &mass).unwrap();
        let (x2, p2) = leapfrog(x1, -p1, g, 0.05, 20, &mass).unwrap();
        assert!((x2 - x0).norm() < 1e-8);
        assert!((p2 + p0).norm() < 1e-8);
    }

    #[test]
    fn zero_gradient_is_pure_drift() {
        let mass = Vec4::new(20.0, 20.0, 4.0, 1.0);
        let x0 = Vec4::new(0.1, 0.2, 0.3, 0.4);
        let p0 = Vec4::new(1.0, -1.0, 2.0, 0.5);
        let (x1, p1) = leapfrog(x0, p0, |_| Some(Vec4::zeros()), 0.01, 7, &mass).unwrap();
        let want = x0 + p0.component_div(&mass) * 0.07;
        assert!((x1 - want).norm() < 1e-12);
        assert_eq!(p1, p0);
    }

    #[test]
    fn energy_error_is_second_order() {
        let mass = Vec4::repeat(1.0);
        let x0 = Vec4::new(1.0, 0.0, -0.5, 0.3);
        let p0 = Vec4::new(0.0, 1.0, 0.2, -0.4);
        let h = |x: &Vec4, p: &Vec4| 0.5 * x.norm_squared() + kinetic(p, &mass);
        let err = |eps: f64| {
            let steps = (1.0 / eps).round() as usize;
            let (x, p) = leapfrog(x0, p0, |x| Some(-x), eps, steps, &mass).unwrap();
            (h(&x, &p) - h(&x0, &p0)).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn standard_normal_target() {
        let cfg = HmcConfig {
            step_size: 0.25,
            n_leapfrog: 6,
            n_samples: 5500,
            burn_in: 500,
            mass_diag: [1.0; 4],
            n_chains: 2,
            seed: 7,
            ..HmcConfig::default()
        };
        let chains = sample(&StdNormal, &cfg, ModelParams::new(0.5, -0.5, 0.5, -0.5)).unwrap();
        let mean = posterior_mean(&chains).to_vector();
        assert!(mean.abs().max() < 0.05, "{mean}");
        let pooled = chains.pooled();
        let n = pooled.len() as f64;
        for j in 0..4 {
            for k in 0..4 {
                let c = pooled.iter().map(|d| (d[j] - mean[j]) * (d[k] - mean[k])).sum::<f64>() / (n - 1.0);
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((c - want).abs() < 0.1, "cov[{j}][{k}] = {c}");
            }
        }
        assert!(chains.rhat.iter().all(|r| *r < 1.1));
        assert!(chains.accept_rate.iter().all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn tiny_steps_accept_everything() {
        let cfg = HmcConfig { step_size: 1e-6, mass_diag: [1.0; 4], n_samples: 300, burn_in: 0, ..HmcConfig::default() };
        let chains = sample(&StdNormal, &cfg, ModelParams::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert!(chains.accept_rate.iter().all(|a| *a > 0.99));
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = HmcConfig { step_size: 0.2, n_leapfrog: 5, mass_diag: [1.0; 4], seed: 3, ..HmcConfig::default() };
        let a = sample(&StdNormal, &cfg, ModelParams::new(0.0, 0.0, 0.0, 0.0)).unwrap();
        let b = sample(&StdNormal, &cfg, ModelParams::new(0.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.draws[0], a.draws[1]);
    }

    #[test]
    fn adaptation_reaches_reasonable_acceptance() {
        let cfg = HmcConfig {
            step_size: 5.0,
            n_leapfrog: 5,
            mass_diag: [1.0; 4],
            adapt_step_size: true,
            n_samples: 2000,
            burn_in: 1000,
            ..HmcConfig::default()
        };
        let chains = sample(&StdNormal, &cfg, ModelParams::new(0.0, 0.0, 0.0, 0.0)).unwrap();
        assert!(chains.accept_rate.iter().all(|a| *a > 0.4), "{:?}", chains.accept_rate);
    }

    #[test]
    fn flat_target_random_walks() {
        let cfg = HmcConfig { step_size: 0.1, n_samples: 100, burn_in: 10, ..HmcConfig::default() };
        let chains = sample(&Flat, &cfg, ModelParams::new(0.0, 0.0, 0.0, 0.0)).unwrap();
        assert!(chains.accept_rate.iter().all(|a| *a == 1.0));
    }

    #[test]
    fn summaries_of_degenerate_and_uniform_draws() {
        let constant = PosteriorChains::from_draws(vec![vec![[1.0, 2.0, 3.0, 4.0]; 50]; 2]);
        assert_eq!(posterior_mean(&constant), ModelParams::new(1.0, 2.0, 3.0, 4.0));
        assert_eq!(constant.rhat, [1.0; 4]);
        let hpd = hpd_interval(&constant, 0.9).unwrap();
        assert!(hpd.iter().all(|(a, b)| a == b));

        let uniform: Vec<[f64; 4]> = (0..10_000).map(|k| [(k as f64 + 0.5) / 10_000.0; 4]).collect();
        let chains = PosteriorChains::from_draws(vec![uniform]);
        let hpd = hpd_interval(&chains, 0.95).unwrap();
        assert!(((hpd[0].1 - hpd[0].0) - 0.95).abs() < 0.02);
        assert!(hpd[0].0 >= 0.0 && hpd[0].1 <= 1.0);
    }

    #[test]
    fn duplicated_chain_keeps_mean() {
        let one: Vec<[f64; 4]> = (0..20).map(|k| [k as f64, 1.0, -(k as f64), 0.5]).collect();
        let a = PosteriorChains::from_draws(vec![one.clone()]);
        let b = PosteriorChains::from_draws(vec![one.clone(), one]);
        assert_eq!(posterior_mean(&a), posterior_mean(&b));
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = HmcConfig::default();
        assert!(HmcConfig { burn_in: 1200, ..base }.validate().is_err());
        assert!(HmcConfig { step_size: 0.0, ..base }.validate().is_err());
        assert!(HmcConfig { mass_diag: [1.0, 0.0, 1.0, 1.0], ..base }.validate().is_err());
        assert_eq!(base.with_variance(0.05).mass_diag, [20.0; 4]);
    }
}
