//! Command-line front end shared by the `nosd` binary.
//!
//! Every subcommand reads an optional JSON config, writes machine-readable
//! results into `--out` and prints a rounded table to stdout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bayes::{PriorSpec, PseudoPosterior};
use crate::dataset::{contaminate, fixture, preset_plan, preset_truth, simulate_counts, Dataset, FailureCounts, TestPlan};
use crate::error::{NosdError, Result};
use crate::estimate::{
    default_tuning_grid, fit_mle, fit_wmdpde, mle_grid_init, sandwich_covariance, select_tuning, wald_ci, FitResult, Mat4,
    TuningSelection,
};
use crate::hmc::{hpd_interval, posterior_mean, sample, HmcConfig, PosteriorChains};
use crate::model::ModelParams;
use crate::robustness::{
    default_t_grid, if_bayes_factor_curve, if_wmdpde_curve, if_wrbe_curve, linspace, split_by_region, write_if_csv, IfCurve,
};
use crate::testing::{bayes_factor_run, gof_bootstrap_from, sample_in_ball, BayesFactorResult, GofResult, HypothesisSpec};

#[derive(Debug, Parser)]
#[command(name = "nosd", version, about = "Robust inference for nondestructive one-shot device tests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated tuning parameters, e.g. `0.2,0.4,0.6`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    /// Built-in simulation layout (`sim1`, `sim2`) or data fixture.
    #[arg(long, global = true)]
    pub preset: Option<String>,
}

#[derive(Debug, Subcommand, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Simulate failure counts for a preset layout.
    Simulate,
    /// MLE and WMDPDE with sandwich covariance and Wald intervals.
    Fit,
    /// Bayes and robust Bayes estimates by HMC.
    Bayes,
    /// Bayes factors for an epsilon-ball null.
    Bf,
    /// Parametric-bootstrap goodness of fit.
    Gof,
    /// Influence-function curves as CSV.
    If,
    /// Tuning-parameter selection.
    Tune,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    /// Generating parameters; the preset truth when absent.
    pub params: Option<ModelParams>,
    /// Shift the generating parameters by the preset outlier shift.
    #[serde(default)]
    pub contaminate: bool,
    /// Multiplier on every group size.
    pub scale: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSpec {
    #[serde(default = "half")]
    pub c1: f64,
    #[serde(default = "half")]
    pub c2: f64,
    pub grid: Option<Vec<f64>>,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluenceSpec {
    /// Any of `wmdpde`, `wrbe`, `bf`.
    pub estimators: Option<Vec<String>>,
    pub n_points: Option<usize>,
    pub t_max: Option<f64>,
    pub causes: Option<Vec<u8>>,
    /// Model used as the uncontaminated distribution.
    pub reference: Option<ModelParams>,
}

/// Contents of `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plan: Option<TestPlan>,
    pub counts: Option<FailureCounts>,
    pub fixture: Option<String>,
    pub preset: Option<String>,
    pub simulation: Option<SimulationSpec>,
    pub gamma: Option<Vec<f64>>,
    pub prior: Option<PriorSpec>,
    pub hmc: Option<HmcConfig>,
    pub hypothesis: Option<HypothesisSpec>,
    pub n_boot: Option<usize>,
    pub seed: Option<u64>,
    pub init: Option<ModelParams>,
    pub level: Option<f64>,
    pub tuning: Option<TuningSpec>,
    pub influence: Option<InfluenceSpec>,
    /// Store raw chains next to the Bayes summary.
    #[serde(default)]
    pub save_chains: bool,
}

impl RunConfig {
    /// Parses a config, reporting the offending field path and position.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            NosdError::Config(format!("config field `{}`: {}", e.path(), e.inner()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| NosdError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Exit status for an error: `2` for configuration or data problems, `3` for numerical failures.
pub fn exit_code(err: &NosdError) -> i32 {
    match err {
        NosdError::Domain(_)
        | NosdError::LinkOverflow { .. }
        | NosdError::SingularMatrix { .. }
        | NosdError::NonFiniteStart
        | NosdError::EmptyRegion { .. } => 3,
        _ => 2,
    }
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("output");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| NosdError::Config(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Fully resolved inputs of a run.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub gammas: Option<Vec<f64>>,
    pub preset: Option<String>,
}

impl Context {
    pub fn new(common: &CommonArgs) -> Result<Self> {
        let config = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let seed = common.seed.or(config.seed).unwrap_or(1);
        let gammas = common.gamma.clone().or_else(|| config.gamma.clone());
        if let Some(g) = &gammas {
            if g.is_empty() || g.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(NosdError::Config("gamma list must hold nonnegative finite values".into()));
            }
        }
        let preset = common.preset.clone().or_else(|| config.preset.clone());
        Ok(Self { out: common.out.clone().unwrap_or_else(|| PathBuf::from(".")), seed, gammas, preset, config })
    }

    fn gamma_list(&self, default: &[f64]) -> Vec<f64> {
        self.gammas.clone().unwrap_or_else(|| default.to_vec())
    }

    fn simulation_preset(&self) -> Option<&str> {
        self.preset.as_deref().filter(|p| preset_plan(p).is_ok())
    }

    /// Parameters that generated the data, when the data are simulated.
    pub fn truth(&self) -> Option<ModelParams> {
        let p = self.simulation_preset()?;
        let spec = self.config.simulation.clone().unwrap_or_default();
        preset_truth(p).ok().map(|(t, _)| spec.params.unwrap_or(t))
    }

    /// Simulated counts for the configured preset.
    pub fn simulate(&self) -> Result<Dataset> {
        let name = self.simulation_preset().ok_or_else(|| {
            NosdError::Config("simulation needs --preset sim1 or sim2 (or `preset` in the config)".into())
        })?;
        let spec = self.config.simulation.clone().unwrap_or_default();
        let (truth, shift) = preset_truth(name)?;
        let base = spec.params.unwrap_or(truth);
        let generating = if spec.contaminate { contaminate(&base, shift) } else { base };
        let plan = preset_plan(name)?.scaled(spec.scale.unwrap_or(1).max(1));
        let counts = simulate_counts(&generating, &plan, self.seed)?;
        Dataset::new(plan, counts)
    }

    /// Data from the config, a named fixture, or a simulated preset.
    pub fn dataset(&self) -> Result<Dataset> {
        let c = &self.config;
        match (&c.plan, &c.counts) {
            (Some(plan), Some(counts)) => return Dataset::new(plan.clone(), counts.clone()),
            (Some(_), None) => return Err(NosdError::Config("config has a plan but no `counts`".into())),
            (None, Some(_)) => return Err(NosdError::Config("config has counts but no `plan`".into())),
            (None, None) => {}
        }
        if let Some(name) = c.fixture.as_deref() {
            return fixture(name);
        }
        if let Some(name) = self.preset.as_deref() {
            if preset_plan(name).is_ok() {
                return self.simulate();
            }
            return fixture(name);
        }
        Err(NosdError::Config("no data: give `plan` and `counts`, a `fixture`, or --preset".into()))
    }

    fn init(&self, d: &Dataset) -> Result<ModelParams> {
        match self.config.init.or_else(|| self.truth()) {
            Some(p) => Ok(p),
            None => mle_grid_init(&d.plan, &d.counts),
        }
    }

    fn hmc(&self) -> HmcConfig {
        let mut h = self.config.hmc.unwrap_or_default();
        h.seed = self.seed;
        h
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn mat_rows(m: &Mat4) -> [[f64; 4]; 4] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn fmt6(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:>12.6}")).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Serialize)]
pub struct FitRow {
    pub estimator: String,
    pub fit: FitResult,
    pub covariance: Option<[[f64; 4]; 4]>,
    pub std_errors: Option<[f64; 4]>,
    pub ci: Option<[(f64, f64); 4]>,
    pub level: f64,
    pub error: Option<String>,
}

fn fit_row(estimator: String, fit: FitResult, plan: &TestPlan, level: f64) -> Result<FitRow> {
    match sandwich_covariance(&fit.params, plan, fit.gamma) {
        Ok(sc) => Ok(FitRow {
            estimator,
            fit,
            covariance: Some(mat_rows(&sc.cov)),
            std_errors: Some(sc.std_errors()),
            ci: Some(wald_ci(&fit, &sc, level)?),
            level,
            error: None,
        }),
        Err(e) => {
            log::warn!("{estimator}: {e}");
            Ok(FitRow { estimator, fit, covariance: None, std_errors: None, ci: None, level, error: Some(e.to_string()) })
        }
    }
}

pub fn cmd_simulate(ctx: &Context) -> Result<PathBuf> {
    let data = ctx.simulate()?;
    let path = ctx.path("counts.json");
    write_json(&path, &data)?;
    println!("simulated {} groups, {} devices, {} failures", data.plan.n_groups(), data.plan.total_devices(), data.counts.total_failures());
    Ok(path)
}

pub fn cmd_fit(ctx: &Context) -> Result<PathBuf> {
    let d = ctx.dataset()?;
    d.counts.validate_estimable(&d.plan)?;
    let level = ctx.config.level.unwrap_or(0.95);
    let init = ctx.init(&d)?;
    let mle = fit_mle(&d.plan, &d.counts, init)?;
    let mut rows = vec![fit_row("MLE".into(), mle, &d.plan, level)?];
    for gamma in ctx.gamma_list(&[0.2, 0.4, 0.6, 0.8, 1.0]) {
        if gamma == 0.0 {
            continue;
        }
        let fit = fit_wmdpde(&d.plan, &d.counts, gamma, init)?;
        rows.push(fit_row(format!("WMDPDE({gamma})"), fit, &d.plan, level)?);
    }
    println!("{:<14} {:>12} {:>12} {:>12} {:>12}", "estimator", "a1", "b1", "a2", "b2");
    for r in &rows {
        println!("{:<14} {}", r.estimator, fmt6(&r.fit.params.to_array()));
        if let Some(ci) = r.ci {
            let lo: Vec<f64> = ci.iter().map(|c| c.0).collect();
            let hi: Vec<f64> = ci.iter().map(|c| c.1).collect();
            println!("{:<14} {}\n{:<14} {}", "  lower", fmt6(&lo), "  upper", fmt6(&hi));
        }
    }
    let path = ctx.path("fit.json");
    write_json(&path, &rows)?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct BayesRow {
    pub gamma: f64,
    pub estimate: ModelParams,
    pub hpd: [(f64, f64); 4],
    pub level: f64,
    pub accept_rate: Vec<f64>,
    pub divergences: Vec<usize>,
    pub rhat: [f64; 4],
}

pub fn cmd_bayes(ctx: &Context) -> Result<PathBuf> {
    let d = ctx.dataset()?;
    let prior = ctx.config.prior.unwrap_or_else(PriorSpec::normal);
    let hmc = ctx.hmc();
    let level = ctx.config.level.unwrap_or(0.95);
    let init = ctx.init(&d)?;
    let mut rows = Vec::new();
    let mut chains: Vec<(f64, PosteriorChains)> = Vec::new();
    for gamma in ctx.gamma_list(&[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]) {
        let post = PseudoPosterior::new(&d.plan, &d.counts, gamma, prior)?;
        let ch = sample(&post, &hmc, init)?;
        rows.push(BayesRow {
            gamma,
            estimate: posterior_mean(&ch),
            hpd: hpd_interval(&ch, level)?,
            level,
            accept_rate: ch.accept_rate.clone(),
            divergences: ch.divergences.clone(),
            rhat: ch.rhat,
        });
        if ctx.config.save_chains {
            chains.push((gamma, ch));
        }
    }
    println!("{:<8} {:>12} {:>12} {:>12} {:>12}   accept", "gamma", "a1", "b1", "a2", "b2");
    for r in &rows {
        let acc = r.accept_rate.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join("/");
        println!("{:<8} {}   {acc}", r.gamma, fmt6(&r.estimate.to_array()));
    }
    if ctx.config.save_chains {
        write_json(&ctx.path("chains.json"), &chains)?;
    }
    let path = ctx.path("bayes.json");
    write_json(&path, &rows)?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct BfRow {
    pub gamma: f64,
    pub result: Option<BayesFactorResult>,
    pub error: Option<String>,
}

fn hypothesis(ctx: &Context) -> Result<HypothesisSpec> {
    let h = ctx.config.hypothesis.ok_or_else(|| NosdError::Config("config needs a `hypothesis`".into()))?;
    h.validate()?;
    Ok(h)
}

pub fn cmd_bf(ctx: &Context) -> Result<PathBuf> {
    let d = ctx.dataset()?;
    let hyp = hypothesis(ctx)?;
    let prior = ctx.config.prior.unwrap_or_else(PriorSpec::normal);
    let hmc = ctx.hmc();
    let mut rows = Vec::new();
    let mut first_err = None;
    for gamma in ctx.gamma_list(&[0.2, 0.4, 0.6, 0.8, 1.0]) {
        match bayes_factor_run(&d.plan, &d.counts, gamma, prior, &hyp, &hmc) {
            Ok(r) => rows.push(BfRow { gamma, result: Some(r.result), error: None }),
            Err(e @ (NosdError::EmptyRegion { .. } | NosdError::NonFiniteStart | NosdError::Domain(_))) => {
                log::warn!("gamma = {gamma}: {e}");
                rows.push(BfRow { gamma, result: None, error: Some(e.to_string()) });
                first_err.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    println!("{:<8} {:>14} {:>14} {:>14}  category", "gamma", "prior odds", "post odds", "BF01");
    for r in &rows {
        match (&r.result, &r.error) {
            (Some(b), _) => println!(
                "{:<8} {:>14.6} {:>14.6} {:>14.6}  {}",
                r.gamma, b.prior_odds, b.posterior_odds, b.bf01, b.category
            ),
            (None, Some(e)) => println!("{:<8} {e}", r.gamma),
            _ => {}
        }
    }
    let path = ctx.path("bf.json");
    write_json(&path, &rows)?;
    match first_err {
        Some(e) if rows.iter().all(|r| r.result.is_none()) => Err(e),
        _ => Ok(path),
    }
}

pub fn cmd_gof(ctx: &Context) -> Result<PathBuf> {
    let d = ctx.dataset()?;
    let n_boot = ctx.config.n_boot.unwrap_or(500);
    let init = ctx.init(&d)?;
    let mle = fit_mle(&d.plan, &d.counts, init)?;
    let res: GofResult = gof_bootstrap_from(&d.plan, &d.counts, &mle, n_boot, ctx.seed)?;
    println!("T = {:.6}, p = {:.6} ({} replicates, {} dropped)", res.t_obs, res.p_value, res.n_used, res.n_failed);
    let path = ctx.path("gof.json");
    write_json(&path, &res)?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
struct IfSummary {
    reference: ModelParams,
    curves: Vec<(String, f64, u8, f64)>,
    skipped: Vec<String>,
}

pub fn cmd_if(ctx: &Context) -> Result<PathBuf> {
    let spec = ctx.config.influence.clone().unwrap_or_default();
    let estimators = spec.estimators.clone().unwrap_or_else(|| vec!["wmdpde".into(), "wrbe".into()]);
    for e in &estimators {
        if !["wmdpde", "wrbe", "bf"].contains(&e.as_str()) {
            return Err(NosdError::Config(format!("unknown influence estimator `{e}`")));
        }
    }
    let causes = spec.causes.clone().unwrap_or_else(|| vec![1, 2]);
    let d = ctx.dataset()?;
    let reference = match spec.reference.or(ctx.config.init).or_else(|| ctx.truth()) {
        Some(p) => p,
        None => fit_mle(&d.plan, &d.counts, mle_grid_init(&d.plan, &d.counts)?)?.params,
    };
    let n = spec.n_points.unwrap_or(101);
    let grid = match spec.t_max {
        Some(t) => linspace(0.0, t, n),
        None => default_t_grid(&d.plan, n),
    };
    let prior = ctx.config.prior.unwrap_or_else(PriorSpec::normal);
    let hmc = ctx.hmc();
    let mut curves: Vec<IfCurve> = Vec::new();
    let mut skipped = Vec::new();
    for gamma in ctx.gamma_list(&[0.2, 0.8]) {
        let needs_chains = estimators.iter().any(|e| e == "wrbe");
        let chains = if needs_chains {
            let post = PseudoPosterior::new(&d.plan, &d.counts, gamma, prior)?;
            Some(sample(&post, &hmc, reference)?)
        } else {
            None
        };
        for &cause in &causes {
            for e in &estimators {
                let res = match e.as_str() {
                    "wmdpde" => if_wmdpde_curve(&reference, &d.plan, gamma, cause, &grid),
                    "wrbe" => if_wrbe_curve(chains.as_ref().expect("sampled"), &d.plan, gamma, &reference, cause, &grid),
                    _ => bf_curve(ctx, &d, gamma, prior, &hmc, &reference, cause, &grid),
                };
                match res {
                    Ok(c) => curves.push(c),
                    Err(err @ (NosdError::EmptyRegion { .. } | NosdError::SingularMatrix { .. } | NosdError::Domain(_))) => {
                        log::warn!("{e} at gamma = {gamma}, cause {cause}: {err}");
                        skipped.push(format!("{e} gamma={gamma} cause={cause}: {err}"));
                    }
                    Err(err) => return Err(err),
                }
            }
        }
    }
    if curves.is_empty() {
        return Err(NosdError::Domain(format!("no influence curve could be computed: {}", skipped.join("; "))));
    }
    let mut buf = Vec::new();
    write_if_csv(&mut buf, &curves)?;
    let path = ctx.path("influence.csv");
    write_atomic(&path, &buf)?;
    let summary = IfSummary {
        reference,
        curves: curves.iter().map(|c| (c.estimator.clone(), c.gamma, c.cause, c.max_abs())).collect(),
        skipped,
    };
    println!("{:<14} {:>6} {:>6} {:>14}", "estimator", "gamma", "cause", "max |IF|");
    for (e, g, c, m) in &summary.curves {
        println!("{e:<14} {g:>6} {c:>6} {m:>14.6}");
    }
    write_json(&ctx.path("influence_summary.json"), &summary)?;
    Ok(path)
}

#[allow(clippy::too_many_arguments)]
fn bf_curve(
    ctx: &Context,
    d: &Dataset,
    gamma: f64,
    prior: PriorSpec,
    hmc: &HmcConfig,
    reference: &ModelParams,
    cause: u8,
    grid: &[f64],
) -> Result<IfCurve> {
    let hyp = hypothesis(ctx)?;
    let run = bayes_factor_run(&d.plan, &d.counts, gamma, prior, &hyp, hmc)?;
    let (mut null, alt) = split_by_region(&run.posterior_chains, &hyp);
    if null.is_empty() {
        let post = PseudoPosterior::new(&d.plan, &d.counts, gamma, prior)?;
        null = sample_in_ball(&post, &hyp, hmc)?.pooled();
    }
    if_bayes_factor_curve(run.result.bf01, &null, &alt, &d.plan, gamma, reference, cause, grid)
}

pub fn cmd_tune(ctx: &Context) -> Result<PathBuf> {
    let d = ctx.dataset()?;
    let spec = ctx.config.tuning.clone().unwrap_or(TuningSpec { c1: 0.5, c2: 0.5, grid: None });
    let grid = ctx.gammas.clone().or(spec.grid).unwrap_or_else(default_tuning_grid);
    let sel: TuningSelection = select_tuning(&d.plan, &d.counts, &grid, spec.c1, spec.c2)?;
    println!("{:<8} {:>14} {:>14} {:>14}", "gamma", "divergence", "trace", "phi");
    for r in &sel.rows {
        println!("{:<8} {:>14.6} {:>14.6} {:>14.6}", r.gamma, r.divergence, r.trace, r.phi);
    }
    for (g, e) in &sel.failures {
        println!("{g:<8} skipped: {e}");
    }
    println!("optimal gamma = {}", sel.gamma_star);
    let path = ctx.path("tune.json");
    write_json(&path, &sel)?;
    Ok(path)
}

/// Dispatches a parsed command line and returns the main output file.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let ctx = Context::new(&cli.common)?;
    match cli.command {
        Command::Simulate => cmd_simulate(&ctx),
        Command::Fit => cmd_fit(&ctx),
        Command::Bayes => cmd_bayes(&ctx),
        Command::Bf => cmd_bf(&ctx),
        Command::Gof => cmd_gof(&ctx),
        Command::If => cmd_if(&ctx),
        Command::Tune => cmd_tune(&ctx),
    }
}
