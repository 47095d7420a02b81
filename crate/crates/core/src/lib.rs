//! Robust inference for nondestructive one-shot device tests with two
//! competing failure causes and interval inspection.
//!
//! Lifetimes follow two-parameter Lindley laws whose shape and scale depend
//! log-linearly on stress. The crate covers:
//!
//! - closed-form cell probabilities and their gradients ([`model`]);
//! - data layouts, simulation and the bundled clinical data set ([`dataset`]);
//! - weighted density power divergence objectives ([`divergence`]);
//! - MLE and WMDPDE fits, sandwich covariance and tuning selection ([`estimate`]);
//! - DPD pseudo-posteriors under Normal and Dirichlet priors ([`bayes`]) sampled by HMC ([`hmc`]);
//! - Bayes factors and bootstrap goodness of fit ([`testing`]);
//! - influence functions ([`robustness`]) and Monte Carlo bias studies ([`simulation`]);
//! - the `nosd` command line front end ([`cli`]).
//!
//! Runnable examples:
//!
//! ```text
//! cargo run -p robust-nosd --release --example cell_probabilities
//! cargo run -p robust-nosd --release --example simulate_and_fit
//! cargo run -p robust-nosd --release --example robust_bayes
//! cargo run -p robust-nosd --release --example bayes_factor
//! cargo run -p robust-nosd --release --example influence_curves > influence.csv
//! cargo run -p robust-nosd --release --example goodness_of_fit
//! cargo run -p robust-nosd --release --example tuning_selection
//! cargo run -p robust-nosd --release --example contamination_study -- 200
//! cargo run -p robust-nosd --release --example clinical_data
//! ```
//!
//! ```
//! use robust_nosd::dataset::{preset_plan, simulate_counts, LAMBDA_1};
//! use robust_nosd::estimate::fit_wmdpde;
//!
//! let plan = preset_plan("sim1").unwrap();
//! let counts = simulate_counts(&LAMBDA_1, &plan, 1).unwrap();
//! let fit = fit_wmdpde(&plan, &counts, 0.4, LAMBDA_1).unwrap();
//! assert!(fit.params.is_finite());
//! ```

pub mod bayes;
pub mod cli;
pub mod dataset;
pub mod divergence;
pub mod error;
pub mod estimate;
pub mod hmc;
pub mod model;
pub mod robustness;
pub mod simulation;
pub mod testing;

pub use error::{NosdError, Result};
pub use model::{GroupDesign, ModelParams};
