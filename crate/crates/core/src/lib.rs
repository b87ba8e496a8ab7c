//! Adversarial AUC optimization for long-tail binary classification.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`] and [`rng`]: deterministic numeric kernel and seedable generator.
//! - [`model`]: small tanh/sigmoid scorers with exact reverse-mode gradients.
//! - [`objective`]: exact AUC, the pairwise square-loss risk, the instance-wise
//!   saddle-point objective `g`, its concavity-regularized surrogate `f` and gradients.
//! - [`attack`]: FGSM, projected PGD and the FOSC-masked batch attack.
//! - [`trainer`]: stochastic gradient descent-ascent with a FOSC schedule.
//! - [`data`]: long-tail construction, IDX / CIFAR-10 readers, dataset files.
//! - [`eval`]: evaluation grid, score histograms, CSV and SVG output.
//! - [`oracle`]: brute-force verifiers for the analytic identities used above.

pub mod attack;
pub mod checkpoint;
pub mod data;
mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod oracle;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
