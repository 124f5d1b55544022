//! Dynamic process monitoring built on variational Bayesian dictionary
//! learning.
//!
//! The pipeline standardizes training data, learns a sparse dictionary with a
//! beta-Bernoulli prior by variational EM, reconstructs samples with OMP,
//! models the reconstructions with a low-rank VAR, and monitors new samples
//! with two statistics whose control limits come from kernel density
//! estimates. Faulty variables are ranked by reconstruction-based
//! contribution. Classical PCA-family monitors and a synthetic alkaline
//! water electrolyzer simulator are included for comparison studies.

pub mod baselines;
pub mod data;
pub mod error;
pub mod metrics;
pub mod monitor;
pub mod omp;
pub mod sim;
pub mod var;
pub mod vb;

pub use error::{Error, Result};
