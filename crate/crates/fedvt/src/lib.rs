//! Federated differential-privacy lower-bound laboratory.
//!
//! The crate has three layers. The bottom layer calibrates and audits
//! zero-concentrated DP mechanisms (`privacy`), and defines parametric data
//! models (`models`) and smooth compactly supported priors (`priors`). The
//! middle layer executes interactive federated protocols with public
//! transcripts (`protocol`, `mechanisms`) and measures the Fisher information
//! those transcripts carry about the parameter (`fisher`, `verification`).
//! The top layer evaluates minimax lower bounds (`bounds`), runs reference
//! estimators against them (`estimators`), and packages everything behind a
//! config-driven command-line interface (`scenario`, `report`, `cli`).
//!
//! Every randomized routine takes an explicit 64-bit seed and derives
//! per-component streams from it (see `rng`), so repeated runs are
//! reproducible to the bit.

pub mod bounds;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod fisher;
pub mod mechanisms;
pub mod models;
pub mod numeric;
pub mod priors;
pub mod privacy;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod verification;

pub use error::{Error, Result};
