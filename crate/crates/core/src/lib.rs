//! Federated recommendation with additive personalization: each client scores
//! items with a shared global table `C` plus its own private table `D`.

// Parameter checks use `!(x >= 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod curriculum;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod matrix;
pub mod model;
pub mod privacy;
pub mod rng;
pub mod runtime;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use runtime::{VariantKind, VariantSpec};
