//! Sparse adversarial training: relaxed variable-splitting pruners (RVSM,
//! RGSM) and an ADMM baseline running inside adversarial training of small
//! networks, with the tensor engine, models, attacks, metrics, data
//! loaders and experiment harness they need.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod autodiff;
pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod pruners;
pub mod rng;
pub mod svg;
pub mod tensor;

pub use attacks::AttackSpec;
pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use data::Dataset;
pub use error::{Error, Result};
pub use model::Model;
pub use pruners::{Algorithm, PrunerState};
pub use tensor::Tensor;
