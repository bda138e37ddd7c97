//! Probabilistic forecasting of sparse origin-destination travel demand.
//!
//! The crate predicts, for every O-D pair and each future time window, a full
//! count distribution rather than a point value. A diffusion graph
//! convolution branch and a temporal convolution branch each produce an
//! embedding of the distribution parameters; the two are fused by an
//! elementwise product and mapped through link functions onto a
//! zero-inflated negative binomial (or one of three comparison heads).
//!
//! Module map:
//!
//! - [`tensor`]: dense tensors and the reverse-mode tape
//! - [`graph`]: zone tables, O-D adjacency, transition matrices, Chebyshev terms
//! - [`encoders`]: diffusion graph convolution and temporal convolution layers
//! - [`heads`]: ZINB / NB / Gaussian / truncated-normal probability layers
//! - [`model`]: the assembled forecaster, training and checkpoints
//! - [`metrics`]: MAE, MPIW, KL, true-zero rate, F1 and the historical average
//! - [`data`]: trip ingestion, demand tensors, synthesis, splits and file formats
//! - [`cli`]: the batch command line behind the `odcast` binary

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod encoders;
pub mod error;
pub mod graph;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod special;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor, Var};
