//! Conditional normalizing flows trained as plugins on the latent space of a
//! frozen autoencoder.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: matrices, RNG, gradient tape.
//! - [`transforms`]: invertible layers (masked autoregressive, affine coupling,
//!   reverse permutation, batch normalization).
//! - [`flow`]: stacks of transforms with exact conditional log-density and sampling.
//! - [`autoencoder`]: the dense base model whose latent space the flow models.
//! - [`trainer`]: latent datasets, Adam and the NLL training loop.
//! - [`tasks`]: conditional generation, Bayes classification, attribute editing.
//! - [`io`]: file formats, experiment configuration and synthetic data.
//! - [`diagnostics`]: invertibility and log-determinant checks.
//! - [`cli`]: the `fpn` binary.

pub mod autoencoder;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod io;
pub mod numerics;
pub mod tasks;
pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};
