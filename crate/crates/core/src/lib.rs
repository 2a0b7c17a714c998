//! Koopman autoencoder toolkit for one-dimensional periodic PDEs.
//!
//! The crate is organized bottom-up:
//!
//! - [`numcore`]: dense `f64` tensors and a tape-based reverse-mode differentiator.
//! - [`pde`]: Fisher, Burgers and Kuramoto-Sivashinsky solvers plus initial-condition families.
//! - [`dataset`]: split generation, the `KAE1` binary format and shuffled batching.
//! - [`model`]: the residual outer encoder/decoder, linear inner encoder/decoder and latent matrix `K`.
//! - [`training`]: the five-term loss, Adam and the epoch loop.
//! - [`spectral`]: Hessenberg + Francis double-shift QR eigenvalues of `K`.
//! - [`report`]: CSV and hand-emitted SVG output.

pub mod dataset;
pub mod error;
pub mod model;
pub mod numcore;
pub mod pde;
pub mod report;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
