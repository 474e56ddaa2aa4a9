//! Writer-dependent offline signature verification.
//!
//! The library turns scanned signature images into fixed-length latent
//! features with a variational autoencoder whose training objective pulls
//! same-writer encodings together and pushes different-writer encodings
//! apart, then scores questioned signatures with a per-writer RBF support
//! vector machine. Everything is deterministic given a seed: preprocessing,
//! training, feature extraction, and evaluation all draw randomness from
//! named ChaCha streams derived from the run seed.
//!
//! Numeric kernels are generic over the scalar type via [`scalar::Real`]
//! (`f32` or `f64`); the concrete aliases at the crate root fix `f64`,
//! which is what the binary and the file format use.

pub mod config;
pub mod dataset;
pub mod disentangle;
pub mod error;
pub mod eval;
pub mod image;
pub mod numeric;
pub mod persist;
pub mod preprocess;
pub mod scalar;
pub mod seeds;
pub mod svm;
pub mod synth;
pub mod trainer;
pub mod vae;

pub use error::{Error, Result};

/// Default scalar type used by the CLI and the model file format.
pub type Scalar = f64;

/// Dense `f64` matrix.
pub type Matrix = numeric::DenseMatrix<Scalar>;
