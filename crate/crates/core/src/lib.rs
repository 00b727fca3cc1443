//! Conditional multimodal autoencoder (CMMA) and a matched conditional VAE
//! baseline, built on a small reverse-mode differentiation engine.
//!
//! The crate covers the whole desk-scale pipeline: a synthetic
//! attribute-to-glyph dataset with a rule-based attribute oracle, Adagrad
//! training of the variational bound, checkpointing, and an evaluation
//! battery (test-set bounds, conditional Parzen scores, a Gauss–Hermite
//! likelihood oracle for small latent spaces, latent-geometry export and
//! attribute-match scoring).

pub mod cli;
pub mod data;
pub mod eval;
pub mod gaussian;
pub mod model;
pub mod ndgrad;
pub mod train;

pub use gaussian::{GaussianDiag, ReconMode, Rng};
pub use model::{BoundBreakdown, Model, ModelConfig, ModelKind};
pub use ndgrad::{ParamStore, Tape, Tensor};
