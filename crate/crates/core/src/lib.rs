//! Autoencoding variational inference for topic models.
//!
//! Three model tiers share one differentiable core: a plain VAE topic model,
//! a seed-word-guided aspect variant, and a joint sentiment/topic variant.
//! Training is batch, single-threaded f64, and fully deterministic under a
//! fixed seed.

pub mod aviad;
pub mod avijst;
pub mod avitm;
pub mod corpus;
pub mod diffcore;
pub mod eval;
pub mod genmodel;
pub mod priors;
