//! Core library for source-free brain-decoder adaptation experiments.
//!
//! The crate provides the deterministic numerics stack (tensors, seeded
//! streams, a reverse-mode gradient engine, AdamW), the three adaptation
//! mechanisms (cross-subject ridge reuse, feature-level spectral
//! augmentation, difficulty-aware image blur), the contrastive alignment
//! objective with its retrieval protocol, and a desk-scale synthetic
//! multi-subject benchmark that exercises all of it end to end.

pub mod alignment;
pub mod autograd;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod image;
pub mod optim;
pub mod ridge;
pub mod rng;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
