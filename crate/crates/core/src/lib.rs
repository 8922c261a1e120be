//! Hybrid quantum-classical GAN engine.
//!
//! The crate bundles everything a desk-scale run needs: a small reverse-mode
//! tensor engine ([`tensor`]), a batched statevector simulator for the
//! 5-qubit variational block ([`quantum`]), the generator and discriminator
//! networks, discriminator transfer learning, FID/KID/IS metrics, data
//! ingestion, the adversarial trainer and the experiment runner used by the
//! `hqgan` binary.

pub mod data;
pub mod discriminator;
pub mod error;
pub mod experiment;
pub mod export;
pub mod generator;
pub mod metrics;
pub mod nn;
pub mod quantum;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod transfer;

pub use error::{Error, Result};
pub use tensor::Tensor;
