//! Disentangled representations from aggregated CNN features.
//!
//! The crate implements a three-stage pipeline:
//!
//! 1. supervised multi-task finetuning of a convolutional feature extractor
//!    whose 512×2×2 feature map is reduced by a learned aggregation module to
//!    an ℓ2-normalized 512-d vector ([`extractor`]);
//! 2. extraction of those vectors for every image of a dataset;
//! 3. β-VAE training on the vectors with a cosine-annealed KLD weight ([`vae`]).
//!
//! The representation is scored with FactorVAE, DCI, SAP, MIG and IRS
//! ([`metrics`]). Datasets come from a factor-controlled synthetic renderer
//! ([`data`]). All layers have hand-written backward passes ([`nn`]) and are
//! optimized with RAdam ([`optim`]).

pub mod data;
pub mod error;
pub mod extractor;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
pub use tensor::{Rng, Scalar, Tensor};
