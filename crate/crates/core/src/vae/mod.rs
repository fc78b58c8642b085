//! β-VAE over 512-d feature vectors.
//!
//! The encoder maps a vector through fully-connected blocks to the mean and
//! log-variance of a diagonal Gaussian posterior over `C` latents; the decoder
//! maps a sample back through fully-connected blocks to a sigmoid mean. The
//! objective is
//!
//! ```text
//! total = (1/B) Σ_b Σ_i (μ̂_i − x_i)²  +  β(t) · (−0.5 / (B·C)) Σ_b Σ_j (1 + log σ_j² − μ_j² − σ_j²)
//! ```
//!
//! with β annealed per epoch by [`BetaSchedule`].

mod loss;
mod model;
mod schedule;
mod train;

pub use loss::{elbo_backward, elbo_loss, reparameterize, reparameterize_with, ElboGrads, ElboTerms};
pub use model::{VaeArch, VaeForward, VaeModel};
pub use schedule::BetaSchedule;
pub use train::{
    constant_predictor_mse, represent, represent_sampled, train_vae, EpochRecord, TrainConfig, TrainHistory, VaeConfig,
    VaePreset, VaeTrainer,
};
