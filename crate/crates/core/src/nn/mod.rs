//! Minimal dense neural-network engine: named parameter sets, MLP
//! forward/backward with optional layer normalization and label embeddings,
//! Adam with cosine decay, expectile losses, and Polyak target tracking.
//!
//! Parameters live in name-sorted maps and every kernel fixes its reduction
//! order, so training is bit-deterministic for a given seed in both
//! execution modes.

mod adam;
mod losses;
mod mlp;
mod params;

pub use adam::{adam_step, AdamConfig};
pub use losses::{check_kappa, cosine_factor, expectile_grad, expectile_loss};
pub use mlp::{backward, forward, forward_only, init_params, EmbeddingSpec, MlpSpec, Tape};
pub use params::{polyak_update, GradientSet, ParameterSet};
