//! Offline reinforcement learning of style-conditioned policies on a planar
//! circle-drawing environment.
//!
//! The crate is organized around a pipeline:
//!
//! 1. [`env`] — the 2D kinematic environment plus a scripted controller that
//!    generates trajectory datasets.
//! 2. [`labeling`] — programmatic labeling functions that annotate every
//!    timestep of a dataset with a discrete style label, and the sampling
//!    distributions used to relabel styles during training.
//! 3. [`data`] — dataset persistence and minibatch assembly.
//! 4. [`agents`] — the training algorithms: behavior cloning variants,
//!    advantage-weighted regression with expectile-regressed value functions,
//!    gated advantage combination, and mutual-information label estimators.
//! 5. [`eval`] — rollout evaluation, style alignment and return metrics,
//!    aggregation, Pareto hypervolume, and label-noise sweeps.
//!
//! Everything below [`agents`] rests on [`nn`], a minimal dense-math engine
//! (MLP forward/backward, Adam, schedules) over [`tensor::DenseArray`].
//!
//! All operations are deterministic given their seeds. Data-parallel paths
//! (episode generation, annotation, rollouts, sweep fan-out, batched matmul)
//! go through [`exec::ExecMode`]; with the `parallel` feature disabled the
//! crate is fully sequential. Parallel and sequential execution produce
//! bit-identical results.

pub mod agents;
pub mod data;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod eval;
pub mod exec;
pub mod io;
pub mod labeling;
pub mod nn;
pub mod seeding;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use tensor::DenseArray;
