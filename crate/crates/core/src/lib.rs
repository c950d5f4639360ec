//! Practical privacy-risk measurement for trained classifiers and
//! explainer-guided feature masking.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: dual-task datasets (a utility label and an identity label per
//!   sample), synthetic generators, splits, label randomisation and file I/O.
//! - [`model`]: small multilayer perceptrons with exact per-sample gradients
//!   and a plain SGD trainer.
//! - [`dp`]: DP-SGD (per-sample clipping plus Gaussian noise) and a Rényi-DP
//!   accountant for the Poisson-subsampled Gaussian mechanism.
//! - [`attack`]: offline likelihood-ratio membership inference over a shadow
//!   ensemble, per-sample attack success rate and the dataset-level maximum.
//! - [`explain`]: Shapley (exact and permutation-sampled) and local-surrogate
//!   attributions, positive clipping and class-wise aggregation.
//! - [`masking`]: knapsack mask selection, top-k and random masks, and the
//!   end-to-end class-wise masking pipeline.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod attack;
pub mod data;
pub mod dp;
pub mod explain;
pub mod masking;
pub mod model;
pub mod seed;
pub mod stats;

pub use data::{DualTaskDataset, Task};
pub use model::{Classifier, MlpModel, MlpSpec, TrainConfig};
