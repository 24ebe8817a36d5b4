//! # aploss-core
//!
//! Ranking-loss optimization with the AP-loss and its error-driven update.
//!
//! Average precision is piecewise constant in the scores, so its gradient is
//! zero almost everywhere. Instead of differentiating it, the error-driven
//! scheme treats each pairwise activation `L_ij` as a perceptron output with
//! desired value 0 and pushes the error back through the difference
//! transform `x_ij = s_j - s_i`:
//!
//! ```text
//! L_ij = step(x_ij) / (1 + Σ_{k≠i} step(x_ik))      i ∈ P, j ∈ N
//! AP-loss = (1/|P|) Σ_i Σ_j L_ij = 1 - AP
//! g_i = -Σ_j L_ij   (positives)      g_j = Σ_i L_ij   (negatives)
//! ```
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`ranking`] | step functions, primary terms, AP/AUC losses, sort-based oracles |
//! | [`apgrad`] | score gradients, interpolated minibatch AP, margin variant, regret bounds |
//! | [`baselines`] | sigmoid-smoothed AP, AUC gradients, softmax/hinge consistency checks |
//! | [`models`] | linear and one-hidden-layer scorers with an explicit backward pass |
//! | [`trainer`] | seeded SGD loop, evaluation, score-shift and bound experiments |
//! | [`synth`] | seeded dataset generators with separability certificates |
//! | [`dataset`] | features, labels and image tags bundled together |
//!
//! The crate is `no_std` (with `alloc`); enable the `std` feature to get
//! `std::error::Error` on [`Error`] through the standard library prelude.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod apgrad;
pub mod baselines;
pub mod dataset;
mod error;
pub(crate) mod linalg;
pub mod models;
pub mod ranking;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

/// Common imports.
pub mod prelude {
    pub use crate::apgrad::{ap_grad_minibatch, score_gradients, GradientVector};
    pub use crate::dataset::Dataset;
    pub use crate::models::{FeatureSet, LinearScorer, MlpScorer, ScorerModel};
    pub use crate::ranking::{
        ap_loss, exact_ap_oracle, primary_terms, step, Label, PrimaryTermRows, RankingBatch,
        StepKind, TieBreak,
    };
    pub use crate::trainer::{
        evaluate, train, Batching, LossKind, ModelKind, TrainConfig, TrainHistory,
    };
    pub use crate::{Error, Result};
}
