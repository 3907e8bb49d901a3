//! Asymmetric distribution measures for metric-based few-shot classification.
//!
//! Images are represented as sets of local descriptors. Each set (a query
//! image, or every image of a support class pooled together) is summarized by
//! a multivariate Gaussian, and queries are compared to classes with the
//! asymmetric KL divergence, symmetric 2-Wasserstein baselines, a local
//! image-to-class top-k cosine measure, or a learnable fusion of KL and
//! image-to-class scores.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! parallel evaluation live in the companion `adm` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
mod math;

pub mod descriptors;
pub mod distributions;
pub mod episodes;
pub mod linalg;
pub mod measures;
pub mod model;
pub mod training;

pub use descriptors::{
    flatten_feature_map, synth_class_params, synth_gaussian_dataset, CovarianceKind, DescriptorSet,
    FeatureMap, LabeledClass, LabeledDataset, SynthSpec,
};
pub use distributions::{
    estimate_stats, pool_class_stats, pool_complement_stats, GaussianStats, COV_FLOOR,
    DEFAULT_SHRINKAGE,
};
pub use episodes::{
    episode_stream, sample_episode, Episode, EpisodeRng, EpisodeSpec, SplitRole, SplitSpec,
};
pub use error::{Error, Result};
pub use linalg::{LowerTriangular, Matrix, SymMatrix};
pub use measures::{
    contrastive, i2c_similarity, kl_divergence, wasserstein2_approx, wasserstein2_exact, Direction,
    MeasureKind,
};
pub use model::{
    branch_scores, classify, evaluate, fuse, fuse_batch, summarize_accuracies, BranchScores,
    Embedding, EvalConfig, EvalReport, FusionHead, Params, Scorer, Standardization,
};
pub use training::{
    adam_step, episode_loss, grad, train, AdamState, Grads, LossConfig, TrainConfig, TrainOutcome,
    Trainable,
};
