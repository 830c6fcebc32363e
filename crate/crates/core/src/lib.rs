//! Shallow model trees whose splits are scored by a one-step gradient
//! approximation of the loss reduction achieved by the child models.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`, which is what the command line uses.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod scalar;
pub mod split;
pub mod tree;
pub mod weak;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use data::{RowIndexSet, Task};
pub use split::SplitConfig;
pub use tree::Criterion;
pub use weak::{Direction, Link, NormKind};

pub type Dataset = data::Dataset<f64>;
pub type WeakModelParams = weak::WeakModelParams<f64>;
pub type NormalizationParams = weak::NormalizationParams<f64>;
pub type GradientVector = weak::GradientVector<f64>;
pub type GdConfig = weak::GdConfig<f64>;
pub type SplitDecision = split::SplitDecision<f64>;
pub type TrainConfig = tree::TrainConfig<f64>;
pub type TreeNode = tree::TreeNode<f64>;
pub type ModelTree = tree::ModelTree<f64>;

pub type Dataset32 = data::Dataset<f32>;
pub type WeakModelParams32 = weak::WeakModelParams<f32>;
pub type TrainConfig32 = tree::TrainConfig<f32>;
pub type ModelTree32 = tree::ModelTree<f32>;
