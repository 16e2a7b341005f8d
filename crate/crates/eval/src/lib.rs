//! Evaluation of trained models: per-chart Frechet distance over learned
//! chart features, pairwise ranking accuracy and attribute monotonicity.

pub mod error;
pub mod features;
pub mod fid;
pub mod metrics;

pub use error::{Error, Result};
pub use features::{chart_part_labels, train_feature_net, FeatureConfig, FeatureNet};
pub use fid::{frechet_distance, GaussianStats};
pub use metrics::{mean_fid, monotonicity_score, ranking_accuracy, spearman, sweep, EvalReport};
