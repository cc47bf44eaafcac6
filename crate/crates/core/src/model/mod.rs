//! Datasets, model families and decomposable losses.

pub mod dataset;
pub mod family;
pub mod loss;

pub use dataset::{ClusterIndex, Dataset, SpatialIndex, Structure};
pub use family::{Distribution, Link, ModelFamily};
pub use loss::{threshold_label, Loss, PredictionSpace};
