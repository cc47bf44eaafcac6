//! Synthetic designs with crossed entity/day effects or a spatial field,
//! and a replication driver comparing CV, corrected CV and GenErr.

mod config;
mod experiment;
pub mod fixtures;
mod generate;
mod summary;

pub use config::{BetaSpec, ExperimentConfig, SimConfig, SimKind};
pub use experiment::{run_experiment, ExperimentReport, ExperimentRow, RepFailure, RocRow};
pub use generate::{gen_clustered, gen_spatial, generate, SimData};
pub use summary::{
    histogram, summarize, ExperimentSummary, GroupSummary, Histogram, OrderingSummary, RocGroupSummary,
    StatSummary,
};
