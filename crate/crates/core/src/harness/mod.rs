//! Experiment orchestration: configuration, pretraining, inference modes,
//! comparison experiments, persistence and file formats.

pub mod config;
pub mod engine;
pub mod explainer;
pub mod io;
pub mod scorer;
pub mod snapshot;

pub use config::{Method, ModelKind, RiggedConfig, RunConfig};
pub use engine::{mean_stderr, CurveSeries, EpochRecord, Explanation, Pretrained, ResultRow, Trial, Workbench};
pub use explainer::{Explainer, PathSpace};
pub use scorer::{MapScorer, MetricScorer, RiggedScorer};
