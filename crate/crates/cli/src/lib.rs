//! Experiment orchestration: configuration, source pretraining, method runs
//! over domain-shift streams, and result comparison.

pub mod compare;
pub mod config;
pub mod experiment;
pub mod pretrain;

pub use config::RunConfig;
pub use experiment::{run_experiment, SeedReport, Summary};
pub use pretrain::{pretrain_source, PretrainOutcome};
