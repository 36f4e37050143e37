//! End-to-end experiments: config validation, staged execution and reports.

mod adapt;
mod config;
mod report;
mod run;
mod source;
mod stage;

pub use adapt::{adapt, initialize, merged_tokenizer, Adapted, InitScheme};
pub use config::{validate_config, validate_value, EvalPaths, ExperimentConfig, LanguageConfig, SyntheticSource, Variant};
pub use report::{render_report, Report};
pub use run::{load_model, run_experiment, save_model, worker_threads, Artifact, RunManifest, SOURCE_MODEL, THREADS_ENV};
pub use source::train_source_model;
pub use stage::{file_hash, tree_hash, StageMeta, StageRecord, StageStore};
