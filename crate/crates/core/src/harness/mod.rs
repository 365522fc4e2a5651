//! Experiment plumbing: configuration, cross-validation, result records.

pub mod config;
pub mod cv;
pub mod records;

pub use config::{CvConfig, DatasetSource, ExperimentConfig, ModelConfig, ModelName};
pub use cv::{
    cross_validate, cross_validate_on, evaluate, fit, fit_all, fold_splits, size_generalization_sweep,
    train_model, FoldSplit, SweepRecord, SWEEP_FIRST_INSTANCE,
};
pub use records::{
    append_records, read_records, report, report_csv, results_dir, summarize, ReportRow, ResultRecord,
    Summary, RESULTS_DIR_ENV,
};
