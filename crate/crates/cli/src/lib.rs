//! Operator commands behind the `fedadapt` binary: synthetic data
//! generation, client partitioning, federated training and reporting.

pub mod config;
mod datasets;
mod report;
mod train;

pub use config::{DataConfig, ExperimentConfig, MetricsConfig, Precision};
pub use datasets::{cmd_partition, cmd_synth, PartitionScheme};
pub use report::{cmd_report, ReportSummary, SplitBest};
pub use train::{cmd_train, Checkpoint, LogRecord, TrainSummary};

pub const METRICS_LOG: &str = "metrics.jsonl";
pub const TIMINGS: &str = "timings.json";
pub const LEDGER: &str = "ledger.json";
pub const SUMMARY: &str = "summary.json";
pub const BEST_RECORDS: &str = "best_records.json";
pub const RESOLVED_CONFIG: &str = "config.toml";
pub const FINAL_CHECKPOINT: &str = "fam_final.json";
pub const BEST_CHECKPOINT: &str = "fam_best.json";

/// File-name form of a split name.
pub fn split_slug(split: &str) -> String {
    split.replace('/', "_")
}
