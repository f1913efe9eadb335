//! Config-driven runs: multi-seed training with periodic greedy evaluation,
//! CSV/JSON/checkpoint outputs and cross-run comparison.
//!
//! Layout on disk:
//!
//! ```text
//! <output_dir>/<name>-<hash>/config.json
//! <output_dir>/<name>-<hash>/summary.json
//! <output_dir>/<name>-<hash>/seed-<seed>/{metrics.csv, summary.json, checkpoint.json, checkpoint.bin}
//! ```

mod compare;
mod config;
mod run;

pub use compare::{compare, compare_entries, separated, ComparisonReport, PairVerdict, RankedEntry};
pub use config::{EvalConfig, RunConfig};
pub use run::{
    aggregate, checkpoint_stem, checkpoint_trajectory, evaluate_checkpoint, metrics_csv, run, train_seed,
    trajectory_csv, Aggregate, MetricRow, RunSummary, SeedRun, SeedSummary, CSV_HEADER, TRAJECTORY_HEADER,
};
