//! Experiment configuration, cell execution, CSV outputs and summaries.

pub mod compare;
pub mod config;
pub mod io;
pub mod records;
pub mod run;

pub use compare::{compare_dir, format_mean_std, summarize, SummaryRow};
pub use config::{DatasetSpec, ExperimentConfig, LossNetConfig};
pub use records::{ClockMode, MetricsRecord, SnapshotRow, Split};
pub use run::{run_cell, run_experiment, write_cell, CellOutput};
