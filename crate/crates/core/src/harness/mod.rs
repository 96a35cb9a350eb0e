//! Data ingestion, contamination protocols, metrics and the regression suite.

mod contaminate;
mod data;
mod metrics;
mod suite;

pub use contaminate::{contaminate, ContaminationSpec, ObservationChannel, Protocol};
pub use data::{load_csv, split, standardize, Dataset, Standardization, TargetColumn};
pub use metrics::{mae, nll};
pub use suite::{
    gist1d_dataset, run_cell, run_regression_suite, summarize, write_results, CellSpec, DatasetSource, RunResult,
    SigmaBar, SuiteConfig, SummaryRow,
};
