//! Experiment orchestration: the connectivity-rate schedule, convergence
//! sweeps over the cloud size, rate-envelope checks, and report emission.

pub mod config;
pub mod convergence;
pub mod report;

pub use config::{epsilon_bounds, epsilon_schedule, p_m, EpsilonRule, ExperimentConfig};
pub use convergence::{check_rates, run_convergence, RateVerdict};
pub use report::{
    aggregate_medians, report_to_csv, write_report, ConvergenceReport, RowDiagnostics, SlopeFit,
    TimingEntry, REPORT_SCHEMA_VERSION,
};
