//! Configuration and pipeline orchestration behind the `volvar` binary.

pub mod config;
pub mod pipeline;

pub use config::{AssetSpec, ModelKind, RunConfig};
pub use pipeline::{
    run_backtest, run_fetch, run_fit, run_report, run_simulate, BacktestReport, ComparisonReport,
    FitReport, SimulationDump, StageError,
};
