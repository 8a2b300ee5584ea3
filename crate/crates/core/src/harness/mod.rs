//! Config files, experiment grids, CSV traces and per-cell summaries.

mod config;
mod run;
mod trace;

pub use config::{
    parse_config, parse_config_str, AlgoBlock, AlgoKind, AlgoMode, AlgoParams, ExperimentConfig, HypercleanBlock, MrboBlock,
    ProblemBlock, QuadraticBlock, RunBlock, StocbioBlock, VrboBlock,
};
pub use run::{
    build_problem, describe_constants, resolve_constants, run_cell, run_experiment, CellStatus, CellSummary, ExperimentSummary,
    ProblemInstance, TraceRecorder,
};
pub use trace::{TraceRow, TraceWriter, TRACE_HEADER};
