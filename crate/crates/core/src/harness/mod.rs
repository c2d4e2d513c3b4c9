//! Experiment harness: workload generation, score traces, multi-router
//! simulation and report files.

pub mod experiment;
pub mod report;
pub mod trace;
pub mod workload;

pub use experiment::{run_experiment, run_on_batches, Algorithm, RunOptions};
pub use report::{emit_report, RunReport, StepRecord, SummaryRecord};
pub use trace::{read_trace, write_trace};
pub use workload::{gen_workload, WorkloadKind, WorkloadSpec};
