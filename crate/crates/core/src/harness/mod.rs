//! Experiment sweeps, their CSV reports, and the built-in verification suite.

pub mod report;
pub mod sweep;
pub mod verify;

pub use report::{aggregate, emit_report, AggregateRow, ReportPaths};
pub use sweep::{run_sweep, FixedConfig, Mode, ModelConfig, SweepAxis, SweepConfig, SweepResult, SweepRow, SynthSource, Task};
pub use verify::{run_verification, CheckResult, Level, VerificationReport};
