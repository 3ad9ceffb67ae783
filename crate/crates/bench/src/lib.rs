//! Benchmark harness for memory-of-motion warm starts: scenario files,
//! held-out evaluation, training-size sweeps, reports and SVG overlays.

pub mod error;
pub mod eval;
pub mod report;
pub mod scenario;
pub mod svg;

pub use error::{BenchError, BenchResult};
pub use eval::{obtain_memory, run_scenario, run_size_sweep, test_tasks, EvalOptions, Evaluator, Report, SweepReport, TestTask};
pub use report::{ReportRow, TaskRecord};
pub use scenario::{LoadedScenario, MetricSpec, Scenario};
