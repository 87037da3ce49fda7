//! Benchmark suites, verification sweeps and reports.

mod emit;
mod report;
mod suite;
mod sweep;

pub use emit::{emit_kernels, EmittedFiles};
pub use report::{emit_report, render_report, ReportFormat, CSV_HEADER};
pub use suite::{load_suite, parse_suite, Suite, SuiteEntry, DEFAULT_BATCH_SIZES};
pub use sweep::{require_verified, sweep, sweep_entry, CounterSummary, ReportRow, SweepOptions, SweepOutcome};
