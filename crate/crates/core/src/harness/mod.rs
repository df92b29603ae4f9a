//! Workload driver with per-thread logging and a post-run replay check.

mod config;
mod csv_out;
mod log;
mod oracle;
mod run;
mod scripted;

pub use config::{Mix, RunLength, WorkloadConfig};
pub use csv_out::{append_rows, read_rows, CsvRow, CSV_COLUMNS};
pub use scripted::{replay_scripted, ScriptedReplay, SCRIPT};
pub use log::{ContainsRecord, RqRecord, ThreadLog, UpdateKind, UpdateRecord};
pub use oracle::{validate, Replay, ValidationParams, ValidationReport, Violation};
pub use run::{drive, prefill, run, settings_for, RunOutcome, RunStats};
