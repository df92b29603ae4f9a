//! Memory reclamation: epochs for nodes and entries, the range-query
//! announcement table that gates entry retirement, and the background
//! cleaner.

mod audit;
mod cleanup;
mod ebr;
mod rq_table;

pub use audit::{AllocAudit, AuditReport, Tally};
pub use cleanup::{run_cleaner, CleanerReport, CleanupStats};
pub(crate) use cleanup::prune_bundle;
pub use ebr::{Collector, EpochGuard, LocalEpoch, ReadSection};
pub(crate) use ebr::Retired;
pub use rq_table::{ActiveRqTable, RqSlot};
