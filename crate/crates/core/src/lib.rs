//! Concurrent ordered sets with linearizable range queries built from
//! bundled references.
//!
//! Each link that a range query may follow is shadowed by a [`Bundle`]: a
//! newest-first list of `(target, timestamp)` entries. Updates stamp the
//! entries they add with a value of the [`GlobalClock`]; a range query reads
//! the clock once and then follows, at every node, the newest entry no newer
//! than that snapshot. Three structures use the technique:
//!
//! * [`BundledList`], a lazy sorted linked list,
//! * [`BundledSkipList`], a lazy skip list bundled at the data layer only,
//! * [`BundledTree`], an unbalanced internal tree with copy-based removal.
//!
//! ```
//! use bundled::{BundledSkipList, RangeSet, Settings};
//!
//! let set: BundledSkipList<&str> = BundledSkipList::with_settings(Settings::default());
//! let h = set.runtime().register().unwrap();
//! set.insert(&h, 3, "c");
//! set.insert(&h, 1, "a");
//! let snap = set.range_query(&h, 0, 10);
//! assert_eq!(snap.items, vec![(1, "a"), (3, "c")]);
//! ```

mod bst;
pub mod bundle;
pub mod clock;
mod error;
pub mod harness;
mod list;
mod lock;
pub mod reclamation;
mod runtime;
mod set;
mod skiplist;

pub use bst::BundledTree;
pub use bundle::{Bundle, BundleEntry, PreparedUpdate, TimestampPolicy, WaitPolicy};
pub use clock::{GlobalClock, Timestamp, CONTAINS_TS, PENDING_TS};
pub use error::Error;
pub use list::BundledList;
pub use runtime::{Runtime, Settings, ThreadHandle};
pub use set::{BundleView, Key, NodeRef, RangeQuery, RangeSet, StructureKind, MAX_KEY, MIN_KEY};
pub use skiplist::BundledSkipList;
