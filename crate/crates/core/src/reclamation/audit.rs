use std::sync::atomic::{AtomicU64, Ordering};

use crossbeam_utils::CachePadded;

/// Objects released by one free operation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub nodes: u64,
    pub entries: u64,
}

impl std::ops::AddAssign for Tally {
    fn add_assign(&mut self, rhs: Tally) {
        self.nodes += rhs.nodes;
        self.entries += rhs.entries;
    }
}

#[derive(Default)]
struct Counters {
    nodes_allocated: AtomicU64,
    nodes_freed: AtomicU64,
    entries_allocated: AtomicU64,
    entries_freed: AtomicU64,
}

/// Allocation counters for nodes and bundle entries.
///
/// Each registered thread writes its own padded slot; frees that happen
/// outside any thread context (teardown, orphaned limbo lists) go to a shared
/// slot.
pub struct AllocAudit {
    slots: Box<[CachePadded<Counters>]>,
    shared: Counters,
}

/// Totals read from an [`AllocAudit`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub nodes_allocated: u64,
    pub nodes_freed: u64,
    pub entries_allocated: u64,
    pub entries_freed: u64,
}

impl AuditReport {
    pub fn live_nodes(&self) -> i64 {
        self.nodes_allocated as i64 - self.nodes_freed as i64
    }

    pub fn live_entries(&self) -> i64 {
        self.entries_allocated as i64 - self.entries_freed as i64
    }

    /// Every allocation has a matching free.
    pub fn balanced(&self) -> bool {
        self.live_nodes() == 0 && self.live_entries() == 0
    }
}

impl AllocAudit {
    pub(crate) fn new(threads: usize) -> Self {
        AllocAudit {
            slots: (0..threads).map(|_| CachePadded::new(Counters::default())).collect(),
            shared: Counters::default(),
        }
    }

    fn slot(&self, tid: Option<usize>) -> &Counters {
        match tid {
            Some(t) => &self.slots[t],
            None => &self.shared,
        }
    }

    pub(crate) fn allocated(&self, tid: Option<usize>, nodes: u64, entries: u64) {
        let c = self.slot(tid);
        if nodes > 0 {
            c.nodes_allocated.fetch_add(nodes, Ordering::Relaxed);
        }
        if entries > 0 {
            c.entries_allocated.fetch_add(entries, Ordering::Relaxed);
        }
    }

    pub(crate) fn freed(&self, tid: Option<usize>, t: Tally) {
        let c = self.slot(tid);
        if t.nodes > 0 {
            c.nodes_freed.fetch_add(t.nodes, Ordering::Relaxed);
        }
        if t.entries > 0 {
            c.entries_freed.fetch_add(t.entries, Ordering::Relaxed);
        }
    }

    pub fn report(&self) -> AuditReport {
        let mut r = AuditReport::default();
        for c in self.slots.iter().map(|s| &**s).chain(std::iter::once(&self.shared)) {
            r.nodes_allocated += c.nodes_allocated.load(Ordering::Relaxed);
            r.nodes_freed += c.nodes_freed.load(Ordering::Relaxed);
            r.entries_allocated += c.entries_allocated.load(Ordering::Relaxed);
            r.entries_freed += c.entries_freed.load(Ordering::Relaxed);
        }
        r
    }
}
