//! Shared state of one bundled structure: clock, range-query table, epoch
//! collector, and the per-thread handle that operations run with.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use crate::bundle::{prepare_bundles, Bundle, PreparedUpdate, TimestampPolicy, WaitPolicy};
use crate::clock::{GlobalClock, Timestamp};
use crate::reclamation::{
    ActiveRqTable, AllocAudit, Collector, EpochGuard, LocalEpoch, ReadSection, Retired, Tally,
};
use crate::Error;

/// Construction-time knobs shared by all three structures.
#[derive(Clone, Debug)]
pub struct Settings {
    /// Upper bound on concurrently registered threads, the cleaner included.
    pub max_threads: usize,
    pub wait: WaitPolicy,
    pub timestamps: TimestampPolicy,
    /// A thread tries to advance the epoch every this many operations.
    pub epoch_advance_threshold: usize,
    /// Never free retired objects before the structure is dropped. Required
    /// for history inspection.
    pub retain_history: bool,
    /// Seeds the per-thread generators (skip-list levels).
    pub seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            max_threads: 64,
            wait: WaitPolicy::default(),
            timestamps: TimestampPolicy::UpdatesAdvance,
            epoch_advance_threshold: 64,
            retain_history: false,
            seed: 0x5eed,
        }
    }
}

pub struct Runtime {
    clock: GlobalClock,
    rq_table: ActiveRqTable,
    collector: Collector,
    settings: Settings,
    /// Oldest timestamp a historical query may still use: the highest cleanup
    /// threshold, or without retained history the latest retired removal.
    horizon: AtomicU64,
    cleanup_lock: Mutex<()>,
}

impl Runtime {
    pub fn new(settings: Settings) -> Self {
        assert!(settings.max_threads > 0, "max_threads must be positive");
        Runtime {
            clock: GlobalClock::new(),
            rq_table: ActiveRqTable::new(settings.max_threads),
            collector: Collector::new(
                settings.max_threads,
                settings.epoch_advance_threshold,
                settings.retain_history,
            ),
            horizon: AtomicU64::new(0),
            cleanup_lock: Mutex::new(()),
            settings,
        }
    }

    pub fn clock(&self) -> &GlobalClock {
        &self.clock
    }

    pub fn rq_table(&self) -> &ActiveRqTable {
        &self.rq_table
    }

    pub fn collector(&self) -> &Collector {
        &self.collector
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn wait(&self) -> &WaitPolicy {
        &self.settings.wait
    }

    pub fn audit(&self) -> Arc<AllocAudit> {
        Arc::clone(self.collector.audit())
    }

    /// Registers the calling thread. Its generator stream is its slot index.
    pub fn register(&self) -> Result<ThreadHandle<'_>, Error> {
        self.register_inner(None)
    }

    /// Registers the calling thread with an explicit generator stream, so
    /// that randomized choices do not depend on which slot it gets.
    pub fn register_seeded(&self, stream: u64) -> Result<ThreadHandle<'_>, Error> {
        self.register_inner(Some(stream))
    }

    fn register_inner(&self, stream: Option<u64>) -> Result<ThreadHandle<'_>, Error> {
        let local = self.collector.register().ok_or(Error::RegistryFull {
            max: self.settings.max_threads,
        })?;
        let stream = stream.unwrap_or(local.tid() as u64);
        let seed = self
            .settings
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(stream);
        Ok(ThreadHandle {
            rt: self,
            local,
            rng: RefCell::new(SmallRng::seed_from_u64(seed)),
        })
    }

    /// Oldest timestamp a live or future range query can use. Must be
    /// called pinned.
    pub fn oldest_active_ts(&self) -> Timestamp {
        self.rq_table.oldest_active(&self.clock, &self.settings.wait)
    }

    pub fn horizon(&self) -> Timestamp {
        Timestamp(self.horizon.load(Ordering::SeqCst))
    }

    pub(crate) fn raise_horizon(&self, ts: Timestamp) {
        self.horizon.fetch_max(ts.0, Ordering::SeqCst);
    }

    pub(crate) fn cleanup_lock(&self) -> MutexGuard<'_, ()> {
        self.cleanup_lock.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub(crate) fn prepare<'a, N>(
        &self,
        h: &ThreadHandle<'_>,
        targets: &[(&'a Bundle<N>, *mut N)],
    ) -> PreparedUpdate<'a, N> {
        self.collector
            .audit()
            .allocated(Some(h.tid()), 0, targets.len() as u64);
        prepare_bundles(targets, &self.clock, self.settings.timestamps, &self.settings.wait)
    }

    pub(crate) fn node_allocated(&self, h: &ThreadHandle<'_>) {
        self.collector.audit().allocated(Some(h.tid()), 1, 0);
    }

    /// Records nodes and entries that were allocated before any thread was
    /// registered (sentinels).
    pub(crate) fn sentinel_allocated(&self, nodes: u64, entries: u64) {
        self.collector.audit().allocated(None, nodes, entries);
    }

    pub(crate) fn teardown_freed(&self, t: Tally) {
        self.collector.audit().freed(None, t);
    }

    /// Fixes a snapshot for a range query: pending, clock, announce.
    pub(crate) fn begin_snapshot<'h>(&self, h: &'h ThreadHandle<'_>) -> Snapshot<'h> {
        let tid = h.tid();
        self.rq_table.set_pending(tid);
        let ts = match self.settings.timestamps {
            TimestampPolicy::UpdatesAdvance => self.clock.read(),
            TimestampPolicy::RangeQueriesAdvance => self.clock.advance_from(),
        };
        self.rq_table.announce(tid, ts);
        Snapshot { table: h.rt_table(), tid, ts }
    }

    /// Announces an explicit historical snapshot. Fails if cleanup may
    /// already have pruned the entries it needs. Serialized with cleanup
    /// passes so a pass never computes its threshold between the announce
    /// and the horizon check.
    pub(crate) fn begin_historical<'h>(
        &self,
        h: &'h ThreadHandle<'_>,
        ts: Timestamp,
    ) -> Result<Snapshot<'h>, Error> {
        let _serial = self.cleanup_lock();
        let now = self.clock.read();
        if ts > now {
            return Err(Error::FutureSnapshot { requested: ts, now });
        }
        let tid = h.tid();
        self.rq_table.set_pending(tid);
        self.rq_table.announce(tid, ts);
        let horizon = self.horizon();
        if ts < horizon {
            self.rq_table.clear(tid);
            return Err(Error::HistoryReclaimed { requested: ts, horizon });
        }
        Ok(Snapshot { table: h.rt_table(), tid, ts })
    }
}

/// An announced range-query snapshot; clears the slot on drop.
pub(crate) struct Snapshot<'h> {
    table: &'h ActiveRqTable,
    tid: usize,
    pub(crate) ts: Timestamp,
}

impl Drop for Snapshot<'_> {
    fn drop(&mut self) {
        self.table.clear(self.tid);
    }
}

/// A registered thread. Every operation on a structure takes one.
///
/// Handles are tied to the thread that created them and release their slot
/// on drop.
pub struct ThreadHandle<'r> {
    rt: &'r Runtime,
    local: LocalEpoch<'r>,
    rng: RefCell<SmallRng>,
}

impl<'r> ThreadHandle<'r> {
    pub fn tid(&self) -> usize {
        self.local.tid()
    }

    pub fn runtime(&self) -> &'r Runtime {
        self.rt
    }

    fn rt_table(&self) -> &'r ActiveRqTable {
        &self.rt.rq_table
    }

    pub fn pin(&self) -> EpochGuard<'_, 'r> {
        self.local.pin()
    }

    pub(crate) fn read_section(&self) -> ReadSection<'_, 'r> {
        self.local.read_section()
    }

    pub(crate) fn retire(&self, r: Retired) {
        self.local.retire(r)
    }

    /// Retires a node unlinked at `removed_at`. Older snapshots can still
    /// reach it through bundles, so historical queries below `removed_at` are
    /// refused from here on. The horizon is raised before the retire: a
    /// historical query that misses the raise was pinned first and keeps the
    /// node alive.
    pub(crate) fn retire_removed(&self, r: Retired, removed_at: Timestamp) {
        let rt = self.runtime();
        if !rt.settings().retain_history {
            rt.raise_horizon(removed_at);
        }
        self.local.retire(r)
    }

    /// Attempts an epoch advance and frees expired limbo entries.
    pub fn collect(&self) {
        self.local.collect()
    }

    pub fn limbo_len(&self) -> usize {
        self.local.limbo_len()
    }

    /// Geometric level in `1..=max` with p = 1/2.
    pub(crate) fn random_level(&self, max: usize) -> usize {
        let bits: u64 = self.rng.borrow_mut().gen();
        ((bits.trailing_ones() as usize) + 1).min(max)
    }

    pub(crate) fn belongs_to(&self, rt: &Runtime) -> bool {
        std::ptr::eq(self.rt, rt)
    }
}
