use std::ptr::NonNull;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use super::{Retired, Tally};
use crate::bundle::{free_chain, Bundle, BundleEntry};
use crate::clock::Timestamp;
use crate::runtime::ThreadHandle;
use crate::set::RangeSet;

/// Outcome of one cleanup pass over a structure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CleanupStats {
    pub threshold: Timestamp,
    pub bundles_visited: u64,
    pub entries_retired: u64,
}

unsafe fn free_entry_chain<N>(head: *mut BundleEntry<N>) -> Tally {
    Tally { nodes: 0, entries: free_chain(head) }
}

fn chain_len<N>(head: NonNull<BundleEntry<N>>) -> u64 {
    let mut n = 0;
    let mut p = head.as_ptr();
    while !p.is_null() {
        n += 1;
        // SAFETY: the chain is detached and owned by the caller.
        p = unsafe { (*p).next_raw() };
    }
    n
}

/// Detaches the entries of `bundle` that no snapshot at or after `threshold`
/// can reach and retires them. Caller is pinned and holds the cleanup lock.
pub(crate) fn prune_bundle<N>(
    h: &ThreadHandle<'_>,
    bundle: &Bundle<N>,
    threshold: Timestamp,
    stats: &mut CleanupStats,
) {
    stats.bundles_visited += 1;
    if let Some(chain) = bundle.detach_outdated(threshold) {
        stats.entries_retired += chain_len(chain);
        // SAFETY: the chain is unreachable from the bundle; pinned readers
        // that already hold pointers into it are covered by the epoch rule.
        h.retire(unsafe { Retired::new(chain.as_ptr(), free_entry_chain::<N>) });
    }
}

/// What a background cleaner did over its lifetime.
#[derive(Clone, Debug, Default)]
pub struct CleanerReport {
    pub passes: u64,
    pub entries_retired: u64,
    /// Retirement threshold of every pass, in order.
    pub thresholds: Vec<Timestamp>,
}

impl CleanerReport {
    pub fn thresholds_monotonic(&self) -> bool {
        self.thresholds.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Body of the background cleanup thread: runs a pass every `interval` until
/// `stop` is set, then one final pass.
///
/// Registers its own thread handle, so the structure's `max_threads` must
/// leave room for it.
pub fn run_cleaner<V, S: RangeSet<V> + ?Sized>(
    set: &S,
    stop: &AtomicBool,
    interval: Duration,
) -> CleanerReport {
    let h = set
        .runtime()
        .register()
        .expect("no thread slot left for the cleaner");
    let mut report = CleanerReport::default();
    let pass = |report: &mut CleanerReport| {
        let s = set.cleanup_pass(&h);
        report.passes += 1;
        report.entries_retired += s.entries_retired;
        report.thresholds.push(s.threshold);
        h.collect();
    };
    let slice = Duration::from_millis(1).min(interval);
    while !stop.load(Ordering::Acquire) {
        let due = Instant::now() + interval;
        while Instant::now() < due && !stop.load(Ordering::Acquire) {
            std::thread::sleep(slice);
        }
        pass(&mut report);
    }
    pass(&mut report);
    report
}
