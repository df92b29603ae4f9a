use std::sync::atomic::{AtomicU64, Ordering};

use crossbeam_utils::CachePadded;

use crate::bundle::WaitPolicy;
use crate::clock::{GlobalClock, Timestamp};

const INACTIVE: u64 = u64::MAX;
const PENDING: u64 = u64::MAX - 1;

/// State of one thread's announcement slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RqSlot {
    Inactive,
    /// The owner is between reading the clock and announcing what it read.
    Pending,
    Active(Timestamp),
}

struct SlotCell {
    value: AtomicU64,
    writes: AtomicU64,
}

/// Per-thread announcements of in-flight range-query snapshots.
///
/// Cleanup reads the clock first and then scans the slots; a query that sets
/// its slot pending after being scanned reads the clock later and therefore
/// cannot hold a snapshot older than the scan's result.
pub struct ActiveRqTable {
    slots: Box<[CachePadded<SlotCell>]>,
}

impl ActiveRqTable {
    pub fn new(threads: usize) -> Self {
        ActiveRqTable {
            slots: (0..threads)
                .map(|_| {
                    CachePadded::new(SlotCell {
                        value: AtomicU64::new(INACTIVE),
                        writes: AtomicU64::new(0),
                    })
                })
                .collect(),
        }
    }

    pub fn set_pending(&self, tid: usize) {
        let s = &self.slots[tid];
        s.writes.fetch_add(1, Ordering::Relaxed);
        s.value.store(PENDING, Ordering::SeqCst);
    }

    pub fn announce(&self, tid: usize, ts: Timestamp) {
        debug_assert!(ts.0 < PENDING);
        let s = &self.slots[tid];
        debug_assert_eq!(s.value.load(Ordering::Relaxed), PENDING);
        s.value.store(ts.0, Ordering::SeqCst);
    }

    pub fn clear(&self, tid: usize) {
        self.slots[tid].value.store(INACTIVE, Ordering::Release);
    }

    pub fn get(&self, tid: usize) -> RqSlot {
        decode(self.slots[tid].value.load(Ordering::SeqCst))
    }

    /// Number of times `tid` has set its slot pending.
    pub fn writes(&self, tid: usize) -> u64 {
        self.slots[tid].writes.load(Ordering::Relaxed)
    }

    pub fn total_writes(&self) -> u64 {
        (0..self.slots.len()).map(|t| self.writes(t)).sum()
    }

    /// Oldest snapshot any range query may still use: the minimum announced
    /// timestamp, or the current clock value when nothing is active. Waits out
    /// pending slots.
    pub fn oldest_active(&self, clock: &GlobalClock, wait: &WaitPolicy) -> Timestamp {
        let mut oldest = clock.read();
        for s in self.slots.iter() {
            let mut v = s.value.load(Ordering::SeqCst);
            if v == PENDING {
                wait.wait_until(|| {
                    v = s.value.load(Ordering::SeqCst);
                    v != PENDING
                });
            }
            if let RqSlot::Active(ts) = decode(v) {
                oldest = oldest.min(ts);
            }
        }
        oldest
    }
}

fn decode(v: u64) -> RqSlot {
    match v {
        INACTIVE => RqSlot::Inactive,
        PENDING => RqSlot::Pending,
        ts => RqSlot::Active(Timestamp(ts)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicBool;
    use std::time::Duration;

    #[test]
    fn minimum_of_announced() {
        let t = ActiveRqTable::new(3);
        let clock = GlobalClock::starting_at(Timestamp(20));
        for (tid, ts) in [(0, 3), (1, 7)] {
            t.set_pending(tid);
            t.announce(tid, Timestamp(ts));
        }
        assert_eq!(t.oldest_active(&clock, &WaitPolicy::default()), Timestamp(3));
        t.clear(0);
        assert_eq!(t.oldest_active(&clock, &WaitPolicy::default()), Timestamp(7));
    }

    #[test]
    fn no_active_queries_yields_clock() {
        let t = ActiveRqTable::new(3);
        let clock = GlobalClock::starting_at(Timestamp(12));
        assert_eq!(t.oldest_active(&clock, &WaitPolicy::default()), Timestamp(12));
        assert_eq!(t.get(2), RqSlot::Inactive);
    }

    #[test]
    fn cleanup_waits_on_pending_slot() {
        let t = ActiveRqTable::new(2);
        let clock = GlobalClock::starting_at(Timestamp(30));
        t.set_pending(1);
        assert_eq!(t.get(1), RqSlot::Pending);
        let done = AtomicBool::new(false);
        std::thread::scope(|s| {
            let h = s.spawn(|| {
                let r = t.oldest_active(&clock, &WaitPolicy::default());
                done.store(true, Ordering::SeqCst);
                r
            });
            std::thread::sleep(Duration::from_millis(40));
            assert!(!done.load(Ordering::SeqCst));
            t.announce(1, Timestamp(7));
            assert_eq!(h.join().unwrap(), Timestamp(7));
        });
        assert_eq!(t.writes(1), 1);
    }
}
