//! The global logical clock that totally orders updates.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use crossbeam_utils::CachePadded;

/// A logical timestamp. Dimensionless ticks of the global clock.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub u64);

/// Reserved value marking a bundle entry whose update has not been finalized.
pub const PENDING_TS: Timestamp = Timestamp(u64::MAX);

/// Snapshot used by `contains`: larger than every finalized timestamp, so each
/// dereference follows the newest entry of a bundle.
pub const CONTAINS_TS: Timestamp = Timestamp(u64::MAX - 1);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    #[inline]
    pub fn is_pending(self) -> bool {
        self == PENDING_TS
    }

    #[inline]
    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_pending() {
            f.write_str("pending")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Monotonic 64-bit counter on its own cache line.
///
/// `advance` is the linearization point of an update in the default policy;
/// `read` fixes the snapshot of a range query.
pub struct GlobalClock {
    now: CachePadded<AtomicU64>,
}

impl GlobalClock {
    pub fn new() -> Self {
        Self::starting_at(Timestamp::ZERO)
    }

    pub fn starting_at(ts: Timestamp) -> Self {
        assert!(ts < CONTAINS_TS, "clock cannot start at a reserved timestamp");
        GlobalClock {
            now: CachePadded::new(AtomicU64::new(ts.0)),
        }
    }

    /// Current value. Never returns a reserved timestamp.
    #[inline]
    pub fn read(&self) -> Timestamp {
        Timestamp(self.now.load(Ordering::SeqCst))
    }

    /// Atomically increments the clock and returns the post-increment value.
    ///
    /// Panics if the counter would reach the reserved range.
    #[inline]
    pub fn advance(&self) -> Timestamp {
        let prev = self.now.fetch_add(1, Ordering::SeqCst);
        let next = prev + 1;
        if next >= CONTAINS_TS.0 {
            panic!("global clock overflow");
        }
        Timestamp(next)
    }

    /// Atomically increments the clock and returns the pre-increment value.
    /// Used by range queries when they own the clock.
    #[inline]
    pub(crate) fn advance_from(&self) -> Timestamp {
        let prev = self.now.fetch_add(1, Ordering::SeqCst);
        if prev + 1 >= CONTAINS_TS.0 {
            panic!("global clock overflow");
        }
        Timestamp(prev)
    }
}

impl Default for GlobalClock {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for GlobalClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GlobalClock").field("now", &self.read()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::sync::Arc;

    #[test]
    fn fresh_clock_reads_zero() {
        assert_eq!(GlobalClock::new().read(), Timestamp(0));
    }

    #[test]
    fn advance_returns_post_increment() {
        let c = GlobalClock::new();
        assert_eq!(c.advance(), Timestamp(1));
        let c = GlobalClock::starting_at(Timestamp(41));
        assert_eq!(c.advance(), Timestamp(42));
        assert_eq!(c.read(), Timestamp(42));
    }

    #[test]
    fn advance_from_returns_previous() {
        let c = GlobalClock::starting_at(Timestamp(7));
        assert_eq!(c.advance_from(), Timestamp(7));
        assert_eq!(c.read(), Timestamp(8));
    }

    #[test]
    #[should_panic(expected = "overflow")]
    fn overflow_is_fatal() {
        let c = GlobalClock::starting_at(Timestamp(u64::MAX - 2));
        c.advance();
    }

    #[test]
    fn concurrent_advances_are_contiguous_and_unique() {
        let clock = Arc::new(GlobalClock::new());
        let threads = 4;
        let per = 5_000;
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                let clock = Arc::clone(&clock);
                std::thread::spawn(move || (0..per).map(|_| clock.advance().0).collect::<Vec<_>>())
            })
            .collect();
        let mut seen = HashSet::new();
        for h in handles {
            for v in h.join().unwrap() {
                assert!(seen.insert(v), "duplicate timestamp {v}");
            }
        }
        let n = (threads * per) as u64;
        assert_eq!(clock.read(), Timestamp(n));
        assert_eq!(seen, (1..=n).collect::<HashSet<_>>());
    }

    #[test]
    fn two_advances_from_same_point_split_values() {
        let clock = Arc::new(GlobalClock::starting_at(Timestamp(10)));
        let barrier = Arc::new(std::sync::Barrier::new(2));
        let hs: Vec<_> = (0..2)
            .map(|_| {
                let (c, b) = (Arc::clone(&clock), Arc::clone(&barrier));
                std::thread::spawn(move || {
                    b.wait();
                    c.advance().0
                })
            })
            .collect();
        let mut got: Vec<u64> = hs.into_iter().map(|h| h.join().unwrap()).collect();
        got.sort_unstable();
        assert_eq!(got, vec![11, 12]);
    }
}
