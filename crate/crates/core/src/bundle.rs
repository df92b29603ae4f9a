//! Bundled references: per-link version lists.
//!
//! A [`Bundle`] shadows one link of a node. Each [`BundleEntry`] records a
//! value the link held and the timestamp at which it was installed, newest
//! first. An update brackets its critical section with [`prepare_bundles`]
//! (install pending entries, take a timestamp) and
//! [`PreparedUpdate::finalize`] (stamp the entries). Readers use
//! [`Bundle::dereference`] to follow the link as it was at a given timestamp.
//!
//! Memory-ordering contract: installing and finalizing an entry are
//! release-publications, reading a head and its timestamp are acquire-reads,
//! and the clock step is sequentially consistent.

use std::hint;
use std::ptr::{self, NonNull};
use std::sync::atomic::{AtomicPtr, AtomicU64, Ordering};
use std::thread;

use smallvec::SmallVec;

use crate::clock::{GlobalClock, Timestamp, PENDING_TS};

/// How a thread waits on a pending entry: spin `spin_budget` times, then
/// yield on every further check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WaitPolicy {
    pub spin_budget: u32,
}

impl Default for WaitPolicy {
    fn default() -> Self {
        WaitPolicy { spin_budget: 100 }
    }
}

impl WaitPolicy {
    #[inline]
    pub fn wait_until(&self, mut done: impl FnMut() -> bool) {
        let mut spins = 0u32;
        while !done() {
            if spins < self.spin_budget {
                spins += 1;
                hint::spin_loop();
            } else {
                thread::yield_now();
            }
        }
    }
}

/// Which operations move the global clock.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TimestampPolicy {
    /// Every update increments the clock; entries carry unique timestamps.
    #[default]
    UpdatesAdvance,
    /// Range queries increment the clock when taking their snapshot and
    /// updates stamp entries with the current value. Timestamps may repeat.
    RangeQueriesAdvance,
}

/// One recorded value of a link.
pub struct BundleEntry<N> {
    target: *mut N,
    ts: AtomicU64,
    next: AtomicPtr<BundleEntry<N>>,
}

impl<N> BundleEntry<N> {
    fn alloc(target: *mut N, ts: Timestamp) -> NonNull<Self> {
        let b = Box::new(BundleEntry {
            target,
            ts: AtomicU64::new(ts.0),
            next: AtomicPtr::new(ptr::null_mut()),
        });
        // SAFETY: Box::into_raw never returns null.
        unsafe { NonNull::new_unchecked(Box::into_raw(b)) }
    }

    #[inline]
    pub fn target(&self) -> *mut N {
        self.target
    }

    #[inline]
    pub fn timestamp(&self) -> Timestamp {
        Timestamp(self.ts.load(Ordering::Acquire))
    }

    pub(crate) fn next_raw(&self) -> *mut BundleEntry<N> {
        self.next.load(Ordering::Acquire)
    }
}

/// Frees a detached chain of entries and returns how many were freed.
///
/// # Safety
/// `head` must be null or the exclusively owned start of a chain that no
/// thread can reach anymore.
pub(crate) unsafe fn free_chain<N>(mut head: *mut BundleEntry<N>) -> u64 {
    let mut freed = 0;
    while !head.is_null() {
        let entry = Box::from_raw(head);
        head = entry.next.load(Ordering::Relaxed);
        freed += 1;
    }
    freed
}

/// The version list shadowing one link.
pub struct Bundle<N> {
    head: AtomicPtr<BundleEntry<N>>,
}

impl<N> Bundle<N> {
    /// A bundle holding a single finalized entry with timestamp 0. Used for
    /// links that exist when a structure is constructed.
    pub fn new(initial_target: *mut N) -> Self {
        Bundle {
            head: AtomicPtr::new(BundleEntry::alloc(initial_target, Timestamp::ZERO).as_ptr()),
        }
    }

    /// A bundle with no entries, for nodes that are still private to the
    /// inserting thread. It must be prepared before the node is published.
    pub fn empty() -> Self {
        Bundle {
            head: AtomicPtr::new(ptr::null_mut()),
        }
    }

    /// Head entry's target and timestamp (possibly [`PENDING_TS`]). Does not
    /// wait.
    ///
    /// # Panics
    /// If the bundle has never been prepared.
    pub fn newest(&self) -> (*mut N, Timestamp) {
        let head = self.head.load(Ordering::Acquire);
        assert!(!head.is_null(), "bundle has no entries");
        // SAFETY: published entries stay allocated while the owner node is
        // reachable by the caller, and the head entry is never retired.
        let head = unsafe { &*head };
        (head.target, head.timestamp())
    }

    /// Follows the link as of `ts`: waits while the head is pending, then
    /// returns the target of the newest entry with timestamp `<= ts`.
    ///
    /// # Panics
    /// If no entry satisfies `ts`, which means reclamation pruned history a
    /// live reader still needed.
    #[inline]
    pub fn dereference(&self, ts: Timestamp, wait: &WaitPolicy) -> *mut N {
        match self.try_dereference(ts, wait) {
            Some(t) => t,
            None => panic!("no bundle entry satisfies timestamp {ts}"),
        }
    }

    /// Like [`Bundle::dereference`] but reports a missing entry as `None`.
    pub fn try_dereference(&self, ts: Timestamp, wait: &WaitPolicy) -> Option<*mut N> {
        debug_assert!(ts < PENDING_TS);
        let mut entry = self.head.load(Ordering::Acquire);
        if entry.is_null() {
            return None;
        }
        // SAFETY: see `newest`; older entries are retired only once no
        // announced snapshot can need them, and the epoch guard held by the
        // caller keeps retired entries allocated.
        unsafe {
            let head = &*entry;
            if head.ts.load(Ordering::Acquire) == PENDING_TS.0 {
                wait.wait_until(|| head.ts.load(Ordering::Acquire) != PENDING_TS.0);
            }
            while !entry.is_null() {
                let e = &*entry;
                if e.ts.load(Ordering::Acquire) <= ts.0 {
                    return Some(e.target);
                }
                entry = e.next.load(Ordering::Acquire);
            }
        }
        None
    }

    /// Snapshot of all entries, newest first.
    pub fn entries(&self) -> Vec<(*mut N, Timestamp)> {
        let mut out = Vec::new();
        let mut entry = self.head.load(Ordering::Acquire);
        while !entry.is_null() {
            // SAFETY: as for `try_dereference`.
            let e = unsafe { &*entry };
            out.push((e.target, e.timestamp()));
            entry = e.next.load(Ordering::Acquire);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries().len()
    }

    pub fn is_empty(&self) -> bool {
        self.head.load(Ordering::Acquire).is_null()
    }

    /// Detaches every entry older than the newest entry whose timestamp is
    /// `<= threshold`, returning the detached chain. The head entry is never
    /// detached.
    ///
    /// Must not run concurrently with itself on the same bundle.
    pub(crate) fn detach_outdated(&self, threshold: Timestamp) -> Option<NonNull<BundleEntry<N>>> {
        let mut entry = self.head.load(Ordering::Acquire);
        while !entry.is_null() {
            // SAFETY: as for `try_dereference`.
            let e = unsafe { &*entry };
            let ts = e.ts.load(Ordering::Acquire);
            if ts != PENDING_TS.0 && ts <= threshold.0 {
                return NonNull::new(e.next.swap(ptr::null_mut(), Ordering::AcqRel));
            }
            entry = e.next.load(Ordering::Acquire);
        }
        None
    }

    fn install_pending(&self, entry: NonNull<BundleEntry<N>>, wait: &WaitPolicy) {
        let new = entry.as_ptr();
        loop {
            let cur = self.head.load(Ordering::Acquire);
            if !cur.is_null() {
                // SAFETY: head entries are never retired.
                let cur_ref = unsafe { &*cur };
                if cur_ref.ts.load(Ordering::Acquire) == PENDING_TS.0 {
                    wait.wait_until(|| {
                        cur_ref.ts.load(Ordering::Acquire) != PENDING_TS.0
                            || self.head.load(Ordering::Acquire) != cur
                    });
                    continue;
                }
            }
            // SAFETY: `new` is still private to this thread.
            unsafe { (*new).next.store(cur, Ordering::Relaxed) };
            if self
                .head
                .compare_exchange(cur, new, Ordering::AcqRel, Ordering::Acquire)
                .is_ok()
            {
                return;
            }
        }
    }
}

impl<N> Drop for Bundle<N> {
    fn drop(&mut self) {
        // SAFETY: dropping the bundle means its owner node is unreachable.
        unsafe { free_chain(*self.head.get_mut()) };
    }
}

impl<N> Bundle<N> {
    /// Frees the chain and reports how many entries it held.
    pub(crate) fn free_entries(&mut self) -> u64 {
        let head = std::mem::replace(self.head.get_mut(), ptr::null_mut());
        // SAFETY: `&mut self` proves exclusive access.
        unsafe { free_chain(head) }
    }
}

type Installed<'a, N> = (&'a Bundle<N>, NonNull<BundleEntry<N>>);

/// An update whose bundles hold pending entries. Finalize it after the
/// critical section that changes the original links.
#[must_use = "pending entries block readers until finalized"]
pub struct PreparedUpdate<'a, N> {
    installed: SmallVec<[Installed<'a, N>; 6]>,
    ts: Timestamp,
}

impl<'a, N> PreparedUpdate<'a, N> {
    /// The update's linearization timestamp.
    pub fn timestamp(&self) -> Timestamp {
        self.ts
    }

    pub fn entries_installed(&self) -> usize {
        self.installed.len()
    }

    /// Stamps every pending entry with the update's timestamp.
    pub fn finalize(self) {
        finalize_bundles(&self.installed, self.ts)
    }
}

fn finalize_bundles<N>(installed: &[(&Bundle<N>, NonNull<BundleEntry<N>>)], ts: Timestamp) {
    for (bundle, entry) in installed {
        debug_assert_eq!(
            bundle.head.load(Ordering::Relaxed),
            entry.as_ptr(),
            "finalizing a bundle whose head is not this update's entry"
        );
        // SAFETY: the entry is the pending head installed by this update.
        let e = unsafe { entry.as_ref() };
        debug_assert_eq!(e.ts.load(Ordering::Relaxed), PENDING_TS.0);
        e.ts.store(ts.0, Ordering::Release);
    }
}

/// Installs one pending entry per `(bundle, new target)` pair, in order, then
/// takes the update's timestamp.
///
/// The caller must hold every lock its operation needs, and each bundle must
/// belong to a node it has locked or that is still private.
pub fn prepare_bundles<'a, N>(
    targets: &[(&'a Bundle<N>, *mut N)],
    clock: &GlobalClock,
    policy: TimestampPolicy,
    wait: &WaitPolicy,
) -> PreparedUpdate<'a, N> {
    let mut installed = SmallVec::new();
    for &(bundle, target) in targets {
        let entry = BundleEntry::alloc(target, PENDING_TS);
        bundle.install_pending(entry, wait);
        installed.push((bundle, entry));
    }
    let ts = match policy {
        TimestampPolicy::UpdatesAdvance => clock.advance(),
        TimestampPolicy::RangeQueriesAdvance => clock.read(),
    };
    PreparedUpdate { installed, ts }
}
