//! Epoch-based reclamation with per-thread limbo lists.
//!
//! Every operation runs pinned. A thread announces the global epoch when it
//! pins; the epoch advances only once every pinned thread has announced the
//! current value, and an object retired in epoch `e` is freed once the global
//! epoch reaches `e + 2`.
//!
//! The same participant slots also carry a read-side section counter used by
//! the tree's wait-for-readers barrier. Read sections are independent of
//! pinning: a thread blocked on a node lock is pinned but not inside a read
//! section, so the barrier never waits on lock holders.

use std::cell::{Cell, RefCell};
use std::marker::PhantomData;
use std::sync::atomic::{fence, AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crossbeam_utils::CachePadded;

use super::audit::{AllocAudit, Tally};
use crate::bundle::WaitPolicy;

/// A type-erased object awaiting its grace period.
pub(crate) struct Retired {
    ptr: *mut u8,
    free: unsafe fn(*mut u8) -> Tally,
}

// SAFETY: retired objects are unreachable; whichever thread frees them owns
// them exclusively. `Retired::new` requires the payload to be droppable on
// any thread.
unsafe impl Send for Retired {}

impl Retired {
    /// # Safety
    /// `ptr` must be unreachable for every thread that pins after this call,
    /// `free` must be the matching destructor for it, and the pointee must be
    /// safe to drop on another thread.
    pub(crate) unsafe fn new<T>(ptr: *mut T, free: unsafe fn(*mut T) -> Tally) -> Self {
        Retired {
            ptr: ptr.cast(),
            // SAFETY: only the pointee type differs; `free` is only ever called
            // with `ptr`, which has the original type.
            free: std::mem::transmute::<unsafe fn(*mut T) -> Tally, unsafe fn(*mut u8) -> Tally>(free),
        }
    }

    unsafe fn release(self) -> Tally {
        (self.free)(self.ptr)
    }
}

struct Slot {
    in_use: AtomicBool,
    /// `epoch << 1 | pinned`
    state: AtomicU64,
    /// Odd while the owner is inside a read section.
    read_section: AtomicU64,
}

/// Global epoch state shared by the threads of one structure.
pub struct Collector {
    epoch: CachePadded<AtomicU64>,
    slots: Box<[CachePadded<Slot>]>,
    orphans: Mutex<Vec<(u64, Retired)>>,
    audit: Arc<AllocAudit>,
    advance_threshold: usize,
    retain_history: bool,
}

impl Collector {
    pub(crate) fn new(max_threads: usize, advance_threshold: usize, retain_history: bool) -> Self {
        Collector {
            epoch: CachePadded::new(AtomicU64::new(0)),
            slots: (0..max_threads)
                .map(|_| {
                    CachePadded::new(Slot {
                        in_use: AtomicBool::new(false),
                        state: AtomicU64::new(0),
                        read_section: AtomicU64::new(0),
                    })
                })
                .collect(),
            orphans: Mutex::new(Vec::new()),
            audit: Arc::new(AllocAudit::new(max_threads)),
            advance_threshold: advance_threshold.max(1),
            retain_history,
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch.load(Ordering::SeqCst)
    }

    pub fn max_threads(&self) -> usize {
        self.slots.len()
    }

    pub fn audit(&self) -> &Arc<AllocAudit> {
        &self.audit
    }

    pub(crate) fn register(&self) -> Option<LocalEpoch<'_>> {
        let tid = self.slots.iter().position(|s| {
            s.in_use
                .compare_exchange(false, true, Ordering::AcqRel, Ordering::Relaxed)
                .is_ok()
        })?;
        self.slots[tid].state.store(0, Ordering::SeqCst);
        Some(LocalEpoch {
            collector: self,
            tid,
            depth: Cell::new(0),
            limbo: RefCell::new(Vec::new()),
            ops: Cell::new(0),
            _not_sync: PhantomData,
        })
    }

    /// Advances the global epoch if every pinned thread has announced it.
    /// Returns the epoch observed after the attempt.
    pub fn try_advance(&self) -> u64 {
        let global = self.epoch.load(Ordering::Relaxed);
        fence(Ordering::SeqCst);
        for slot in self.slots.iter() {
            if !slot.in_use.load(Ordering::Relaxed) {
                continue;
            }
            let s = slot.state.load(Ordering::Relaxed);
            if s & 1 == 1 && s >> 1 != global {
                return global;
            }
        }
        fence(Ordering::Acquire);
        match self
            .epoch
            .compare_exchange(global, global + 1, Ordering::Release, Ordering::Relaxed)
        {
            Ok(_) => global + 1,
            Err(now) => now,
        }
    }

    /// Waits until every thread that was inside a read section when this was
    /// called has left it. `me` is excluded.
    pub fn wait_for_readers(&self, me: usize, wait: &WaitPolicy) {
        fence(Ordering::SeqCst);
        let snapshot: Vec<(usize, u64)> = self
            .slots
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != me)
            .map(|(i, s)| (i, s.read_section.load(Ordering::SeqCst)))
            .filter(|(_, v)| v & 1 == 1)
            .collect();
        for (i, v) in snapshot {
            let slot = &self.slots[i];
            wait.wait_until(|| slot.read_section.load(Ordering::Acquire) != v);
        }
    }

    fn free_expired(&self, list: &mut Vec<(u64, Retired)>, global: u64, tid: Option<usize>) {
        if self.retain_history {
            return;
        }
        let mut tally = Tally::default();
        let mut i = 0;
        while i < list.len() {
            if list[i].0 + 2 <= global {
                let (_, r) = list.swap_remove(i);
                // SAFETY: two epochs have passed since retirement, so no pinned
                // thread can still hold a reference.
                tally += unsafe { r.release() };
            } else {
                i += 1;
            }
        }
        self.audit.freed(tid, tally);
    }
}

impl Drop for Collector {
    fn drop(&mut self) {
        let orphans = std::mem::take(self.orphans.get_mut().unwrap_or_else(|e| e.into_inner()));
        let mut tally = Tally::default();
        for (_, r) in orphans {
            // SAFETY: no participant outlives the collector.
            tally += unsafe { r.release() };
        }
        self.audit.freed(None, tally);
    }
}

/// A thread's participation in a [`Collector`].
pub struct LocalEpoch<'c> {
    collector: &'c Collector,
    tid: usize,
    depth: Cell<u32>,
    limbo: RefCell<Vec<(u64, Retired)>>,
    ops: Cell<usize>,
    _not_sync: PhantomData<*mut ()>,
}

impl<'c> LocalEpoch<'c> {
    pub fn tid(&self) -> usize {
        self.tid
    }

    pub fn collector(&self) -> &'c Collector {
        self.collector
    }

    /// Announces the current epoch. Nested pins are counted.
    pub fn pin(&self) -> EpochGuard<'_, 'c> {
        let d = self.depth.get();
        if d == 0 {
            let slot = &self.collector.slots[self.tid];
            let e = self.collector.epoch.load(Ordering::Relaxed);
            slot.state.store(e << 1 | 1, Ordering::Relaxed);
            fence(Ordering::SeqCst);
        }
        self.depth.set(d + 1);
        EpochGuard { local: self }
    }

    pub fn is_pinned(&self) -> bool {
        self.depth.get() > 0
    }

    fn unpin(&self) {
        let d = self.depth.get();
        debug_assert!(d > 0, "unbalanced epoch exit");
        self.depth.set(d - 1);
        if d == 1 {
            let slot = &self.collector.slots[self.tid];
            let s = slot.state.load(Ordering::Relaxed);
            slot.state.store(s & !1, Ordering::Release);
            let n = self.ops.get() + 1;
            self.ops.set(n);
            if n.is_multiple_of(self.collector.advance_threshold) {
                self.collect();
            }
        }
    }

    /// Hands an unlinked object to the collector.
    pub(crate) fn retire(&self, r: Retired) {
        let e = self.collector.epoch.load(Ordering::SeqCst);
        self.limbo.borrow_mut().push((e, r));
    }

    /// Tries to advance the epoch, then frees whatever in this thread's limbo
    /// list (and the orphan list, if uncontended) has expired.
    pub fn collect(&self) {
        let global = self.collector.try_advance();
        self.collector
            .free_expired(&mut self.limbo.borrow_mut(), global, Some(self.tid));
        if let Ok(mut orphans) = self.collector.orphans.try_lock() {
            self.collector.free_expired(&mut orphans, global, Some(self.tid));
        }
    }

    pub fn limbo_len(&self) -> usize {
        self.limbo.borrow().len()
    }

    /// Marks the start of a read section for [`Collector::wait_for_readers`].
    pub fn read_section(&self) -> ReadSection<'_, 'c> {
        let slot = &self.collector.slots[self.tid];
        let v = slot.read_section.load(Ordering::Relaxed);
        debug_assert_eq!(v & 1, 0, "nested read section");
        slot.read_section.store(v + 1, Ordering::Relaxed);
        fence(Ordering::SeqCst);
        ReadSection { local: self }
    }
}

impl Drop for LocalEpoch<'_> {
    fn drop(&mut self) {
        debug_assert_eq!(self.depth.get(), 0, "participant dropped while pinned");
        let limbo = std::mem::take(self.limbo.get_mut());
        if !limbo.is_empty() {
            self.collector
                .orphans
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .extend(limbo);
        }
        let slot = &self.collector.slots[self.tid];
        slot.state.store(0, Ordering::SeqCst);
        slot.in_use.store(false, Ordering::Release);
    }
}

/// Keeps the owning thread pinned.
pub struct EpochGuard<'l, 'c> {
    local: &'l LocalEpoch<'c>,
}

impl Drop for EpochGuard<'_, '_> {
    fn drop(&mut self) {
        self.local.unpin();
    }
}

pub struct ReadSection<'l, 'c> {
    local: &'l LocalEpoch<'c>,
}

impl Drop for ReadSection<'_, '_> {
    fn drop(&mut self) {
        let slot = &self.local.collector.slots[self.local.tid];
        let v = slot.read_section.load(Ordering::Relaxed);
        slot.read_section.store(v + 1, Ordering::Release);
    }
}
