//! Bundled lazy skip list. Only the data layer (level 0) carries bundles;
//! index layers are plain links used to reach a range's predecessor quickly.

use std::collections::{HashSet, VecDeque};
use std::ptr;
use std::sync::atomic::{AtomicBool, AtomicPtr, Ordering};

use smallvec::SmallVec;

use crate::bundle::Bundle;
use crate::clock::{Timestamp, CONTAINS_TS};
use crate::lock::{NodeGuard, NodeLock};
use crate::reclamation::{prune_bundle, CleanupStats, Retired, Tally};
use crate::runtime::{Runtime, Settings, ThreadHandle};
use crate::set::{check_key, BundleView, Key, NodeRef, RangeQuery, RangeSet, StructureKind};
use crate::Error;

/// Default height cap.
pub const MAX_LEVEL: usize = 20;

struct Node<V> {
    key: Key,
    value: Option<V>,
    lock: NodeLock,
    deleted: AtomicBool,
    fully_linked: AtomicBool,
    next: Box<[AtomicPtr<Node<V>>]>,
    bundle: Bundle<Node<V>>,
}

impl<V> Node<V> {
    fn alloc(key: Key, value: Option<V>, succs: &[*mut Node<V>], bundle: Bundle<Node<V>>) -> *mut Node<V> {
        Box::into_raw(Box::new(Node {
            key,
            value,
            lock: NodeLock::new(),
            deleted: AtomicBool::new(false),
            fully_linked: AtomicBool::new(false),
            next: succs.iter().map(|&s| AtomicPtr::new(s)).collect(),
            bundle,
        }))
    }

    fn levels(&self) -> usize {
        self.next.len()
    }
}

unsafe fn free_node<V>(n: *mut Node<V>) -> Tally {
    let mut node = Box::from_raw(n);
    Tally { nodes: 1, entries: node.bundle.free_entries() }
}

type Path<V> = [*mut Node<V>; MAX_LEVEL];

/// A lazy skip list whose data layer is bundled.
///
/// Node heights are geometric with p = 1/2, drawn from the calling thread's
/// seeded generator and capped at the list's level limit.
pub struct BundledSkipList<V> {
    rt: Runtime,
    levels: usize,
    head: *mut Node<V>,
    tail: *mut Node<V>,
}

// SAFETY: as for `BundledList`.
unsafe impl<V: Send + Sync> Send for BundledSkipList<V> {}
unsafe impl<V: Send + Sync> Sync for BundledSkipList<V> {}

impl<V> BundledSkipList<V> {
    pub fn new() -> Self {
        Self::with_max_level(Settings::default(), MAX_LEVEL)
    }

    /// A list whose nodes have at most `levels` layers. With `levels == 1`
    /// every traversal walks the data layer.
    pub fn with_max_level(settings: Settings, levels: usize) -> Self {
        assert!((1..=MAX_LEVEL).contains(&levels), "levels must be in 1..={MAX_LEVEL}");
        let rt = Runtime::new(settings);
        let tail = Node::alloc(i64::MAX, None, &vec![ptr::null_mut(); levels], Bundle::empty());
        let head = Node::alloc(i64::MIN, None, &vec![tail; levels], Bundle::new(tail));
        rt.sentinel_allocated(2, 1);
        BundledSkipList { rt, levels, head, tail }
    }

    pub fn max_level(&self) -> usize {
        self.levels
    }

    /// Heights of the nodes currently linked at the data layer.
    pub fn node_heights(&self, h: &ThreadHandle<'_>) -> Vec<usize> {
        self.check_handle(h);
        let _pin = h.pin();
        let mut out = Vec::new();
        // SAFETY: pinned.
        unsafe {
            let mut curr = (*self.head).next[0].load(Ordering::Acquire);
            while curr != self.tail {
                out.push((*curr).levels());
                curr = (*curr).next[0].load(Ordering::Acquire);
            }
        }
        out
    }

    fn label(&self, n: *mut Node<V>) -> NodeRef {
        if n == self.head {
            NodeRef::Head
        } else if n == self.tail {
            NodeRef::Tail
        } else {
            // SAFETY: callers pass nodes reached while pinned.
            NodeRef::Key(unsafe { (*n).key })
        }
    }

    fn check_handle(&self, h: &ThreadHandle<'_>) {
        assert!(h.belongs_to(&self.rt), "thread handle registered with another structure");
    }

    /// Per-level predecessors and successors of `key` and the highest level
    /// at which `key` was found. Caller is pinned.
    unsafe fn find(&self, key: Key, preds: &mut Path<V>, succs: &mut Path<V>) -> Option<usize> {
        let mut found = None;
        let mut pred = self.head;
        for level in (0..self.levels).rev() {
            let mut curr = (*pred).next[level].load(Ordering::Acquire);
            while (*curr).key < key {
                pred = curr;
                curr = (*curr).next[level].load(Ordering::Acquire);
            }
            if found.is_none() && (*curr).key == key {
                found = Some(level);
            }
            preds[level] = pred;
            succs[level] = curr;
        }
        found
    }

    /// Data-layer node with the largest key `< key`, descending through the
    /// index layers. Caller is pinned.
    unsafe fn data_pred(&self, key: Key) -> *mut Node<V> {
        let mut pred = self.head;
        for level in (0..self.levels).rev() {
            let mut curr = (*pred).next[level].load(Ordering::Acquire);
            while (*curr).key < key {
                pred = curr;
                curr = (*curr).next[level].load(Ordering::Acquire);
            }
        }
        pred
    }

    /// Enter-range and collect-range over data-layer bundles. Caller is
    /// pinned.
    unsafe fn collect(&self, start: *mut Node<V>, low: Key, high: Key, ts: Timestamp) -> (Vec<(Key, V)>, u64)
    where
        V: Clone,
    {
        let wait = self.rt.wait();
        let mut curr = (*start).bundle.dereference(ts, wait);
        let mut derefs = 1;
        while (*curr).key < low {
            curr = (*curr).bundle.dereference(ts, wait);
            derefs = 1;
        }
        let mut items = Vec::new();
        while (*curr).key <= high {
            items.push(((*curr).key, (*curr).value.clone().expect("sentinel in range")));
            curr = (*curr).bundle.dereference(ts, wait);
            derefs += 1;
        }
        (items, derefs)
    }

    /// Locks `preds[0..height]` bottom-up, skipping repeats, and checks that
    /// each still links to `succs` at its level. `succ_live` additionally
    /// requires the successors to be unmarked.
    unsafe fn lock_preds(
        &self,
        preds: &Path<V>,
        succs: &Path<V>,
        height: usize,
        succ_live: bool,
    ) -> Option<SmallVec<[NodeGuard<'static>; 8]>> {
        let mut guards = SmallVec::new();
        let mut prev = ptr::null_mut();
        for level in 0..height {
            let (pred, succ) = (preds[level], succs[level]);
            if pred != prev {
                guards.push((*pred).lock.lock());
                prev = pred;
            }
            let valid = !(*pred).deleted.load(Ordering::Acquire)
                && (!succ_live || !(*succ).deleted.load(Ordering::Acquire))
                && (*pred).next[level].load(Ordering::Acquire) == succ;
            if !valid {
                return None;
            }
        }
        Some(guards)
    }
}

impl<V> Default for BundledSkipList<V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<V: Clone + Send + Sync> RangeSet<V> for BundledSkipList<V> {
    fn with_settings(settings: Settings) -> Self {
        Self::with_max_level(settings, MAX_LEVEL)
    }

    fn kind(&self) -> StructureKind {
        StructureKind::SkipList
    }

    fn runtime(&self) -> &Runtime {
        &self.rt
    }

    fn insert_ts(&self, h: &ThreadHandle<'_>, key: Key, value: V) -> Option<Timestamp> {
        check_key(key);
        self.check_handle(h);
        let height = h.random_level(self.levels);
        let _pin = h.pin();
        let mut value = Some(value);
        let mut preds: Path<V> = [ptr::null_mut(); MAX_LEVEL];
        let mut succs: Path<V> = [ptr::null_mut(); MAX_LEVEL];
        loop {
            // SAFETY: pinned; nodes reached through links stay allocated.
            unsafe {
                if let Some(level) = self.find(key, &mut preds, &mut succs) {
                    let found = succs[level];
                    if !(*found).deleted.load(Ordering::Acquire) {
                        self.rt
                            .wait()
                            .wait_until(|| (*found).fully_linked.load(Ordering::Acquire));
                        return None;
                    }
                    continue;
                }
                let Some(_guards) = self.lock_preds(&preds, &succs, height, true) else {
                    continue;
                };
                let node = Node::alloc(key, value.take(), &succs[..height], Bundle::empty());
                self.rt.node_allocated(h);
                let prep = self
                    .rt
                    .prepare(h, &[(&(*node).bundle, succs[0]), (&(*preds[0]).bundle, node)]);
                for (level, &pred) in preds.iter().enumerate().take(height) {
                    (*pred).next[level].store(node, Ordering::Release);
                }
                (*node).fully_linked.store(true, Ordering::Release);
                let ts = prep.timestamp();
                prep.finalize();
                return Some(ts);
            }
        }
    }

    fn remove_ts(&self, h: &ThreadHandle<'_>, key: Key) -> Option<Timestamp> {
        check_key(key);
        self.check_handle(h);
        let _pin = h.pin();
        let mut preds: Path<V> = [ptr::null_mut(); MAX_LEVEL];
        let mut succs: Path<V> = [ptr::null_mut(); MAX_LEVEL];
        let mut victim: *mut Node<V> = ptr::null_mut();
        let mut victim_guard: Option<NodeGuard<'static>> = None;
        loop {
            // SAFETY: pinned; see `insert_ts`.
            unsafe {
                let found = self.find(key, &mut preds, &mut succs);
                if victim.is_null() {
                    let level = found?;
                    let cand = succs[level];
                    if (*cand).deleted.load(Ordering::Acquire) {
                        return None;
                    }
                    if !(*cand).fully_linked.load(Ordering::Acquire) {
                        self.rt
                            .wait()
                            .wait_until(|| (*cand).fully_linked.load(Ordering::Acquire));
                        continue;
                    }
                    if (*cand).levels() != level + 1 {
                        continue;
                    }
                    let g = (*cand).lock.lock();
                    if (*cand).deleted.load(Ordering::Acquire) {
                        return None;
                    }
                    victim = cand;
                    victim_guard = Some(g);
                }
                let height = (*victim).levels();
                let mut targets: Path<V> = [ptr::null_mut(); MAX_LEVEL];
                targets[..height].fill(victim);
                let Some(guards) = self.lock_preds(&preds, &targets, height, false) else {
                    continue;
                };
                let succ = (*victim).next[0].load(Ordering::Acquire);
                let prep = self
                    .rt
                    .prepare(h, &[(&(*preds[0]).bundle, succ), (&(*victim).bundle, self.head)]);
                (*victim).deleted.store(true, Ordering::Release);
                for level in (0..height).rev() {
                    let next = (*victim).next[level].load(Ordering::Acquire);
                    (*preds[level]).next[level].store(next, Ordering::Release);
                }
                let ts = prep.timestamp();
                prep.finalize();
                drop(guards);
                drop(victim_guard.take());
                h.retire_removed(Retired::new(victim, free_node::<V>), ts);
                return Some(ts);
            }
        }
    }

    fn contains(&self, h: &ThreadHandle<'_>, key: Key) -> bool {
        check_key(key);
        self.check_handle(h);
        let _pin = h.pin();
        // SAFETY: pinned.
        unsafe {
            let pred = self.data_pred(key);
            let wait = self.rt.wait();
            let mut curr = (*pred).bundle.dereference(CONTAINS_TS, wait);
            while (*curr).key < key {
                curr = (*curr).bundle.dereference(CONTAINS_TS, wait);
            }
            (*curr).key == key
        }
    }

    fn range_query(&self, h: &ThreadHandle<'_>, low: Key, high: Key) -> RangeQuery<V> {
        check_key(low);
        check_key(high);
        assert!(low <= high, "empty range [{low}, {high}]");
        self.check_handle(h);
        let _pin = h.pin();
        // SAFETY: pinned.
        unsafe {
            let pred = self.data_pred(low);
            let snap = self.rt.begin_snapshot(h);
            let (items, derefs) = self.collect(pred, low, high, snap.ts);
            RangeQuery { ts: snap.ts, items, derefs }
        }
    }

    fn range_query_at(&self, h: &ThreadHandle<'_>, low: Key, high: Key, ts: Timestamp) -> Result<RangeQuery<V>, Error> {
        check_key(low);
        check_key(high);
        assert!(low <= high, "empty range [{low}, {high}]");
        self.check_handle(h);
        let _pin = h.pin();
        let snap = self.rt.begin_historical(h, ts)?;
        // SAFETY: pinned; the head's bundle covers the horizon.
        let (items, derefs) = unsafe { self.collect(self.head, low, high, snap.ts) };
        Ok(RangeQuery { ts, items, derefs })
    }

    fn range_query_unsynchronized(&self, h: &ThreadHandle<'_>, low: Key, high: Key) -> Vec<(Key, V)> {
        self.check_handle(h);
        let _pin = h.pin();
        let mut out = Vec::new();
        // SAFETY: pinned.
        unsafe {
            let mut curr = (*self.data_pred(low)).next[0].load(Ordering::Acquire);
            // Keys in (pred, low) may have been linked since the search.
            while (*curr).key < low {
                curr = (*curr).next[0].load(Ordering::Acquire);
            }
            while (*curr).key <= high {
                out.push(((*curr).key, (*curr).value.clone().expect("sentinel in range")));
                curr = (*curr).next[0].load(Ordering::Acquire);
            }
        }
        out
    }

    fn cleanup_pass(&self, h: &ThreadHandle<'_>) -> CleanupStats {
        self.check_handle(h);
        let _serial = self.rt.cleanup_lock();
        let _pin = h.pin();
        let threshold = self.rt.oldest_active_ts();
        self.rt.raise_horizon(threshold);
        let mut stats = CleanupStats { threshold, ..CleanupStats::default() };
        let mut curr = self.head;
        while curr != self.tail {
            // SAFETY: pinned.
            unsafe {
                prune_bundle(h, &(*curr).bundle, threshold, &mut stats);
                curr = (*curr).next[0].load(Ordering::Acquire);
            }
        }
        stats
    }

    fn keys(&self, h: &ThreadHandle<'_>) -> Vec<Key> {
        self.check_handle(h);
        let _pin = h.pin();
        let mut out = Vec::new();
        // SAFETY: pinned.
        unsafe {
            let mut curr = (*self.head).next[0].load(Ordering::Acquire);
            while curr != self.tail {
                out.push((*curr).key);
                curr = (*curr).next[0].load(Ordering::Acquire);
            }
        }
        out
    }

    fn check_invariants(&self, h: &ThreadHandle<'_>) -> Result<(), String> {
        self.check_handle(h);
        let _pin = h.pin();
        // SAFETY: pinned.
        unsafe {
            let mut data = HashSet::new();
            let mut curr = self.head;
            while curr != self.tail {
                let next = (*curr).next[0].load(Ordering::Acquire);
                if curr != self.head {
                    if (*curr).deleted.load(Ordering::Acquire) {
                        return Err(format!("reachable node {} is marked deleted", (*curr).key));
                    }
                    if !(*curr).fully_linked.load(Ordering::Acquire) {
                        return Err(format!("reachable node {} is not fully linked", (*curr).key));
                    }
                }
                let (target, ts) = (*curr).bundle.newest();
                if ts.is_pending() || target != next {
                    return Err(format!(
                        "bundle of {} is ({} at {ts}) but next is {}",
                        self.label(curr),
                        self.label(target),
                        self.label(next)
                    ));
                }
                data.insert(curr);
                curr = next;
            }
            for level in 1..self.levels {
                let mut curr = self.head;
                while curr != self.tail {
                    let next = (*curr).next[level].load(Ordering::Acquire);
                    if (*next).key <= (*curr).key {
                        return Err(format!("level {level} out of order at {}", self.label(curr)));
                    }
                    if next != self.tail && !data.contains(&next) {
                        return Err(format!("level {level} links {} missing from the data layer", (*next).key));
                    }
                    curr = next;
                }
            }
        }
        Ok(())
    }

    fn bundle_sizes(&self, h: &ThreadHandle<'_>) -> Vec<usize> {
        self.check_handle(h);
        let _pin = h.pin();
        let mut out = Vec::new();
        let mut curr = self.head;
        // SAFETY: pinned.
        unsafe {
            while curr != self.tail {
                out.push((*curr).bundle.len());
                curr = (*curr).next[0].load(Ordering::Acquire);
            }
        }
        out
    }

    fn bundle_views(&self, h: &ThreadHandle<'_>) -> Vec<BundleView> {
        self.check_handle(h);
        let _pin = h.pin();
        let follow_history = self.rt.settings().retain_history;
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([self.head]);
        let mut views = Vec::new();
        // SAFETY: pinned; retained history keeps every named node allocated.
        unsafe {
            while let Some(n) = queue.pop_front() {
                if n == self.tail || !seen.insert(n) {
                    continue;
                }
                let entries = (*n).bundle.entries();
                if follow_history {
                    queue.extend(entries.iter().map(|(t, _)| *t));
                } else {
                    queue.push_back((*n).next[0].load(Ordering::Acquire));
                }
                views.push(BundleView {
                    node: self.label(n),
                    link: "next",
                    entries: entries.into_iter().map(|(t, ts)| (self.label(t), ts)).collect(),
                });
            }
        }
        views.sort_by_key(|v| v.node);
        views
    }
}

impl<V> Drop for BundledSkipList<V> {
    fn drop(&mut self) {
        let mut tally = Tally::default();
        let mut curr = self.head;
        while !curr.is_null() {
            // SAFETY: `&mut self`; linked nodes belong to the list.
            unsafe {
                let next = *(*curr).next[0].get_mut();
                tally += free_node(curr);
                curr = next;
            }
        }
        self.rt.teardown_freed(tally);
    }
}
