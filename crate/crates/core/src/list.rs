//! Bundled lazy sorted linked list.

use std::collections::{HashSet, VecDeque};
use std::ptr;
use std::sync::atomic::{AtomicBool, AtomicPtr, Ordering};

use crate::bundle::Bundle;
use crate::clock::{Timestamp, CONTAINS_TS};
use crate::lock::NodeLock;
use crate::reclamation::{prune_bundle, CleanupStats, Retired, Tally};
use crate::runtime::{Runtime, Settings, Snapshot, ThreadHandle};
use crate::set::{check_key, BundleView, Key, NodeRef, RangeQuery, RangeSet, StructureKind};
use crate::Error;

struct Node<V> {
    key: Key,
    value: Option<V>,
    lock: NodeLock,
    deleted: AtomicBool,
    next: AtomicPtr<Node<V>>,
    bundle: Bundle<Node<V>>,
}

impl<V> Node<V> {
    fn alloc(key: Key, value: Option<V>, next: *mut Node<V>, bundle: Bundle<Node<V>>) -> *mut Node<V> {
        Box::into_raw(Box::new(Node {
            key,
            value,
            lock: NodeLock::new(),
            deleted: AtomicBool::new(false),
            next: AtomicPtr::new(next),
            bundle,
        }))
    }
}

unsafe fn free_node<V>(n: *mut Node<V>) -> Tally {
    let mut node = Box::from_raw(n);
    Tally { nodes: 1, entries: node.bundle.free_entries() }
}

/// A sorted linked list with lock-based updates and bundled `next` links.
///
/// Insert locks only the predecessor; remove locks the predecessor and the
/// victim, marks the victim deleted, and redirects the victim's bundle to the
/// head so that a query stranded on it restarts from a consistent place.
pub struct BundledList<V> {
    rt: Runtime,
    head: *mut Node<V>,
    tail: *mut Node<V>,
}

// SAFETY: nodes are shared through atomics and per-node locks; values move
// between threads through inserts and range queries.
unsafe impl<V: Send + Sync> Send for BundledList<V> {}
unsafe impl<V: Send + Sync> Sync for BundledList<V> {}

impl<V> BundledList<V> {
    pub fn new() -> Self {
        Self::build(Settings::default())
    }

    fn build(settings: Settings) -> Self {
        let rt = Runtime::new(settings);
        let tail = Node::alloc(i64::MAX, None, ptr::null_mut(), Bundle::empty());
        let head = Node::alloc(i64::MIN, None, tail, Bundle::new(tail));
        rt.sentinel_allocated(2, 1);
        BundledList { rt, head, tail }
    }

    fn label(&self, n: *mut Node<V>) -> NodeRef {
        if n == self.head {
            NodeRef::Head
        } else if n == self.tail {
            NodeRef::Tail
        } else {
            // SAFETY: callers pass nodes they reached while pinned.
            NodeRef::Key(unsafe { (*n).key })
        }
    }

    /// Last node with key `< key` and its successor, over current links.
    /// Caller is pinned.
    unsafe fn find(&self, key: Key) -> (*mut Node<V>, *mut Node<V>) {
        let mut pred = self.head;
        let mut curr = (*pred).next.load(Ordering::Acquire);
        while (*curr).key < key {
            pred = curr;
            curr = (*curr).next.load(Ordering::Acquire);
        }
        (pred, curr)
    }

    /// Enter-range from `start` (key `< low`) and collect-range through
    /// `high`, following bundles at `ts`. Caller is pinned.
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

    fn check_handle(&self, h: &ThreadHandle<'_>) {
        assert!(h.belongs_to(&self.rt), "thread handle registered with another structure");
    }
}

impl<V> Default for BundledList<V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<V: Clone + Send + Sync> RangeSet<V> for BundledList<V> {
    fn with_settings(settings: Settings) -> Self {
        Self::build(settings)
    }

    fn kind(&self) -> StructureKind {
        StructureKind::List
    }

    fn runtime(&self) -> &Runtime {
        &self.rt
    }

    fn insert_ts(&self, h: &ThreadHandle<'_>, key: Key, value: V) -> Option<Timestamp> {
        check_key(key);
        self.check_handle(h);
        let _pin = h.pin();
        let mut value = Some(value);
        loop {
            // SAFETY: pinned; nodes reached through links stay allocated.
            unsafe {
                let (pred, curr) = self.find(key);
                let _g = (*pred).lock.lock();
                if (*pred).deleted.load(Ordering::Acquire) || (*pred).next.load(Ordering::Acquire) != curr {
                    continue;
                }
                if (*curr).key == key {
                    return None;
                }
                let node = Node::alloc(key, value.take(), curr, Bundle::empty());
                self.rt.node_allocated(h);
                let prep = self
                    .rt
                    .prepare(h, &[(&(*node).bundle, curr), (&(*pred).bundle, node)]);
                (*pred).next.store(node, Ordering::Release);
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
        loop {
            // SAFETY: pinned; see `insert_ts`.
            unsafe {
                let (pred, curr) = self.find(key);
                if (*curr).key != key {
                    return None;
                }
                let _gp = (*pred).lock.lock();
                let _gc = (*curr).lock.lock();
                if (*pred).deleted.load(Ordering::Acquire)
                    || (*curr).deleted.load(Ordering::Acquire)
                    || (*pred).next.load(Ordering::Acquire) != curr
                {
                    continue;
                }
                let succ = (*curr).next.load(Ordering::Acquire);
                let prep = self
                    .rt
                    .prepare(h, &[(&(*pred).bundle, succ), (&(*curr).bundle, self.head)]);
                (*curr).deleted.store(true, Ordering::Release);
                (*pred).next.store(succ, Ordering::Release);
                let ts = prep.timestamp();
                prep.finalize();
                drop(_gc);
                drop(_gp);
                h.retire_removed(Retired::new(curr, free_node::<V>), ts);
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
            let (pred, _) = self.find(key);
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
            let (pred, _) = self.find(low);
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
        let snap: Snapshot<'_> = self.rt.begin_historical(h, ts)?;
        // SAFETY: pinned; the head's bundle covers every timestamp at or
        // after the horizon.
        let (items, derefs) = unsafe { self.collect(self.head, low, high, snap.ts) };
        Ok(RangeQuery { ts, items, derefs })
    }

    fn range_query_unsynchronized(&self, h: &ThreadHandle<'_>, low: Key, high: Key) -> Vec<(Key, V)> {
        self.check_handle(h);
        let _pin = h.pin();
        let mut out = Vec::new();
        // SAFETY: pinned.
        unsafe {
            let (_, mut curr) = self.find(low);
            while (*curr).key <= high {
                out.push(((*curr).key, (*curr).value.clone().expect("sentinel in range")));
                curr = (*curr).next.load(Ordering::Acquire);
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
                curr = (*curr).next.load(Ordering::Acquire);
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
            let mut curr = (*self.head).next.load(Ordering::Acquire);
            while curr != self.tail {
                out.push((*curr).key);
                curr = (*curr).next.load(Ordering::Acquire);
            }
        }
        out
    }

    fn check_invariants(&self, h: &ThreadHandle<'_>) -> Result<(), String> {
        self.check_handle(h);
        let _pin = h.pin();
        let mut curr = self.head;
        // SAFETY: pinned.
        unsafe {
            while curr != self.tail {
                let next = (*curr).next.load(Ordering::Acquire);
                if (*curr).deleted.load(Ordering::Acquire) {
                    return Err(format!("reachable node {} is marked deleted", (*curr).key));
                }
                if (*next).key <= (*curr).key {
                    return Err(format!("keys out of order: {} then {}", (*curr).key, (*next).key));
                }
                let (target, ts) = (*curr).bundle.newest();
                if ts.is_pending() {
                    return Err(format!("bundle of {} has a pending head", self.label(curr)));
                }
                if target != next {
                    return Err(format!(
                        "bundle of {} points to {} but next is {}",
                        self.label(curr),
                        self.label(target),
                        self.label(next)
                    ));
                }
                curr = next;
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
                curr = (*curr).next.load(Ordering::Acquire);
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
        // SAFETY: pinned; with retained history every node an entry names is
        // still allocated.
        unsafe {
            while let Some(n) = queue.pop_front() {
                if n == self.tail || !seen.insert(n) {
                    continue;
                }
                let entries = (*n).bundle.entries();
                if follow_history {
                    queue.extend(entries.iter().map(|(t, _)| *t));
                } else {
                    queue.push_back((*n).next.load(Ordering::Acquire));
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

impl<V> Drop for BundledList<V> {
    fn drop(&mut self) {
        let mut tally = Tally::default();
        let mut curr = self.head;
        while !curr.is_null() {
            // SAFETY: `&mut self`; every node still linked is owned by the list
            // and retired nodes are owned by the collector.
            unsafe {
                let next = *(*curr).next.get_mut();
                tally += free_node(curr);
                curr = next;
            }
        }
        self.rt.teardown_freed(tally);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reclamation::RqSlot;

    fn list() -> BundledList<i64> {
        BundledList::with_settings(Settings { retain_history: true, ..Settings::default() })
    }

    #[test]
    fn insert_remove_contains() {
        let l = list();
        let h = l.runtime().register().unwrap();
        assert_eq!(l.insert_ts(&h, 20, 20), Some(Timestamp(1)));
        assert!(!l.insert(&h, 20, 99));
        assert!(l.contains(&h, 20));
        assert!(!l.remove(&h, 99));
        assert_eq!(l.remove_ts(&h, 20), Some(Timestamp(2)));
        assert!(!l.contains(&h, 20));
        assert!(l.keys(&h).is_empty());
        l.check_invariants(&h).unwrap();
    }

    #[test]
    fn duplicate_insert_keeps_value() {
        let l = list();
        let h = l.runtime().register().unwrap();
        l.insert(&h, 5, 1);
        l.insert(&h, 5, 2);
        assert_eq!(l.range_query(&h, 5, 5).items, vec![(5, 1)]);
    }

    #[test]
    fn first_insert_bundles() {
        let l = list();
        let h = l.runtime().register().unwrap();
        l.insert(&h, 20, 20);
        let views = l.bundle_views(&h);
        assert_eq!(views[0].node, NodeRef::Head);
        assert_eq!(views[0].entries, vec![(NodeRef::Key(20), Timestamp(1)), (NodeRef::Tail, Timestamp(0))]);
        assert_eq!(views[1].entries, vec![(NodeRef::Tail, Timestamp(1))]);
    }

    #[test]
    fn disjoint_and_empty_ranges() {
        let l = list();
        let h = l.runtime().register().unwrap();
        assert!(l.range_query(&h, 0, 100).items.is_empty());
        l.insert(&h, 10, 10);
        l.insert(&h, 30, 30);
        assert!(l.range_query(&h, 50, 60).items.is_empty());
        assert!(!l.contains(&h, 50));
    }

    #[test]
    fn collect_minimality() {
        let l = list();
        let h = l.runtime().register().unwrap();
        for k in (0..100).step_by(3) {
            l.insert(&h, k, k);
        }
        for (lo, hi) in [(0, 99), (10, 20), (4, 5), (98, 99)] {
            let q = l.range_query(&h, lo, hi);
            assert_eq!(q.derefs, q.items.len() as u64 + 1, "[{lo}, {hi}]");
        }
    }

    #[test]
    fn range_query_clears_its_slot_and_contains_never_touches_it() {
        let l = list();
        let h = l.runtime().register().unwrap();
        l.insert(&h, 1, 1);
        l.contains(&h, 1);
        assert_eq!(l.runtime().rq_table().total_writes(), 0);
        l.range_query(&h, 0, 5);
        assert_eq!(l.runtime().rq_table().total_writes(), 1);
        assert_eq!(l.runtime().rq_table().get(h.tid()), RqSlot::Inactive);
    }

    #[test]
    fn teardown_balances_audit() {
        let audit;
        {
            let l: BundledList<i64> = BundledList::new();
            audit = l.runtime().audit();
            let h = l.runtime().register().unwrap();
            for k in 0..200 {
                l.insert(&h, k, k);
            }
            for k in (0..200).step_by(2) {
                l.remove(&h, k);
            }
            l.cleanup_pass(&h);
        }
        assert!(audit.report().balanced(), "{:?}", audit.report());
    }

    #[test]
    fn stale_pred_redirects_through_head() {
        // A query whose pre-range stopped on a node removed before its
        // snapshot reaches the head through the redirect entry.
        let l = list();
        let h = l.runtime().register().unwrap();
        for k in [10, 20, 30] {
            l.insert(&h, k, k);
        }
        let _pin = h.pin();
        let (pred, _) = unsafe { l.find(25) };
        assert_eq!(unsafe { (*pred).key }, 20);
        l.remove(&h, 20);
        let ts = l.runtime().clock().read();
        let (items, _) = unsafe { l.collect(pred, 25, 40, ts) };
        assert_eq!(items, vec![(30, 30)]);
        assert_eq!(unsafe { (*pred).bundle.dereference(ts, l.runtime().wait()) }, l.head);
    }
}
