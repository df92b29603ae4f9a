//! Bundled internal binary search tree with Citrus-style copy-on-remove.
//!
//! Removing a node with two children takes two timestamped updates. The
//! first swings the parent's link to a locked copy of the successor and
//! redirects the removed node to the root; that is the removal's
//! linearization point. If the successor was deeper than the removed node's
//! right child, the tree then holds the successor's key twice, so the second
//! update waits for every read section that might have planned its descent
//! around the old shape, then unlinks the original successor. The second
//! update changes no key's membership.
//!
//! Traversals that steer by plain links (update searches, the pre-range of a
//! query up to its clock read, and all of `contains`) run inside read
//! sections. Range collection tracks exclusive key bounds per subtree so the
//! transient duplicate is never reported twice.

use std::collections::{HashSet, VecDeque};
use std::ptr;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU64, Ordering};

use smallvec::SmallVec;

use crate::bundle::Bundle;
use crate::clock::{Timestamp, CONTAINS_TS};
use crate::lock::NodeLock;
use crate::reclamation::{prune_bundle, CleanupStats, Retired, Tally};
use crate::runtime::{Runtime, Settings, ThreadHandle};
use crate::set::{check_key, BundleView, Key, NodeRef, RangeQuery, RangeSet, StructureKind};
use crate::Error;

const LEFT: usize = 0;
const RIGHT: usize = 1;

type BundleTarget<'a, V> = (&'a Bundle<Node<V>>, *mut Node<V>);

struct Node<V> {
    key: Key,
    value: Option<V>,
    lock: NodeLock,
    marked: AtomicBool,
    child: [AtomicPtr<Node<V>>; 2],
    /// Bumped whenever the matching child slot is set to nil.
    tag: [AtomicU64; 2],
    bundle: [Bundle<Node<V>>; 2],
}

impl<V> Node<V> {
    fn alloc(key: Key, value: Option<V>, children: [*mut Node<V>; 2], bundle: [Bundle<Node<V>>; 2]) -> *mut Node<V> {
        Box::into_raw(Box::new(Node {
            key,
            value,
            lock: NodeLock::new(),
            marked: AtomicBool::new(false),
            child: [AtomicPtr::new(children[0]), AtomicPtr::new(children[1])],
            tag: [AtomicU64::new(0), AtomicU64::new(0)],
            bundle,
        }))
    }
}

unsafe fn free_node<V>(n: *mut Node<V>) -> Tally {
    let mut node = Box::from_raw(n);
    let [a, b] = &mut node.bundle;
    Tally { nodes: 1, entries: a.free_entries() + b.free_entries() }
}

/// Exclusive key bounds of a subtree.
#[derive(Clone, Copy)]
struct Bounds {
    lo: Key,
    hi: Key,
}

const UNBOUNDED: Bounds = Bounds { lo: i64::MIN, hi: i64::MAX };

impl Bounds {
    fn left_of(self, k: Key) -> Bounds {
        Bounds { lo: self.lo, hi: self.hi.min(k) }
    }

    fn right_of(self, k: Key) -> Bounds {
        Bounds { lo: self.lo.max(k), hi: self.hi }
    }

    fn holds(self, k: Key) -> bool {
        self.lo < k && k < self.hi
    }
}

/// An unbalanced internal BST with bundled child links.
///
/// The tree hangs off the left link of a root sentinel. Absent children point
/// at a shared nil node rather than null so that every bundle entry names a
/// real node.
pub struct BundledTree<V> {
    rt: Runtime,
    root: *mut Node<V>,
    nil: *mut Node<V>,
}

// SAFETY: as for `BundledList`.
unsafe impl<V: Send + Sync> Send for BundledTree<V> {}
unsafe impl<V: Send + Sync> Sync for BundledTree<V> {}

impl<V> BundledTree<V> {
    pub fn new() -> Self {
        Self::build(Settings::default())
    }

    fn build(settings: Settings) -> Self {
        let rt = Runtime::new(settings);
        let nil = Node::alloc(i64::MAX, None, [ptr::null_mut(); 2], [Bundle::empty(), Bundle::empty()]);
        let root = Node::alloc(i64::MAX, None, [nil, nil], [Bundle::new(nil), Bundle::new(nil)]);
        rt.sentinel_allocated(2, 2);
        BundledTree { rt, root, nil }
    }

    fn label(&self, n: *mut Node<V>) -> NodeRef {
        if n == self.root {
            NodeRef::Root
        } else if n == self.nil {
            NodeRef::Nil
        } else {
            // SAFETY: callers pass nodes reached while pinned.
            NodeRef::Key(unsafe { (*n).key })
        }
    }

    fn check_handle(&self, h: &ThreadHandle<'_>) {
        assert!(h.belongs_to(&self.rt), "thread handle registered with another structure");
    }

    /// Node holding `key` (or nil), its parent, the direction from parent to
    /// it, and the parent's tag for that direction. Caller is pinned and
    /// inside a read section.
    unsafe fn find(&self, key: Key) -> (*mut Node<V>, *mut Node<V>, usize, u64) {
        let mut prev = self.root;
        let mut dir = LEFT;
        let mut tag = (*prev).tag[LEFT].load(Ordering::Acquire);
        let mut curr = (*prev).child[LEFT].load(Ordering::Acquire);
        while curr != self.nil && (*curr).key != key {
            prev = curr;
            dir = if key < (*curr).key { LEFT } else { RIGHT };
            tag = (*curr).tag[dir].load(Ordering::Acquire);
            curr = (*curr).child[dir].load(Ordering::Acquire);
        }
        (prev, curr, dir, tag)
    }

    /// Descends over plain links to the last node outside `[low, high]`
    /// above the range's subtree. Returns it, the direction to take from it,
    /// and the bounds of that child slot. Caller is pinned and inside a read
    /// section.
    unsafe fn pre_range(&self, low: Key, high: Key) -> (*mut Node<V>, usize, Bounds) {
        let mut pred = self.root;
        let mut dir = LEFT;
        let mut bounds = UNBOUNDED;
        let mut curr = (*pred).child[LEFT].load(Ordering::Acquire);
        while curr != self.nil {
            let k = (*curr).key;
            let d = if high < k {
                LEFT
            } else if low > k {
                RIGHT
            } else {
                break;
            };
            bounds = if d == LEFT { bounds.left_of(k) } else { bounds.right_of(k) };
            pred = curr;
            dir = d;
            curr = (*curr).child[d].load(Ordering::Acquire);
        }
        (pred, dir, bounds)
    }

    /// Follows bundles at `ts` from `pred` to the root of the subtree holding
    /// `[low, high]`, then collects it depth-first. Reaching the root through
    /// a removed node's redirect restarts the descent with open bounds.
    /// Caller is pinned.
    #[allow(clippy::too_many_arguments)]
    unsafe fn collect(
        &self,
        mut pred: *mut Node<V>,
        mut dir: usize,
        mut bounds: Bounds,
        low: Key,
        high: Key,
        ts: Timestamp,
        mut trace: Option<&mut Vec<Key>>,
    ) -> (Vec<(Key, V)>, u64)
    where
        V: Clone,
    {
        let wait = self.rt.wait();
        let mut derefs = 0;
        let top = loop {
            let next = (*pred).bundle[dir].dereference(ts, wait);
            derefs += 1;
            if next == self.root {
                pred = self.root;
                dir = LEFT;
                bounds = UNBOUNDED;
                continue;
            }
            if next == self.nil {
                break next;
            }
            let k = (*next).key;
            if high < k {
                bounds = bounds.left_of(k);
                dir = LEFT;
            } else if low > k {
                bounds = bounds.right_of(k);
                dir = RIGHT;
            } else {
                break next;
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(k);
            }
            pred = next;
        };
        let mut items = Vec::new();
        let mut stack: SmallVec<[(*mut Node<V>, Bounds); 64]> = SmallVec::new();
        stack.push((top, bounds));
        while let Some((n, b)) = stack.pop() {
            if n == self.nil {
                continue;
            }
            debug_assert!(n != self.root, "range collection reached the root sentinel");
            let k = (*n).key;
            if let Some(t) = trace.as_deref_mut() {
                t.push(k);
            }
            if b.holds(k) && low <= k && k <= high {
                items.push((k, (*n).value.clone().expect("sentinel in range")));
            }
            if low < k && b.lo < k {
                stack.push(((*n).bundle[LEFT].dereference(ts, wait), b.left_of(k)));
                derefs += 1;
            }
            if high > k && k < b.hi {
                stack.push(((*n).bundle[RIGHT].dereference(ts, wait), b.right_of(k)));
                derefs += 1;
            }
        }
        items.sort_unstable_by_key(|(k, _)| *k);
        (items, derefs)
    }

    /// Range query that also reports the key of every node it visited after
    /// the clock read. Used to audit how far collection strays outside the
    /// range.
    pub fn range_query_traced(&self, h: &ThreadHandle<'_>, low: Key, high: Key) -> (RangeQuery<V>, Vec<Key>)
    where
        V: Clone,
    {
        let mut trace = Vec::new();
        let q = self.range_query_inner(h, low, high, Some(&mut trace));
        (q, trace)
    }

    fn range_query_inner(&self, h: &ThreadHandle<'_>, low: Key, high: Key, trace: Option<&mut Vec<Key>>) -> RangeQuery<V>
    where
        V: Clone,
    {
        check_key(low);
        check_key(high);
        assert!(low <= high, "empty range [{low}, {high}]");
        self.check_handle(h);
        let _pin = h.pin();
        // SAFETY: pinned.
        unsafe {
            let rs = h.read_section();
            let (pred, dir, bounds) = self.pre_range(low, high);
            let snap = self.rt.begin_snapshot(h);
            drop(rs);
            let (items, derefs) = self.collect(pred, dir, bounds, low, high, snap.ts, trace);
            RangeQuery { ts: snap.ts, items, derefs }
        }
    }

    /// Keys on the search paths of `low` and `high` over current links.
    pub fn search_path_keys(&self, h: &ThreadHandle<'_>, low: Key, high: Key) -> HashSet<Key> {
        self.check_handle(h);
        let _pin = h.pin();
        let mut out = HashSet::new();
        for key in [low, high] {
            // SAFETY: pinned.
            unsafe {
                let mut curr = (*self.root).child[LEFT].load(Ordering::Acquire);
                while curr != self.nil {
                    out.insert((*curr).key);
                    if key == (*curr).key {
                        break;
                    }
                    let d = if key < (*curr).key { LEFT } else { RIGHT };
                    curr = (*curr).child[d].load(Ordering::Acquire);
                }
            }
        }
        out
    }

    /// Height of the tree over current links.
    pub fn height(&self, h: &ThreadHandle<'_>) -> usize {
        self.check_handle(h);
        let _pin = h.pin();
        let mut best = 0;
        // SAFETY: pinned.
        let mut stack = vec![(unsafe { (*self.root).child[LEFT].load(Ordering::Acquire) }, 1)];
        while let Some((n, d)) = stack.pop() {
            if n == self.nil {
                continue;
            }
            best = best.max(d);
            // SAFETY: pinned.
            unsafe {
                stack.push(((*n).child[LEFT].load(Ordering::Acquire), d + 1));
                stack.push(((*n).child[RIGHT].load(Ordering::Acquire), d + 1));
            }
        }
        best
    }

    /// Nodes reachable over current links, in order. Caller is pinned.
    unsafe fn in_order(&self) -> Vec<*mut Node<V>> {
        let mut out = Vec::new();
        let mut stack = Vec::new();
        let mut curr = (*self.root).child[LEFT].load(Ordering::Acquire);
        while curr != self.nil || !stack.is_empty() {
            while curr != self.nil {
                stack.push(curr);
                curr = (*curr).child[LEFT].load(Ordering::Acquire);
            }
            let n = stack.pop().expect("stack is non-empty");
            out.push(n);
            curr = (*n).child[RIGHT].load(Ordering::Acquire);
        }
        out
    }

    fn set_child(&self, parent: *mut Node<V>, dir: usize, child: *mut Node<V>) {
        // SAFETY: the caller holds `parent`'s lock.
        unsafe {
            (*parent).child[dir].store(child, Ordering::Release);
            if child == self.nil {
                (*parent).tag[dir].fetch_add(1, Ordering::Release);
            }
        }
    }
}

impl<V> Default for BundledTree<V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<V: Clone + Send + Sync> RangeSet<V> for BundledTree<V> {
    fn with_settings(settings: Settings) -> Self {
        Self::build(settings)
    }

    fn kind(&self) -> StructureKind {
        StructureKind::Bst
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
                let (prev, curr, dir, tag) = {
                    let _rs = h.read_section();
                    self.find(key)
                };
                if curr != self.nil {
                    if (*curr).marked.load(Ordering::Acquire) {
                        continue;
                    }
                    return None;
                }
                let _g = (*prev).lock.lock();
                if (*prev).marked.load(Ordering::Acquire)
                    || (*prev).child[dir].load(Ordering::Acquire) != self.nil
                    || (*prev).tag[dir].load(Ordering::Acquire) != tag
                {
                    continue;
                }
                let node = Node::alloc(key, value.take(), [self.nil; 2], [Bundle::empty(), Bundle::empty()]);
                self.rt.node_allocated(h);
                let prep = self.rt.prepare(
                    h,
                    &[
                        (&(*node).bundle[LEFT], self.nil),
                        (&(*node).bundle[RIGHT], self.nil),
                        (&(*prev).bundle[dir], node),
                    ],
                );
                self.set_child(prev, dir, node);
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
        let root = self.root;
        loop {
            // SAFETY: pinned; see `insert_ts`.
            unsafe {
                let (prev, curr, dir, _) = {
                    let _rs = h.read_section();
                    self.find(key)
                };
                if curr == self.nil {
                    return None;
                }
                let _gp = (*prev).lock.lock();
                let _gc = (*curr).lock.lock();
                if (*prev).marked.load(Ordering::Acquire)
                    || (*curr).marked.load(Ordering::Acquire)
                    || (*prev).child[dir].load(Ordering::Acquire) != curr
                {
                    continue;
                }
                let left = (*curr).child[LEFT].load(Ordering::Acquire);
                let right = (*curr).child[RIGHT].load(Ordering::Acquire);

                if left == self.nil || right == self.nil {
                    let only = if left == self.nil { right } else { left };
                    let prep = self.rt.prepare(
                        h,
                        &[
                            (&(*prev).bundle[dir], only),
                            (&(*curr).bundle[LEFT], root),
                            (&(*curr).bundle[RIGHT], root),
                        ],
                    );
                    (*curr).marked.store(true, Ordering::Release);
                    self.set_child(prev, dir, only);
                    let ts = prep.timestamp();
                    prep.finalize();
                    drop(_gc);
                    drop(_gp);
                    h.retire_removed(Retired::new(curr, free_node::<V>), ts);
                    return Some(ts);
                }

                let mut succ_parent = curr;
                let mut succ = right;
                loop {
                    let l = (*succ).child[LEFT].load(Ordering::Acquire);
                    if l == self.nil {
                        break;
                    }
                    succ_parent = succ;
                    succ = l;
                }
                let adjacent = succ_parent == curr;
                let _gsp = (!adjacent).then(|| (*succ_parent).lock.lock());
                let _gs = (*succ).lock.lock();
                let succ_dir = if adjacent { RIGHT } else { LEFT };
                if (*succ).marked.load(Ordering::Acquire)
                    || (*succ).child[LEFT].load(Ordering::Acquire) != self.nil
                    || (*succ_parent).child[succ_dir].load(Ordering::Acquire) != succ
                    || (!adjacent && (*succ_parent).marked.load(Ordering::Acquire))
                {
                    continue;
                }
                let succ_right = (*succ).child[RIGHT].load(Ordering::Acquire);
                let copy_right = if adjacent { succ_right } else { right };
                let copy = Node::alloc(
                    (*succ).key,
                    (*succ).value.clone(),
                    [left, copy_right],
                    [Bundle::empty(), Bundle::empty()],
                );
                self.rt.node_allocated(h);
                let _gcopy = (*copy).lock.lock();

                let mut targets: SmallVec<[BundleTarget<'_, V>; 8]> = SmallVec::new();
                targets.extend([
                    (&(*copy).bundle[LEFT], left),
                    (&(*copy).bundle[RIGHT], copy_right),
                    (&(*prev).bundle[dir], copy),
                    (&(*curr).bundle[LEFT], root),
                    (&(*curr).bundle[RIGHT], root),
                ]);
                if adjacent {
                    targets.extend([(&(*succ).bundle[LEFT], root), (&(*succ).bundle[RIGHT], root)]);
                }
                let prep = self.rt.prepare(h, &targets);
                (*curr).marked.store(true, Ordering::Release);
                if adjacent {
                    (*succ).marked.store(true, Ordering::Release);
                }
                self.set_child(prev, dir, copy);
                let ts = prep.timestamp();
                prep.finalize();
                let mut last_ts = ts;

                if !adjacent {
                    self.rt.collector().wait_for_readers(h.tid(), self.rt.wait());
                    let unlink = self.rt.prepare(
                        h,
                        &[
                            (&(*succ_parent).bundle[LEFT], succ_right),
                            (&(*succ).bundle[LEFT], root),
                            (&(*succ).bundle[RIGHT], root),
                        ],
                    );
                    (*succ).marked.store(true, Ordering::Release);
                    self.set_child(succ_parent, LEFT, succ_right);
                    last_ts = unlink.timestamp();
                    unlink.finalize();
                }
                drop(_gcopy);
                drop(_gs);
                drop(_gsp);
                drop(_gc);
                drop(_gp);
                h.retire_removed(Retired::new(curr, free_node::<V>), last_ts);
                h.retire_removed(Retired::new(succ, free_node::<V>), last_ts);
                return Some(ts);
            }
        }
    }

    fn contains(&self, h: &ThreadHandle<'_>, key: Key) -> bool {
        check_key(key);
        self.check_handle(h);
        let _pin = h.pin();
        let _rs = h.read_section();
        let wait = self.rt.wait();
        // SAFETY: pinned.
        unsafe {
            // Stop one step short of the key so the answer comes from a bundle.
            let (mut pred, _, mut dir, _) = self.find(key);
            loop {
                let next = (*pred).bundle[dir].dereference(CONTAINS_TS, wait);
                if next == self.nil {
                    return false;
                }
                if next == self.root {
                    pred = self.root;
                    dir = LEFT;
                    continue;
                }
                let k = (*next).key;
                if k == key {
                    return true;
                }
                pred = next;
                dir = if key < k { LEFT } else { RIGHT };
            }
        }
    }

    fn range_query(&self, h: &ThreadHandle<'_>, low: Key, high: Key) -> RangeQuery<V> {
        self.range_query_inner(h, low, high, None)
    }

    fn range_query_at(&self, h: &ThreadHandle<'_>, low: Key, high: Key, ts: Timestamp) -> Result<RangeQuery<V>, Error> {
        check_key(low);
        check_key(high);
        assert!(low <= high, "empty range [{low}, {high}]");
        self.check_handle(h);
        let _pin = h.pin();
        let snap = self.rt.begin_historical(h, ts)?;
        // SAFETY: pinned; the root's bundles cover the horizon.
        let (items, derefs) = unsafe { self.collect(self.root, LEFT, UNBOUNDED, low, high, snap.ts, None) };
        Ok(RangeQuery { ts, items, derefs })
    }

    fn range_query_unsynchronized(&self, h: &ThreadHandle<'_>, low: Key, high: Key) -> Vec<(Key, V)> {
        self.check_handle(h);
        let _pin = h.pin();
        let mut out = Vec::new();
        // SAFETY: pinned.
        unsafe {
            let mut stack = vec![((*self.root).child[LEFT].load(Ordering::Acquire), UNBOUNDED)];
            while let Some((n, b)) = stack.pop() {
                if n == self.nil {
                    continue;
                }
                let k = (*n).key;
                if b.holds(k) && low <= k && k <= high {
                    out.push((k, (*n).value.clone().expect("sentinel in range")));
                }
                if low < k && b.lo < k {
                    stack.push(((*n).child[LEFT].load(Ordering::Acquire), b.left_of(k)));
                }
                if high > k && k < b.hi {
                    stack.push(((*n).child[RIGHT].load(Ordering::Acquire), b.right_of(k)));
                }
            }
        }
        out.sort_unstable_by_key(|(k, _)| *k);
        out
    }

    fn cleanup_pass(&self, h: &ThreadHandle<'_>) -> CleanupStats {
        self.check_handle(h);
        let _serial = self.rt.cleanup_lock();
        let _pin = h.pin();
        let threshold = self.rt.oldest_active_ts();
        self.rt.raise_horizon(threshold);
        let mut stats = CleanupStats { threshold, ..CleanupStats::default() };
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            if n == self.nil {
                continue;
            }
            // SAFETY: pinned.
            unsafe {
                for d in [LEFT, RIGHT] {
                    prune_bundle(h, &(*n).bundle[d], threshold, &mut stats);
                }
                stack.push((*n).child[LEFT].load(Ordering::Acquire));
                if n != self.root {
                    stack.push((*n).child[RIGHT].load(Ordering::Acquire));
                }
            }
        }
        stats
    }

    fn keys(&self, h: &ThreadHandle<'_>) -> Vec<Key> {
        self.check_handle(h);
        let _pin = h.pin();
        // SAFETY: pinned.
        unsafe { self.in_order().into_iter().map(|n| (*n).key).collect() }
    }

    fn check_invariants(&self, h: &ThreadHandle<'_>) -> Result<(), String> {
        self.check_handle(h);
        let _pin = h.pin();
        // SAFETY: pinned.
        unsafe {
            let nodes = self.in_order();
            for w in nodes.windows(2) {
                if (*w[0]).key >= (*w[1]).key {
                    return Err(format!("in-order keys not increasing: {} then {}", (*w[0]).key, (*w[1]).key));
                }
            }
            for &n in nodes.iter().chain(std::iter::once(&self.root)) {
                if n != self.root && (*n).marked.load(Ordering::Acquire) {
                    return Err(format!("reachable node {} is marked", (*n).key));
                }
                let dirs: &[usize] = if n == self.root { &[LEFT] } else { &[LEFT, RIGHT] };
                for &d in dirs {
                    let (target, ts) = (*n).bundle[d].newest();
                    let child = (*n).child[d].load(Ordering::Acquire);
                    if ts.is_pending() || target != child {
                        return Err(format!(
                            "bundle {d} of {} is ({} at {ts}) but the link is {}",
                            self.label(n),
                            self.label(target),
                            self.label(child)
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn bundle_sizes(&self, h: &ThreadHandle<'_>) -> Vec<usize> {
        self.check_handle(h);
        let _pin = h.pin();
        // SAFETY: pinned.
        unsafe {
            let mut out = vec![(*self.root).bundle[LEFT].len()];
            for n in self.in_order() {
                out.push((*n).bundle[LEFT].len());
                out.push((*n).bundle[RIGHT].len());
            }
            out
        }
    }

    fn bundle_views(&self, h: &ThreadHandle<'_>) -> Vec<BundleView> {
        self.check_handle(h);
        let _pin = h.pin();
        let follow_history = self.rt.settings().retain_history;
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([self.root]);
        let mut views = Vec::new();
        // SAFETY: pinned; retained history keeps every named node allocated.
        unsafe {
            while let Some(n) = queue.pop_front() {
                if n == self.nil || !seen.insert(n) {
                    continue;
                }
                let dirs: &[usize] = if n == self.root { &[LEFT] } else { &[LEFT, RIGHT] };
                for &d in dirs {
                    let entries = (*n).bundle[d].entries();
                    if follow_history {
                        queue.extend(entries.iter().map(|(t, _)| *t));
                    } else {
                        queue.push_back((*n).child[d].load(Ordering::Acquire));
                    }
                    views.push(BundleView {
                        node: self.label(n),
                        link: if d == LEFT { "left" } else { "right" },
                        entries: entries.into_iter().map(|(t, ts)| (self.label(t), ts)).collect(),
                    });
                }
            }
        }
        views.sort_by_key(|v| (v.node, v.link));
        views
    }
}

impl<V> Drop for BundledTree<V> {
    fn drop(&mut self) {
        let mut tally = Tally::default();
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            if n == self.nil {
                continue;
            }
            // SAFETY: `&mut self`; linked nodes belong to the tree.
            unsafe {
                stack.push(*(*n).child[LEFT].get_mut());
                if n != self.root {
                    stack.push(*(*n).child[RIGHT].get_mut());
                }
                tally += free_node(n);
            }
        }
        // SAFETY: as above; nil is shared by all links and freed once.
        tally += unsafe { free_node(self.nil) };
        self.rt.teardown_freed(tally);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree() -> BundledTree<i64> {
        BundledTree::with_settings(Settings { retain_history: true, ..Settings::default() })
    }

    fn view<'a>(views: &'a [BundleView], node: NodeRef, link: &str) -> &'a BundleView {
        views.iter().find(|v| v.node == node && v.link == link).unwrap()
    }

    #[test]
    fn first_insert_sets_root_child() {
        let t = tree();
        let h = t.runtime().register().unwrap();
        assert_eq!(t.insert_ts(&h, 50, 50), Some(Timestamp(1)));
        assert!(!t.insert(&h, 50, 0));
        let views = t.bundle_views(&h);
        assert_eq!(view(&views, NodeRef::Root, "left").entries[0], (NodeRef::Key(50), Timestamp(1)));
        assert_eq!(view(&views, NodeRef::Key(50), "left").entries, vec![(NodeRef::Nil, Timestamp(1))]);
    }

    #[test]
    fn remove_leaf() {
        let t = tree();
        let h = t.runtime().register().unwrap();
        t.insert(&h, 50, 50);
        t.insert(&h, 30, 30);
        assert_eq!(t.remove_ts(&h, 30), Some(Timestamp(3)));
        let views = t.bundle_views(&h);
        assert_eq!(view(&views, NodeRef::Key(50), "left").entries[0], (NodeRef::Nil, Timestamp(3)));
        assert_eq!(view(&views, NodeRef::Key(30), "left").entries[0], (NodeRef::Root, Timestamp(3)));
        t.check_invariants(&h).unwrap();
    }

    #[test]
    fn remove_with_one_child_promotes_it() {
        let t = tree();
        let h = t.runtime().register().unwrap();
        for k in [50, 30, 20] {
            t.insert(&h, k, k);
        }
        t.remove(&h, 30);
        assert_eq!(t.keys(&h), vec![20, 50]);
        let views = t.bundle_views(&h);
        assert_eq!(view(&views, NodeRef::Key(50), "left").entries[0], (NodeRef::Key(20), Timestamp(4)));
        t.check_invariants(&h).unwrap();
    }

    #[test]
    fn remove_with_adjacent_successor() {
        let t = tree();
        let h = t.runtime().register().unwrap();
        for k in [50, 30, 70, 80] {
            t.insert(&h, k, k);
        }
        let ts = t.remove_ts(&h, 50).unwrap();
        assert_eq!(ts, Timestamp(5));
        assert_eq!(t.runtime().clock().read(), Timestamp(5), "one timestamp when the successor is the right child");
        assert_eq!(t.keys(&h), vec![30, 70, 80]);
        t.check_invariants(&h).unwrap();
    }

    #[test]
    fn remove_with_deep_successor_takes_two_updates() {
        // {50, 30, 70, 60}: successor 60 sits below 70.
        let t = tree();
        let h = t.runtime().register().unwrap();
        for k in [50, 30, 70, 60] {
            t.insert(&h, k, k);
        }
        let ts = t.remove_ts(&h, 50).unwrap();
        assert_eq!(ts, Timestamp(5));
        assert_eq!(t.runtime().clock().read(), Timestamp(6));
        assert_eq!(t.keys(&h), vec![30, 60, 70]);
        t.check_invariants(&h).unwrap();

        // Between the two updates 60 is in the tree twice; collection must
        // still report it once.
        let q = t.range_query_at(&h, 0, 100, Timestamp(5)).unwrap();
        assert_eq!(q.keys().collect::<Vec<_>>(), vec![30, 60, 70]);
        let q = t.range_query_at(&h, 0, 100, Timestamp(4)).unwrap();
        assert_eq!(q.keys().collect::<Vec<_>>(), vec![30, 50, 60, 70]);
    }

    #[test]
    fn range_over_snapshot() {
        let t = tree();
        let h = t.runtime().register().unwrap();
        assert!(t.range_query(&h, 0, 100).items.is_empty());
        for k in [50, 30, 70, 10, 90] {
            t.insert(&h, k, k);
        }
        assert_eq!(t.range_query(&h, 25, 75).keys().collect::<Vec<_>>(), vec![30, 50, 70]);
        assert!(t.contains(&h, 90));
        assert!(!t.contains(&h, 91));
    }

    #[test]
    fn collection_stays_on_boundary_paths() {
        let t: BundledTree<i64> = BundledTree::new();
        let h = t.runtime().register().unwrap();
        let mut x = 99u64;
        for _ in 0..2000 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            t.insert(&h, (x >> 35) as i64 % 5000, 0);
        }
        for (low, high) in [(100, 400), (0, 4999), (2500, 2500), (4000, 4100)] {
            let (q, trace) = t.range_query_traced(&h, low, high);
            let paths = t.search_path_keys(&h, low, high);
            for k in trace.iter().filter(|k| **k < low || **k > high) {
                assert!(paths.contains(k), "visited {k} off the boundary paths of [{low}, {high}]");
            }
            assert_eq!(q.items.len(), trace.iter().filter(|k| (low..=high).contains(*k)).count());
        }
    }

    #[test]
    fn teardown_balances_audit() {
        let audit;
        {
            let t: BundledTree<i64> = BundledTree::new();
            audit = t.runtime().audit();
            let h = t.runtime().register().unwrap();
            let mut x = 7u64;
            for i in 0..3000 {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let k = (x >> 35) as i64 % 400;
                if i % 2 == 0 {
                    t.insert(&h, k, k);
                } else {
                    t.remove(&h, k);
                }
            }
            t.cleanup_pass(&h);
            t.check_invariants(&h).unwrap();
        }
        assert!(audit.report().balanced(), "{:?}", audit.report());
    }
}
