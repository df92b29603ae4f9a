//! The interface shared by the three bundled structures.

use std::fmt;
use std::str::FromStr;

use crate::clock::Timestamp;
use crate::reclamation::CleanupStats;
use crate::runtime::{Runtime, Settings, ThreadHandle};
use crate::Error;

pub type Key = i64;

/// Smallest key a caller may use. `i64::MIN` is reserved for sentinels.
pub const MIN_KEY: Key = i64::MIN + 1;
/// Largest key a caller may use. `i64::MAX` is reserved for sentinels.
pub const MAX_KEY: Key = i64::MAX - 1;

#[inline]
pub(crate) fn check_key(key: Key) {
    assert!(
        (MIN_KEY..=MAX_KEY).contains(&key),
        "key {key} collides with a sentinel"
    );
}

/// A node as seen from a bundle entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeRef {
    Head,
    Root,
    Key(Key),
    Tail,
    /// The tree's absent-child node.
    Nil,
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Head => f.write_str("head"),
            NodeRef::Root => f.write_str("root"),
            NodeRef::Key(k) => write!(f, "{k}"),
            NodeRef::Tail => f.write_str("tail"),
            NodeRef::Nil => f.write_str("nil"),
        }
    }
}

/// Contents of one bundle, newest entry first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BundleView {
    pub node: NodeRef,
    /// Which link of the node the bundle shadows (`next`, `left`, `right`).
    pub link: &'static str,
    pub entries: Vec<(NodeRef, Timestamp)>,
}

impl fmt::Display for BundleView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}:", self.node, self.link)?;
        for (i, (target, ts)) in self.entries.iter().enumerate() {
            let sep = if i == 0 { " " } else { ", " };
            write!(f, "{sep}({ts}->{target})")?;
        }
        Ok(())
    }
}

/// Result of a linearizable range query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RangeQuery<V> {
    /// Snapshot the result reflects.
    pub ts: Timestamp,
    /// Matching pairs in increasing key order.
    pub items: Vec<(Key, V)>,
    /// Bundle dereferences from the last enter-range step through the end of
    /// collection.
    pub derefs: u64,
}

impl<V> RangeQuery<V> {
    pub fn keys(&self) -> impl Iterator<Item = Key> + '_ {
        self.items.iter().map(|(k, _)| *k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StructureKind {
    List,
    SkipList,
    Bst,
}

impl StructureKind {
    pub const ALL: [StructureKind; 3] = [StructureKind::List, StructureKind::SkipList, StructureKind::Bst];

    pub fn name(self) -> &'static str {
        match self {
            StructureKind::List => "list",
            StructureKind::SkipList => "skiplist",
            StructureKind::Bst => "bst",
        }
    }
}

impl fmt::Display for StructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StructureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "list" => Ok(StructureKind::List),
            "skiplist" => Ok(StructureKind::SkipList),
            "bst" => Ok(StructureKind::Bst),
            other => Err(Error::InvalidConfig(format!(
                "unknown structure {other:?} (expected list, skiplist or bst)"
            ))),
        }
    }
}

/// An ordered set of `Key`s carrying values, with linearizable range queries.
///
/// Every operation takes the caller's [`ThreadHandle`], obtained from
/// [`RangeSet::runtime`]. Inserting an existing key leaves its value alone.
pub trait RangeSet<V>: Send + Sync {
    fn with_settings(settings: Settings) -> Self
    where
        Self: Sized;

    fn kind(&self) -> StructureKind;

    fn runtime(&self) -> &Runtime;

    /// Inserts `key` if absent and returns the update's timestamp.
    fn insert_ts(&self, h: &ThreadHandle<'_>, key: Key, value: V) -> Option<Timestamp>;

    /// Removes `key` if present and returns the update's timestamp.
    fn remove_ts(&self, h: &ThreadHandle<'_>, key: Key) -> Option<Timestamp>;

    fn insert(&self, h: &ThreadHandle<'_>, key: Key, value: V) -> bool {
        self.insert_ts(h, key, value).is_some()
    }

    fn remove(&self, h: &ThreadHandle<'_>, key: Key) -> bool {
        self.remove_ts(h, key).is_some()
    }

    fn contains(&self, h: &ThreadHandle<'_>, key: Key) -> bool;

    /// Pairs with keys in `[low, high]` at a single instant.
    fn range_query(&self, h: &ThreadHandle<'_>, low: Key, high: Key) -> RangeQuery<V>;

    /// Pairs with keys in `[low, high]` as of an earlier timestamp. Fails with
    /// [`Error::HistoryReclaimed`] once cleanup has pruned past `ts` or, unless
    /// [`Settings::retain_history`] is set, once a node removed after `ts` may
    /// have been freed.
    fn range_query_at(
        &self,
        h: &ThreadHandle<'_>,
        low: Key,
        high: Key,
        ts: Timestamp,
    ) -> Result<RangeQuery<V>, Error>;

    /// Walks the current links without a snapshot. Not linearizable; kept as
    /// a baseline and a negative control for validation.
    fn range_query_unsynchronized(&self, h: &ThreadHandle<'_>, low: Key, high: Key) -> Vec<(Key, V)>;

    /// Retires bundle entries older than the oldest active snapshot.
    fn cleanup_pass(&self, h: &ThreadHandle<'_>) -> CleanupStats;

    /// Keys reachable through the current links, in order. Only meaningful
    /// while no updates run.
    fn keys(&self, h: &ThreadHandle<'_>) -> Vec<Key>;

    /// Structural checks that hold whenever no operation is in flight:
    /// ordering, link/bundle agreement, finalized heads.
    fn check_invariants(&self, h: &ThreadHandle<'_>) -> Result<(), String>;

    /// Entry counts of every bundle reachable through current links.
    fn bundle_sizes(&self, h: &ThreadHandle<'_>) -> Vec<usize>;

    /// Every bundle in the structure with its entries. With
    /// `retain_history`, nodes reachable only through old entries (removed
    /// nodes) are included; otherwise only the current links are followed.
    /// Only meaningful while no updates run.
    fn bundle_views(&self, h: &ThreadHandle<'_>) -> Vec<BundleView>;
}
