//! Bundle contents and snapshots of a short scripted history, and what
//! cleanup leaves of them.

use bundled::{BundleView, BundledList, BundledSkipList, BundledTree, Error, NodeRef, RangeSet, Settings, Timestamp};

const HEAD: NodeRef = NodeRef::Head;
const TAIL: NodeRef = NodeRef::Tail;

fn k(key: i64) -> NodeRef {
    NodeRef::Key(key)
}

fn entries(view: &BundleView) -> Vec<(NodeRef, u64)> {
    view.entries.iter().map(|&(n, ts)| (n, ts.0)).collect()
}

fn view_of(views: &[BundleView], node: NodeRef) -> Vec<(NodeRef, u64)> {
    entries(views.iter().find(|v| v.node == node).unwrap_or_else(|| panic!("no bundle for {node}")))
}

fn script<S: RangeSet<i64>>(set: &S) -> Vec<Option<Timestamp>> {
    let h = set.runtime().register().unwrap();
    vec![
        set.insert_ts(&h, 20, 20),
        set.insert_ts(&h, 30, 30),
        set.insert_ts(&h, 10, 10),
        set.remove_ts(&h, 20),
    ]
}

fn retaining() -> Settings {
    Settings { retain_history: true, ..Settings::default() }
}

fn check_linear<S: RangeSet<i64>>(set: S) {
    let stamps = script(&set);
    assert_eq!(stamps, [1, 2, 3, 4].map(|t| Some(Timestamp(t))));
    let h = set.runtime().register().unwrap();
    let views = set.bundle_views(&h);
    assert_eq!(views.len(), 4);
    assert_eq!(view_of(&views, HEAD), vec![(k(10), 3), (k(20), 1), (TAIL, 0)]);
    assert_eq!(view_of(&views, k(10)), vec![(k(30), 4), (k(20), 3)]);
    assert_eq!(view_of(&views, k(20)), vec![(HEAD, 4), (k(30), 2), (TAIL, 1)]);
    assert_eq!(view_of(&views, k(30)), vec![(TAIL, 2)]);
    check_snapshots(&set);
}

fn check_snapshots<S: RangeSet<i64>>(set: &S) {
    let h = set.runtime().register().unwrap();
    let want: [&[i64]; 5] = [&[], &[20], &[20, 30], &[10, 20, 30], &[10, 30]];
    for (t, keys) in want.iter().enumerate() {
        let q = set.range_query_at(&h, 0, 100, Timestamp(t as u64)).unwrap();
        assert_eq!(q.keys().collect::<Vec<_>>(), *keys, "at {t}");
        assert_eq!(q.ts, Timestamp(t as u64));
    }
    let now = set.range_query(&h, 0, 100);
    assert_eq!((now.ts, now.keys().collect::<Vec<_>>()), (Timestamp(4), vec![10, 30]));
    assert_eq!(
        set.range_query_at(&h, 0, 100, Timestamp(5)).unwrap_err(),
        Error::FutureSnapshot { requested: Timestamp(5), now: Timestamp(4) }
    );
}

#[test]
fn list_bundles_after_script() {
    check_linear(BundledList::with_settings(retaining()));
}

#[test]
fn skiplist_bottom_level_bundles_after_script() {
    check_linear(BundledSkipList::with_settings(retaining()));
}

#[test]
fn bst_snapshots_after_script() {
    let t = BundledTree::with_settings(retaining());
    script(&t);
    check_snapshots(&t);
}

#[test]
fn cleanup_with_no_queries_keeps_only_newest_entries() {
    let l: BundledList<i64> = BundledList::new();
    let audit = l.runtime().audit();
    script(&l);
    let h = l.runtime().register().unwrap();
    let stats = l.cleanup_pass(&h);
    assert_eq!(stats.threshold, Timestamp(4));
    // head loses (1->20) and (0->tail); 10 loses (3->20); 30 keeps its only one.
    assert_eq!(stats.entries_retired, 3);
    let views = l.bundle_views(&h);
    assert_eq!(view_of(&views, HEAD), vec![(k(10), 3)]);
    assert_eq!(view_of(&views, k(10)), vec![(k(30), 4)]);
    assert_eq!(view_of(&views, k(30)), vec![(TAIL, 2)]);
    assert!(views.iter().all(|v| v.node != k(20)), "removed node is unreachable");
    assert_eq!(l.runtime().horizon(), Timestamp(4));
    assert!(matches!(
        l.range_query_at(&h, 0, 100, Timestamp(3)),
        Err(Error::HistoryReclaimed { .. })
    ));
    assert_eq!(l.range_query_at(&h, 0, 100, Timestamp(4)).unwrap().keys().collect::<Vec<_>>(), vec![10, 30]);

    // Once the epoch moves on, node 20 is freed with its own three entries,
    // along with the three pruned ones.
    for _ in 0..4 {
        h.collect();
    }
    let r = audit.report();
    assert_eq!(r.nodes_freed, 1);
    assert_eq!(r.entries_freed, 3 + 3);
}

#[test]
fn removal_without_retained_history_refuses_older_snapshots() {
    let l: BundledList<i64> = BundledList::new();
    let h = l.runtime().register().unwrap();
    l.insert(&h, 1, 1);
    l.insert(&h, 2, 2);
    assert_eq!(l.range_query_at(&h, 0, 9, Timestamp(1)).unwrap().keys().collect::<Vec<_>>(), vec![1]);
    let removed = l.remove_ts(&h, 1).unwrap();
    assert_eq!(
        l.range_query_at(&h, 0, 9, Timestamp(2)).unwrap_err(),
        Error::HistoryReclaimed { requested: Timestamp(2), horizon: removed }
    );
    assert_eq!(l.range_query_at(&h, 0, 9, removed).unwrap().keys().collect::<Vec<_>>(), vec![2]);
}

#[test]
fn single_entry_bundles_survive_cleanup() {
    for set in [
        Box::new(BundledList::<i64>::new()) as Box<dyn RangeSet<i64>>,
        Box::new(BundledSkipList::<i64>::new()),
        Box::new(BundledTree::<i64>::new()),
    ] {
        let h = set.runtime().register().unwrap();
        assert_eq!(set.cleanup_pass(&h).entries_retired, 0, "{}", set.kind());
        assert!(set.bundle_sizes(&h).iter().all(|&n| n == 1));
    }
}
