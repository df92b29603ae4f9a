//! Structure-specific properties: tree removal shapes, skip-list heights,
//! and how much each range query dereferences.

use std::collections::BTreeSet;

use bundled::{BundledList, BundledSkipList, BundledTree, RangeSet, Settings, MAX_KEY, MIN_KEY};
use rand::rngs::SmallRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

fn tree_with(keys: &[i64]) -> BundledTree<i64> {
    let t = BundledTree::new();
    {
        let h = t.runtime().register().unwrap();
        for &k in keys {
            assert!(t.insert(&h, k, k));
        }
    }
    t
}

fn all_keys(t: &BundledTree<i64>) -> Vec<i64> {
    let h = t.runtime().register().unwrap();
    t.range_query(&h, MIN_KEY, MAX_KEY).keys().collect()
}

#[test]
fn bst_remove_leaf() {
    let t = tree_with(&[50, 30, 70]);
    let h = t.runtime().register().unwrap();
    assert!(t.remove(&h, 30));
    assert_eq!(all_keys(&t), vec![50, 70]);
    assert_eq!(t.height(&h), 2);
    t.check_invariants(&h).unwrap();
}

#[test]
fn bst_remove_one_child() {
    let t = tree_with(&[50, 30, 20]);
    let h = t.runtime().register().unwrap();
    assert!(t.remove(&h, 30));
    assert_eq!(all_keys(&t), vec![20, 50]);
    assert_eq!(t.height(&h), 2);
    t.check_invariants(&h).unwrap();
}

#[test]
fn bst_remove_two_children_adjacent_successor() {
    // 70 is 50's right child and has no left child.
    let t = tree_with(&[50, 30, 70, 80]);
    let h = t.runtime().register().unwrap();
    let before = t.runtime().clock().read();
    let ts = t.remove_ts(&h, 50).unwrap();
    assert_eq!(ts.0, before.0 + 1, "adjacent successor needs one update");
    assert_eq!(all_keys(&t), vec![30, 70, 80]);
    assert!(!t.contains(&h, 50));
    assert!(t.contains(&h, 70));
    t.check_invariants(&h).unwrap();
}

#[test]
fn bst_remove_two_children_distant_successor() {
    let t = tree_with(&[50, 30, 70, 60, 80, 65]);
    let h = t.runtime().register().unwrap();
    let before = t.runtime().clock().read();
    let ts = t.remove_ts(&h, 50).unwrap();
    // The successor's unlink takes a second timestamp, which is not the
    // remove's linearization point.
    assert_eq!(ts.0, before.0 + 1);
    assert_eq!(t.runtime().clock().read().0, before.0 + 2);
    assert_eq!(all_keys(&t), vec![30, 60, 65, 70, 80]);
    for k in [30, 60, 65, 70, 80] {
        assert!(t.contains(&h, k), "{k}");
    }
    t.check_invariants(&h).unwrap();
    // 60 now sits where 50 was, and 65 hangs off 70.
    assert!(t.remove(&h, 60));
    assert_eq!(all_keys(&t), vec![30, 65, 70, 80]);
    t.check_invariants(&h).unwrap();
}

#[test]
fn bst_remove_root_repeatedly() {
    let t = tree_with(&[4, 2, 6, 1, 3, 5, 7]);
    let h = t.runtime().register().unwrap();
    let mut left: BTreeSet<i64> = (1..=7).collect();
    for k in [4, 5, 6, 2, 7, 3, 1] {
        assert!(t.remove(&h, k));
        left.remove(&k);
        assert_eq!(all_keys(&t), left.iter().copied().collect::<Vec<_>>());
        t.check_invariants(&h).unwrap();
    }
    assert_eq!(t.height(&h), 0);
}

#[test]
fn bst_collect_stays_near_the_range() {
    let mut keys: Vec<i64> = (0..2000).map(|k| k * 3).collect();
    keys.shuffle(&mut SmallRng::seed_from_u64(5));
    let t = tree_with(&keys);
    let h = t.runtime().register().unwrap();
    let mut rng = SmallRng::seed_from_u64(6);
    for _ in 0..500 {
        let low = rng.gen_range(0..6000);
        let high = low + rng.gen_range(0..100);
        let (q, visited) = t.range_query_traced(&h, low, high);
        let paths = t.search_path_keys(&h, low, high);
        for k in &visited {
            assert!((low..=high).contains(k) || paths.contains(k), "[{low}, {high}] visited {k}");
        }
        let want: Vec<i64> = (low..=high).filter(|k| k % 3 == 0 && *k < 6000).collect();
        assert_eq!(q.keys().collect::<Vec<_>>(), want);
    }
}

#[test]
fn linear_collect_dereferences_one_more_than_it_returns() {
    let l: BundledList<i64> = BundledList::new();
    let s: BundledSkipList<i64> = BundledSkipList::new();
    let hl = l.runtime().register().unwrap();
    let hs = s.runtime().register().unwrap();
    for k in (0..1000).step_by(2) {
        l.insert(&hl, k, k);
        s.insert(&hs, k, k);
    }
    for (low, high) in [(0, 0), (1, 1), (10, 60), (999, 1200), (-5, 3), (500, 500)] {
        let ql = l.range_query(&hl, low, high);
        let qs = s.range_query(&hs, low, high);
        assert_eq!(ql.derefs as usize, ql.items.len() + 1, "list [{low}, {high}]");
        assert_eq!(qs.derefs as usize, qs.items.len() + 1, "skiplist [{low}, {high}]");
        assert_eq!(ql.items, qs.items);
    }
}

#[test]
fn skiplist_heights_are_geometric() {
    let s: BundledSkipList<()> = BundledSkipList::new();
    let h = s.runtime().register().unwrap();
    for k in 0..100_000 {
        s.insert(&h, k, ());
    }
    let heights = s.node_heights(&h);
    assert_eq!(heights.len(), 100_000);
    let mean = heights.iter().sum::<usize>() as f64 / heights.len() as f64;
    assert!((1.9..=2.1).contains(&mean), "mean height {mean}");
    let share_one = heights.iter().filter(|&&x| x == 1).count() as f64 / 100_000.0;
    assert!((share_one - 0.5).abs() < 0.02, "share of height 1: {share_one}");
    assert!(heights.iter().all(|&x| (1..=s.max_level()).contains(&x)));
}

#[test]
fn skiplist_results_do_not_depend_on_max_level() {
    let settings = Settings::default();
    let flat: BundledSkipList<i64> = BundledSkipList::with_max_level(settings.clone(), 1);
    let tall: BundledSkipList<i64> = BundledSkipList::with_max_level(settings, 20);
    let hf = flat.runtime().register().unwrap();
    let ht = tall.runtime().register().unwrap();
    let mut rng = SmallRng::seed_from_u64(3);
    for _ in 0..20_000 {
        let k = rng.gen_range(0..500);
        match rng.gen_range(0..4) {
            0 => assert_eq!(flat.insert_ts(&hf, k, k), tall.insert_ts(&ht, k, k)),
            1 => assert_eq!(flat.remove_ts(&hf, k), tall.remove_ts(&ht, k)),
            2 => assert_eq!(flat.contains(&hf, k), tall.contains(&ht, k)),
            _ => assert_eq!(flat.range_query(&hf, k, k + 30), tall.range_query(&ht, k, k + 30)),
        }
    }
    assert!(flat.node_heights(&hf).iter().all(|&x| x == 1));
}
