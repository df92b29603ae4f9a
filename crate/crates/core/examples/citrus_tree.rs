//! The internal BST: removing a node with two children replaces it with a
//! copy of its successor, and range queries stay consistent throughout.

use bundled::{BundledTree, RangeSet};

fn main() {
    let t: BundledTree<i64> = BundledTree::new();
    let h = t.runtime().register().unwrap();
    for k in [50, 30, 70, 20, 40, 60, 80, 65] {
        t.insert(&h, k, k);
    }
    println!("height {} with keys {:?}", t.height(&h), t.keys(&h));

    // 50 has two children; its successor 60 is not its right child.
    let before = t.range_query(&h, 0, 100);
    t.remove(&h, 50);
    let after = t.range_query(&h, 0, 100);
    println!("at {}: {:?}", before.ts, before.keys().collect::<Vec<_>>());
    println!("at {}: {:?}", after.ts, after.keys().collect::<Vec<_>>());

    let (q, visited) = t.range_query_traced(&h, 55, 75);
    println!("[55, 75] -> {:?}, visited {visited:?}", q.keys().collect::<Vec<_>>());
    println!("search paths: {:?}", t.search_path_keys(&h, 55, 75));
    t.check_invariants(&h).unwrap();
}
