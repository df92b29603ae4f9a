//! The skip list keeps bundles only on its bottom level; upper levels are
//! plain index links. Node heights follow a geometric distribution.

use bundled::{BundledSkipList, RangeSet, Settings};

fn main() {
    let sl: BundledSkipList<u64> = BundledSkipList::new();
    let h = sl.runtime().register().unwrap();
    for k in 0..100_000 {
        sl.insert(&h, k, k as u64 * 2);
    }
    let heights = sl.node_heights(&h);
    let mean = heights.iter().sum::<usize>() as f64 / heights.len() as f64;
    println!("{} nodes, mean height {mean:.3}, tallest {}", heights.len(), heights.iter().max().unwrap());

    let q = sl.range_query(&h, 500, 509);
    println!("[500, 509] at {}: {:?}", q.ts, q.keys().collect::<Vec<_>>());
    println!("bundles dereferenced: {}", q.derefs);

    // A single level degenerates into a bundled list with the same results.
    let flat: BundledSkipList<u64> = BundledSkipList::with_max_level(Settings::default(), 1);
    let hf = flat.runtime().register().unwrap();
    for k in 0..1000 {
        flat.insert(&hf, k, k as u64 * 2);
    }
    assert_eq!(flat.range_query(&hf, 500, 509).items, q.items);
}
