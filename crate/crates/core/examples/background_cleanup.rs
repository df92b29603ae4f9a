//! Bundles grow with every update until cleanup retires entries no active
//! range query can need. Here the cleaner runs on its own thread while a
//! writer churns a small key range.

use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::Duration;

use bundled::reclamation::run_cleaner;
use bundled::{BundledList, RangeSet};

fn total(sizes: &[usize]) -> usize {
    sizes.iter().sum()
}

fn main() {
    let list: BundledList<i64> = BundledList::new();
    let audit = list.runtime().audit();
    let stop = AtomicBool::new(false);
    let report = thread::scope(|s| {
        let cleaner = s.spawn(|| run_cleaner(&list, &stop, Duration::from_millis(5)));
        let h = list.runtime().register().unwrap();
        for round in 0..20_000i64 {
            let k = round % 64;
            if !list.insert(&h, k, round) {
                list.remove(&h, k);
            }
        }
        stop.store(true, Ordering::Release);
        cleaner.join().unwrap()
    });
    let h = list.runtime().register().unwrap();
    let sizes = list.bundle_sizes(&h);
    println!(
        "cleaner: {} passes retired {} entries; {} bundles hold {} entries",
        report.passes,
        report.entries_retired,
        sizes.len(),
        total(&sizes)
    );
    assert!(report.thresholds_monotonic());
    // With no range query active, the final pass leaves one entry per bundle.
    assert!(sizes.iter().all(|&n| n == 1));
    drop(h);
    drop(list);
    let a = audit.report();
    println!("after drop: {} nodes and {} entries still live", a.live_nodes(), a.live_entries());
}
