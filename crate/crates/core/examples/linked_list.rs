//! Basic use of the bundled lazy list from several threads.

use std::thread;

use bundled::{BundledList, RangeSet};

fn main() {
    let list: BundledList<String> = BundledList::new();
    thread::scope(|s| {
        for t in 0..4i64 {
            let list = &list;
            s.spawn(move || {
                let h = list.runtime().register().unwrap();
                for k in (t..200).step_by(4) {
                    list.insert(&h, k, format!("v{k}"));
                }
            });
        }
    });

    let h = list.runtime().register().unwrap();
    for k in (0..200).step_by(3) {
        list.remove(&h, k);
    }
    let q = list.range_query(&h, 10, 30);
    println!("snapshot {}: {:?}", q.ts, q.items);
    println!("contains(12) = {}, contains(13) = {}", list.contains(&h, 12), list.contains(&h, 13));
    list.check_invariants(&h).unwrap();
}
