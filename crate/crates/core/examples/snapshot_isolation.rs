//! A range query sees one instant even while writers run beside it. Each
//! writer moves a token between two keys, so every snapshot holds exactly
//! one key per writer.

use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;

use bundled::{BundledSkipList, RangeSet, Settings};

const WRITERS: i64 = 3;

fn main() {
    let sl: BundledSkipList<()> = BundledSkipList::with_settings(Settings { max_threads: 8, ..Settings::default() });
    let h = sl.runtime().register().unwrap();
    for w in 0..WRITERS {
        sl.insert(&h, w * 10, ());
    }
    let stop = AtomicBool::new(false);
    let mut checked = 0;
    thread::scope(|s| {
        for w in 0..WRITERS {
            let (sl, stop) = (&sl, &stop);
            s.spawn(move || {
                let h = sl.runtime().register().unwrap();
                let (a, b) = (w * 10, w * 10 + 5);
                while !stop.load(Ordering::Relaxed) {
                    // Insert the new position before removing the old one,
                    // so a snapshot may briefly see both.
                    sl.insert(&h, b, ());
                    sl.remove(&h, a);
                    sl.insert(&h, a, ());
                    sl.remove(&h, b);
                }
            });
        }
        for _ in 0..20_000 {
            let q = sl.range_query(&h, 0, WRITERS * 10);
            for w in 0..WRITERS {
                let n = q.keys().filter(|k| k / 10 == w).count();
                assert!((1..=2).contains(&n), "writer {w} has {n} keys at {}", q.ts);
            }
            checked += 1;
        }
        stop.store(true, Ordering::Relaxed);
    });
    println!("{checked} snapshots, each with every writer's token present");
}
