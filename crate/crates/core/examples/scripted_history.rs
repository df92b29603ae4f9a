//! Replays four updates on each structure and prints every bundle. Each
//! structure is then queried as of every timestamp.

use bundled::harness::replay_scripted;
use bundled::StructureKind;

fn main() {
    for ds in StructureKind::ALL {
        let r = replay_scripted(ds);
        println!("== {ds} ==");
        for v in &r.views {
            println!("{v}");
        }
        for (ts, keys) in &r.snapshots {
            println!("as of {ts}: {keys:?}");
        }
        assert!(r.ok(), "{:#?}", r.mismatches);
    }
}
