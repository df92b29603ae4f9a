//! Runs a logged concurrent workload, then replays the logs by timestamp to
//! check every range query and contains call. The same workload with
//! unsynchronized range queries serves as a negative control.

use std::time::Duration;

use bundled::harness::{run, Mix, RunLength, WorkloadConfig};
use bundled::StructureKind;

fn main() {
    for ds in StructureKind::ALL {
        let mut c = WorkloadConfig::new(ds);
        c.threads = 4;
        c.key_range = 1000;
        c.mix = Mix::new(50, 40, 10).unwrap();
        c.length = RunLength::Timed(Duration::from_millis(500));
        c.validate = true;
        let out = run(&c).unwrap();
        println!("{ds}: {}", out.validation.as_ref().unwrap());
        assert_eq!(out.violations(), 0);

        c.unsafe_rq = true;
        c.mix = Mix::new(90, 0, 10).unwrap();
        let out = run(&c).unwrap();
        println!("{ds} (unsynchronized): {} violations", out.violations());
    }
}
