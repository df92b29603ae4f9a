//! A small throughput sweep that appends its rows to a CSV file, in the same
//! schema `bundled sweep --csv` writes.

use std::time::Duration;

use bundled::harness::{append_rows, read_rows, run, CsvRow, Mix, RunLength, WorkloadConfig};
use bundled::StructureKind;

fn main() -> std::io::Result<()> {
    let path = std::env::temp_dir().join("bundled-throughput.csv");
    let _ = std::fs::remove_file(&path);
    for ds in StructureKind::ALL {
        for mix in Mix::grid() {
            let mut c = WorkloadConfig::new(ds);
            c.threads = 2;
            c.mix = mix;
            c.key_range = 10_000;
            c.length = RunLength::Timed(Duration::from_millis(200));
            let out = run(&c).expect("valid configuration");
            println!("{ds:>8} {mix:>9}: {:.3} Mops/s", out.stats.throughput_mops());
            append_rows(&path, &[CsvRow::from_run(&c, 0, &out)])?;
        }
    }
    println!("{} rows in {}", read_rows(&path)?.len(), path.display());
    Ok(())
}
