use std::fs::OpenOptions;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::WorkloadConfig;
use super::run::RunOutcome;

/// One results row. Column order is the file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub ds: String,
    pub workload: String,
    pub threads: usize,
    pub rq_size: u64,
    pub key_range: u64,
    pub trial: u32,
    pub duration_s: f64,
    pub total_ops: u64,
    pub updates: u64,
    pub contains: u64,
    pub rqs: u64,
    pub throughput_mops: f64,
    pub violations: u64,
}

pub const CSV_COLUMNS: [&str; 13] = [
    "ds",
    "workload",
    "threads",
    "rq_size",
    "key_range",
    "trial",
    "duration_s",
    "total_ops",
    "updates",
    "contains",
    "rqs",
    "throughput_mops",
    "violations",
];

impl CsvRow {
    pub fn from_run(config: &WorkloadConfig, trial: u32, out: &RunOutcome) -> Self {
        CsvRow {
            ds: config.ds.to_string(),
            workload: config.workload(),
            threads: config.threads,
            rq_size: config.rq_size,
            key_range: config.key_range,
            trial,
            duration_s: out.stats.elapsed.as_secs_f64(),
            total_ops: out.stats.total_ops(),
            updates: out.stats.updates,
            contains: out.stats.contains,
            rqs: out.stats.rqs,
            throughput_mops: out.stats.throughput_mops(),
            violations: out.violations(),
        }
    }
}

fn csv_err(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::new(io::ErrorKind::InvalidData, format!("{other:?}")),
    }
}

/// Appends rows to `path`, writing the header first if the file is new or
/// empty.
pub fn append_rows(path: &Path, rows: &[CsvRow]) -> io::Result<()> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let fresh = file.metadata()?.len() == 0;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()
}

/// Reads every row of a results file, rejecting files whose header differs
/// from [`CSV_COLUMNS`].
pub fn read_rows(path: &Path) -> io::Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if header != CSV_COLUMNS {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unexpected header {header:?}"),
        ));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}
