//! Command-line driver: throughput runs, validated runs, sweeps over the
//! experiment grid, and a self-test of the scripted history.
//!
//! Exit status is 2 for usage or configuration errors, 1 when validation
//! finds a violation or the self-test fails, 0 otherwise.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use bundled::harness::{append_rows, replay_scripted, run, CsvRow, Mix, RunLength, RunOutcome, WorkloadConfig};
use bundled::{Error, StructureKind};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bundled", version, about = "Bundled-reference range query benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure throughput of one configuration.
    Bench(RunArgs),
    /// Run one configuration with logging and check the logs afterwards.
    Validate(RunArgs),
    /// Replay the four-update scripted history and print every bundle.
    Selftest,
    /// Run every structure, mix and thread count of a grid.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Seconds per trial.
    #[arg(long, default_value_t = 3.0)]
    duration_s: f64,
    /// Fixed operation count per thread instead of a timed run.
    #[arg(long, conflicts_with = "duration_s")]
    ops_per_thread: Option<u64>,
    /// Keys per range query.
    #[arg(long, default_value_t = 50)]
    rq_size: u64,
    /// Keys are drawn from 0..key-range [default: 10000 for list, 1000000 otherwise].
    #[arg(long)]
    key_range: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    trials: u32,
    /// Append one row per trial to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Range queries advance the global clock instead of updates.
    #[arg(long)]
    rq_advance: bool,
    /// Use unsynchronized traversals in place of range queries.
    #[arg(long)]
    unsafe_rq: bool,
    /// Background cleanup period in milliseconds.
    #[arg(long, default_value_t = 10)]
    cleanup_interval_ms: u64,
    /// Disable background bundle cleanup.
    #[arg(long)]
    no_cleanup: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "skiplist")]
    ds: StructureKind,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Percent updates, contains and range queries, as U-C-RQ.
    #[arg(long, default_value = "10-80-10")]
    mix: Mix,
    /// Log and check every operation (implied by `validate`).
    #[arg(long)]
    validate: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "list,skiplist,bst")]
    ds: Vec<StructureKind>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    threads: Vec<usize>,
    /// Mixes to run [default: 2-88-10, 10-80-10, 50-40-10, 90-0-10].
    #[arg(long, value_delimiter = ',')]
    mix: Vec<Mix>,
    #[arg(long)]
    validate: bool,
    #[command(flatten)]
    common: Common,
}

fn config(ds: StructureKind, threads: usize, mix: Mix, validate: bool, c: &Common) -> Result<WorkloadConfig, Error> {
    let mut w = WorkloadConfig::new(ds);
    w.threads = threads;
    w.mix = mix;
    w.validate = validate;
    w.rq_size = c.rq_size;
    w.key_range = c.key_range.unwrap_or(w.key_range);
    w.seed = c.seed;
    w.rq_advance = c.rq_advance;
    w.unsafe_rq = c.unsafe_rq;
    w.cleanup_interval = (!c.no_cleanup).then(|| Duration::from_millis(c.cleanup_interval_ms.max(1)));
    w.length = match c.ops_per_thread {
        Some(n) => RunLength::OpsPerThread(n),
        None if c.duration_s.is_finite() && c.duration_s > 0.0 => {
            RunLength::Timed(Duration::from_secs_f64(c.duration_s))
        }
        None => return Err(Error::InvalidConfig(format!("duration {} is not positive", c.duration_s))),
    };
    if c.trials == 0 {
        return Err(Error::InvalidConfig("at least one trial is required".into()));
    }
    w.check()?;
    Ok(w)
}

fn report(w: &WorkloadConfig, trial: u32, out: &RunOutcome) {
    let s = &out.stats;
    println!(
        "{} {} threads={} trial={} ops={} ({} upd, {} contains, {} rq) {:.3} Mops/s",
        w.ds,
        w.mix,
        w.threads,
        trial,
        s.total_ops(),
        s.updates,
        s.contains,
        s.rqs,
        s.throughput_mops()
    );
    if let Some(c) = &out.cleaner {
        println!(
            "  cleanup: {} passes, {} entries retired, thresholds monotonic: {}",
            c.passes,
            c.entries_retired,
            c.thresholds_monotonic()
        );
    }
    if let Some(v) = &out.validation {
        println!("  validation: {v}");
        for e in &v.examples {
            println!("    {e}");
        }
    }
}

/// Runs every trial of `w`; returns the number of violations found.
fn run_trials(w: &WorkloadConfig, c: &Common) -> Result<u64, String> {
    let mut violations = 0;
    for trial in 0..c.trials {
        let mut wt = w.clone();
        wt.seed = w.seed.wrapping_add(trial as u64);
        let out = run(&wt).map_err(|e| e.to_string())?;
        report(&wt, trial, &out);
        if let Some(path) = &c.csv {
            append_rows(path, &[CsvRow::from_run(&wt, trial, &out)])
                .map_err(|e| format!("writing {}: {e}", path.display()))?;
        }
        violations += out.violations();
    }
    Ok(violations)
}

fn selftest() -> ExitCode {
    let mut ok = true;
    for ds in StructureKind::ALL {
        let r = replay_scripted(ds);
        println!("{ds}:");
        for v in &r.views {
            println!("  {v}");
        }
        for (ts, keys) in &r.snapshots {
            println!("  snapshot {ts}: {keys:?}");
        }
        for m in &r.mismatches {
            println!("  MISMATCH {m}");
        }
        println!("  {}", if r.ok() { "ok" } else { "FAILED" });
        ok &= r.ok();
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut jobs = Vec::new();
    let common = match cli.command {
        Command::Selftest => return selftest(),
        Command::Bench(a) => {
            jobs.push(config(a.ds, a.threads, a.mix, a.validate, &a.common));
            a.common
        }
        Command::Validate(a) => {
            jobs.push(config(a.ds, a.threads, a.mix, true, &a.common));
            a.common
        }
        Command::Sweep(a) => {
            let mixes = if a.mix.is_empty() { Mix::grid().to_vec() } else { a.mix };
            for &ds in &a.ds {
                for &mix in &mixes {
                    for &t in &a.threads {
                        jobs.push(config(ds, t, mix, a.validate, &a.common));
                    }
                }
            }
            a.common
        }
    };
    let jobs: Vec<WorkloadConfig> = match jobs.into_iter().collect() {
        Ok(j) => j,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut violations = 0;
    for w in &jobs {
        match run_trials(w, &common) {
            Ok(v) => violations += v,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
    }
    if violations > 0 {
        eprintln!("{violations} violations");
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
