use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Barrier;
use std::thread;
use std::time::{Duration, Instant};

use rand::rngs::SmallRng;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};

use super::config::{RunLength, WorkloadConfig};
use super::log::{ThreadLog, UpdateKind};
use super::oracle::{validate, ValidationParams, ValidationReport};
use crate::bundle::TimestampPolicy;
use crate::reclamation::{run_cleaner, AuditReport, CleanerReport};
use crate::runtime::{Settings, ThreadHandle};
use crate::set::{Key, RangeSet, StructureKind};
use crate::{BundledList, BundledSkipList, BundledTree, Error};

/// Counts and timing of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub elapsed: Duration,
    pub updates: u64,
    pub contains: u64,
    pub rqs: u64,
    /// Completed operations per worker.
    pub per_thread_ops: Vec<u64>,
}

impl RunStats {
    pub fn total_ops(&self) -> u64 {
        self.updates + self.contains + self.rqs
    }

    pub fn throughput_mops(&self) -> f64 {
        let secs = self.elapsed.as_secs_f64();
        if secs == 0.0 {
            0.0
        } else {
            self.total_ops() as f64 / secs / 1e6
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub stats: RunStats,
    /// Present when the run was validated.
    pub validation: Option<ValidationReport>,
    pub cleaner: Option<CleanerReport>,
    /// Allocation counters read after the structure was dropped.
    pub audit: AuditReport,
    /// Worker logs (prefill first) when the run was validated.
    pub logs: Vec<ThreadLog>,
}

impl RunOutcome {
    pub fn violations(&self) -> u64 {
        self.validation.as_ref().map_or(0, ValidationReport::violations)
    }
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_add(1).wrapping_mul(0xd1b5_4a32_d192_ed03)
}

/// Inserts a uniformly chosen half of `0..key_range`, in random order,
/// logging each insert.
pub fn prefill<S: RangeSet<i64> + ?Sized>(set: &S, h: &ThreadHandle<'_>, key_range: u64, seed: u64, log: &mut ThreadLog) {
    let mut rng = SmallRng::seed_from_u64(stream_seed(seed, u64::MAX));
    let n = key_range as usize;
    for i in sample(&mut rng, n, n / 2) {
        let key = i as Key;
        let ts = set
            .insert_ts(h, key, key)
            .expect("prefill keys are distinct and the structure starts empty");
        log.update(UpdateKind::Insert, key, ts);
    }
}

/// Settings a workload implies for the structure under test.
pub fn settings_for(config: &WorkloadConfig) -> Settings {
    Settings {
        max_threads: config.threads + 2,
        timestamps: if config.rq_advance {
            TimestampPolicy::RangeQueriesAdvance
        } else {
            TimestampPolicy::UpdatesAdvance
        },
        epoch_advance_threshold: config.epoch_advance_threshold,
        seed: config.seed,
        ..Settings::default()
    }
}

struct StopOnDrop<'a>([&'a AtomicBool; 2]);

impl Drop for StopOnDrop<'_> {
    fn drop(&mut self) {
        for flag in self.0 {
            flag.store(true, Ordering::Release);
        }
    }
}

struct WorkerResult {
    log: ThreadLog,
    updates: u64,
    contains: u64,
    rqs: u64,
}

fn worker<S: RangeSet<i64> + ?Sized>(
    set: &S,
    config: &WorkloadConfig,
    index: usize,
    start: &Barrier,
    stop: &AtomicBool,
) -> WorkerResult {
    let h = set
        .runtime()
        .register_seeded(index as u64)
        .expect("structure sized for every worker");
    let mut rng = SmallRng::seed_from_u64(stream_seed(config.seed, index as u64));
    let mut out = WorkerResult { log: ThreadLog::default(), updates: 0, contains: 0, rqs: 0 };
    let clock = set.runtime().clock();
    let limit = match config.length {
        RunLength::Timed(_) => u64::MAX,
        RunLength::OpsPerThread(n) => n,
    };
    let update_cut = config.mix.updates as u32;
    let contains_cut = update_cut + config.mix.contains as u32;
    let key_range = config.key_range as Key;
    let span = config.rq_size as Key;
    start.wait();
    let mut done = 0u64;
    while done < limit && !stop.load(Ordering::Relaxed) {
        let dice = rng.gen_range(0..100u32);
        if dice < update_cut {
            let key = rng.gen_range(0..key_range);
            let (kind, ts) = if rng.gen::<bool>() {
                (UpdateKind::Insert, set.insert_ts(&h, key, key))
            } else {
                (UpdateKind::Remove, set.remove_ts(&h, key))
            };
            if let (true, Some(ts)) = (config.validate, ts) {
                out.log.update(kind, key, ts);
            }
            out.updates += 1;
        } else if dice < contains_cut {
            let key = rng.gen_range(0..key_range);
            if config.validate {
                let c1 = clock.read();
                let r = set.contains(&h, key);
                let c2 = clock.read();
                out.log.contains_call(key, c1, c2, r);
            } else {
                set.contains(&h, key);
            }
            out.contains += 1;
        } else {
            let low = rng.gen_range(0..=key_range - span);
            let high = low + span - 1;
            if config.unsafe_rq {
                let ts = clock.read();
                let items = set.range_query_unsynchronized(&h, low, high);
                if config.validate {
                    out.log.range_query(low, high, ts, items.iter().map(|(k, _)| *k), 0);
                }
            } else {
                let q = set.range_query(&h, low, high);
                if config.validate {
                    out.log.range_query(low, high, q.ts, q.keys(), q.derefs);
                }
            }
            out.rqs += 1;
        }
        done += 1;
    }
    out
}

/// Runs `config` against `set`, which must be empty and sized for
/// `config.threads + 2` registered threads. Returns the stats, the logs
/// (prefill first) and the cleaner's report.
pub fn drive<S: RangeSet<i64> + ?Sized>(set: &S, config: &WorkloadConfig) -> (RunStats, Vec<ThreadLog>, Option<CleanerReport>) {
    let mut prefill_log = ThreadLog::default();
    {
        let h = set.runtime().register_seeded(u64::MAX).expect("structure sized for the driver");
        prefill(set, &h, config.key_range, config.seed, &mut prefill_log);
    }
    if !config.validate {
        prefill_log = ThreadLog::default();
    }
    let start = Barrier::new(config.threads + 1);
    let stop = AtomicBool::new(false);
    let cleaner_stop = AtomicBool::new(false);
    let (elapsed, results, cleaner) = thread::scope(|s| {
        // A panicking worker must not leave the others or the cleaner running.
        let _release = StopOnDrop([&stop, &cleaner_stop]);
        let cleaner = config
            .cleanup_interval
            .map(|interval| {
                let cleaner_stop = &cleaner_stop;
                s.spawn(move || run_cleaner(set, cleaner_stop, interval))
            });
        let workers: Vec<_> = (0..config.threads)
            .map(|i| {
                let (start, stop) = (&start, &stop);
                s.spawn(move || worker(set, config, i, start, stop))
            })
            .collect();
        start.wait();
        let began = Instant::now();
        if let RunLength::Timed(d) = config.length {
            thread::sleep(d);
            stop.store(true, Ordering::Relaxed);
        }
        let results: Vec<WorkerResult> = workers.into_iter().map(|w| w.join().expect("worker panicked")).collect();
        let elapsed = began.elapsed();
        cleaner_stop.store(true, Ordering::Release);
        let cleaner = cleaner.map(|c| c.join().expect("cleaner panicked"));
        (elapsed, results, cleaner)
    });
    let mut stats = RunStats { elapsed, ..RunStats::default() };
    let mut logs = vec![prefill_log];
    for r in results {
        stats.updates += r.updates;
        stats.contains += r.contains;
        stats.rqs += r.rqs;
        stats.per_thread_ops.push(r.updates + r.contains + r.rqs);
        logs.push(r.log);
    }
    (stats, logs, cleaner)
}

fn run_with<S: RangeSet<i64>>(config: &WorkloadConfig, set: S) -> RunOutcome {
    let audit = set.runtime().audit();
    let (stats, logs, cleaner) = drive(&set, config);
    let validation = config.validate.then(|| {
        let h = set.runtime().register().expect("structure sized for the driver");
        let final_keys = set.keys(&h);
        let params = ValidationParams {
            shared_timestamps: config.rq_advance,
            check_collect_derefs: config.ds != StructureKind::Bst && !config.unsafe_rq,
            final_keys: Some(final_keys),
        };
        validate(&logs, &params)
    });
    drop(set);
    RunOutcome {
        stats,
        validation,
        cleaner,
        audit: audit.report(),
        logs: if config.validate { logs } else { Vec::new() },
    }
}

/// Builds the configured structure and runs the workload on it, checking
/// the logs afterwards if the config asks for validation.
pub fn run(config: &WorkloadConfig) -> Result<RunOutcome, Error> {
    config.check()?;
    let settings = settings_for(config);
    Ok(match config.ds {
        StructureKind::List => run_with(config, BundledList::with_settings(settings)),
        StructureKind::SkipList => run_with(config, BundledSkipList::with_settings(settings)),
        StructureKind::Bst => run_with(config, BundledTree::with_settings(settings)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Mix;

    #[test]
    fn prefill_inserts_exactly_half() {
        for (range, want) in [(10_000u64, 5_000usize), (2, 1), (3, 1)] {
            let l: BundledList<i64> = BundledList::new();
            let h = l.runtime().register().unwrap();
            let mut log = ThreadLog::default();
            prefill(&l, &h, range, 9, &mut log);
            let keys = l.keys(&h);
            assert_eq!(keys.len(), want);
            let mut logged: Vec<Key> = log.updates.iter().map(|u| u.key).collect();
            logged.sort_unstable();
            assert_eq!(logged, keys);
        }
    }

    #[test]
    fn read_only_run_logs_no_updates() {
        let mut c = WorkloadConfig::new(StructureKind::SkipList);
        c.key_range = 1000;
        c.mix = Mix::new(0, 100, 0).unwrap();
        c.length = RunLength::OpsPerThread(2000);
        c.threads = 2;
        c.validate = true;
        let out = run(&c).unwrap();
        assert_eq!(out.stats.updates, 0);
        assert_eq!(out.logs.iter().skip(1).map(|l| l.updates.len()).sum::<usize>(), 0);
        assert_eq!(out.violations(), 0);
        assert_eq!(out.stats.total_ops(), out.stats.per_thread_ops.iter().sum::<u64>());
    }
}
