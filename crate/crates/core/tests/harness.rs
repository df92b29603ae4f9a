//! The workload driver and log checker, plus the CLI's exit codes.

use std::collections::BTreeSet;
use std::process::Command;
use std::time::Duration;

use bundled::harness::{
    append_rows, drive, read_rows, run, settings_for, validate, CsvRow, Mix, RunLength, ThreadLog, UpdateKind,
    ValidationParams, WorkloadConfig, CSV_COLUMNS,
};
use bundled::{BundledList, BundledSkipList, BundledTree, RangeSet, StructureKind, Timestamp};
use proptest::prelude::*;

fn small(ds: StructureKind) -> WorkloadConfig {
    let mut c = WorkloadConfig::new(ds);
    c.key_range = 512;
    c.rq_size = 16;
    c.validate = true;
    c
}

#[test]
fn single_thread_runs_are_reproducible() {
    for ds in StructureKind::ALL {
        let mut c = small(ds);
        c.mix = Mix::new(50, 40, 10).unwrap();
        c.length = RunLength::OpsPerThread(20_000);
        c.seed = 77;
        let a = run(&c).unwrap();
        let b = run(&c).unwrap();
        assert_eq!(a.logs, b.logs, "{ds}");
        assert_eq!(a.stats.updates, b.stats.updates);
        assert_eq!(a.violations(), 0);
        c.seed = 78;
        assert_ne!(run(&c).unwrap().logs, a.logs, "{ds}: seed has no effect");
    }
}

#[test]
fn concurrent_runs_validate_cleanly() {
    for ds in StructureKind::ALL {
        for mix in Mix::grid() {
            for rq_advance in [false, true] {
                let mut c = small(ds);
                c.threads = 4;
                c.mix = mix;
                c.rq_advance = rq_advance;
                c.cleanup_interval = Some(Duration::from_millis(1));
                c.length = RunLength::Timed(Duration::from_millis(150));
                let out = run(&c).unwrap();
                let v = out.validation.as_ref().unwrap();
                assert!(v.is_clean(), "{ds} {mix} rq_advance={rq_advance}: {v}\n{:#?}", v.examples);
                assert!(out.audit.balanced(), "{ds}: {:?}", out.audit);
                assert!(out.cleaner.as_ref().unwrap().thresholds_monotonic());
            }
        }
    }
}

fn quiesced_bundles<S: RangeSet<i64>>(set: S, c: &WorkloadConfig) {
    drive(&set, c);
    let h = set.runtime().register().unwrap();
    set.cleanup_pass(&h);
    let sizes = set.bundle_sizes(&h);
    assert!(sizes.iter().all(|&n| n == 1), "{}: {:?}", set.kind(), sizes.iter().max());
    set.check_invariants(&h).unwrap();
}

#[test]
fn quiescent_cleanup_leaves_one_entry_per_bundle() {
    for ds in StructureKind::ALL {
        let mut c = small(ds);
        c.threads = 3;
        c.validate = false;
        c.mix = Mix::new(90, 0, 10).unwrap();
        c.length = RunLength::OpsPerThread(5_000);
        c.cleanup_interval = None;
        let s = settings_for(&c);
        match ds {
            StructureKind::List => quiesced_bundles(BundledList::with_settings(s), &c),
            StructureKind::SkipList => quiesced_bundles(BundledSkipList::with_settings(s), &c),
            StructureKind::Bst => quiesced_bundles(BundledTree::with_settings(s), &c),
        }
    }
}

#[test]
fn contains_only_run_never_writes_the_rq_table() {
    let mut c = small(StructureKind::SkipList);
    c.threads = 2;
    c.mix = Mix::new(0, 100, 0).unwrap();
    c.length = RunLength::OpsPerThread(10_000);
    let set: BundledSkipList<i64> = BundledSkipList::with_settings(settings_for(&c));
    let (stats, _, cleaner) = drive(&set, &c);
    assert_eq!(stats.contains, 20_000);
    assert!(cleaner.unwrap().passes >= 1);
    assert_eq!(set.runtime().rq_table().total_writes(), 0);

    // One range query is enough to show the counter works.
    let h = set.runtime().register().unwrap();
    set.range_query(&h, 0, 10);
    assert!(set.runtime().rq_table().total_writes() > 0);
}

#[test]
fn csv_rows_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    let mut c = small(StructureKind::List);
    c.validate = false;
    c.length = RunLength::OpsPerThread(1_000);
    let mut rows = Vec::new();
    for trial in 0..3 {
        let out = run(&c).unwrap();
        let row = CsvRow::from_run(&c, trial, &out);
        append_rows(&path, std::slice::from_ref(&row)).unwrap();
        rows.push(row);
    }
    assert_eq!(read_rows(&path).unwrap(), rows);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(text.lines().count(), 4, "header written once");
    assert_eq!(rows[0].workload, "10-80-10");
    assert_eq!(rows[0].total_ops, 1_000);
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_bundled")).args(args).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

#[test]
fn cli_exit_codes() {
    assert_eq!(cli(&["bench", "--mix", "50-40-9"]).0, 2);
    assert_eq!(cli(&["bench", "--ds", "heap"]).0, 2);
    assert_eq!(cli(&["bench", "--key-range", "10", "--rq-size", "50"]).0, 2);
    assert_eq!(cli(&["bench", "--threads", "0"]).0, 2);
    let (code, text) = cli(&["selftest"]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("head.next: (3->10), (1->20), (0->tail)"), "{text}");
    let (code, text) = cli(&[
        "validate", "--ds", "bst", "--threads", "2", "--ops-per-thread", "2000", "--key-range", "300", "--rq-size", "8",
    ]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("0 range-query"), "{text}");
}

#[derive(Clone, Debug)]
struct Rq {
    at: u64,
    low: i64,
    high: i64,
    flip: Option<i64>,
}

#[derive(Clone, Debug)]
struct Probe {
    key: i64,
    c1: u64,
    width: u64,
    result: bool,
}

/// Membership of every key after each prefix of `updates`, by brute force.
fn state_at(updates: &[(i64, u64)], ts: u64) -> BTreeSet<i64> {
    let mut s = BTreeSet::new();
    for &(k, t) in updates {
        if t <= ts && !s.insert(k) {
            s.remove(&k);
        }
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn oracle_agrees_with_brute_force(
        toggles in prop::collection::vec((0i64..8, 1u64..4), 0..40),
        rqs in prop::collection::vec((0u64..120, 0i64..8, 0i64..8, prop::option::of(0i64..8)), 0..12),
        probes in prop::collection::vec((0i64..8, 0u64..120, 0u64..6, any::<bool>()), 0..12),
    ) {
        // Each toggle flips a key; timestamps increase by the given gap.
        let mut updates = Vec::new();
        let mut present = BTreeSet::new();
        let mut log = ThreadLog::default();
        let mut ts = 0;
        for (k, gap) in toggles {
            ts += gap;
            let kind = if present.insert(k) { UpdateKind::Insert } else { present.remove(&k); UpdateKind::Remove };
            log.update(kind, k, Timestamp(ts));
            updates.push((k, ts));
        }
        let rqs: Vec<Rq> = rqs.into_iter().map(|(at, a, b, flip)| Rq { at, low: a.min(b), high: a.max(b), flip }).collect();
        let mut expected_rq = 0;
        for rq in &rqs {
            let mut keys: BTreeSet<i64> =
                state_at(&updates, rq.at).range(rq.low..=rq.high).copied().collect();
            if let Some(f) = rq.flip.filter(|f| (rq.low..=rq.high).contains(f)) {
                if !keys.insert(f) {
                    keys.remove(&f);
                }
                expected_rq += 1;
            }
            log.range_query(rq.low, rq.high, Timestamp(rq.at), keys, 0);
        }
        let probes: Vec<Probe> =
            probes.into_iter().map(|(key, c1, width, result)| Probe { key, c1, width, result }).collect();
        let mut expected_contains = 0;
        for p in &probes {
            let c2 = p.c1 + p.width;
            // Admissible answers: the state at c1 and after each later update
            // up to c2.
            let admissible = (p.c1..=c2).any(|t| state_at(&updates, t).contains(&p.key) == p.result);
            if !admissible {
                expected_contains += 1;
            }
            log.contains_call(p.key, Timestamp(p.c1), Timestamp(c2), p.result);
        }
        let report = validate(&[log], &ValidationParams::default());
        prop_assert_eq!(report.rq_violations, expected_rq);
        prop_assert_eq!(report.contains_violations, expected_contains);
        prop_assert_eq!(report.history_violations, 0);
    }
}
