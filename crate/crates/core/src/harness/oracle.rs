//! Post-run linearizability check by timestamp replay.
//!
//! The abstract set at time `t` contains `k` exactly when an odd number of
//! successful updates on `k` have timestamps `<= t`, given that the structure
//! starts empty and a key's updates alternate insert, remove, insert, ...
//! The replay checks that alternation, then compares every logged range
//! query against the set at its snapshot and every contains call against the
//! states its clock window admits.

use std::collections::BTreeMap;
use std::fmt;

use super::log::{ThreadLog, UpdateKind, UpdateRecord};
use crate::clock::Timestamp;
use crate::set::Key;

/// Options that depend on how the run was configured.
#[derive(Clone, Debug, Default)]
pub struct ValidationParams {
    /// Updates read the clock rather than advance it, so timestamps repeat
    /// and an update stamped `c1` may follow a read of `c1`.
    pub shared_timestamps: bool,
    /// Require collection to dereference exactly `|result| + 1` bundles.
    pub check_collect_derefs: bool,
    /// Keys found in the structure after the run, if captured.
    pub final_keys: Option<Vec<Key>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    RangeQuery { low: Key, high: Key, ts: Timestamp, missing: Vec<Key>, unexpected: Vec<Key> },
    Contains { key: Key, c1: Timestamp, c2: Timestamp, result: bool },
    Alternation { key: Key, ts: Timestamp },
    DuplicateTimestamp { ts: Timestamp },
    CollectDerefs { low: Key, high: Key, ts: Timestamp, derefs: u32, results: usize },
    FinalState { missing: Vec<Key>, unexpected: Vec<Key> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RangeQuery { low, high, ts, missing, unexpected } => write!(
                f,
                "range [{low}, {high}] at {ts}: missing {missing:?}, unexpected {unexpected:?}"
            ),
            Violation::Contains { key, c1, c2, result } => {
                write!(f, "contains({key}) = {result} admitted by no state in [{c1}, {c2}]")
            }
            Violation::Alternation { key, ts } => write!(f, "updates on {key} do not alternate at {ts}"),
            Violation::DuplicateTimestamp { ts } => write!(f, "two updates share timestamp {ts}"),
            Violation::CollectDerefs { low, high, ts, derefs, results } => write!(
                f,
                "range [{low}, {high}] at {ts}: {derefs} dereferences for {results} results"
            ),
            Violation::FinalState { missing, unexpected } => {
                write!(f, "final contents: missing {missing:?}, unexpected {unexpected:?}")
            }
        }
    }
}

const MAX_EXAMPLES: usize = 32;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub updates: u64,
    pub rqs_checked: u64,
    pub contains_checked: u64,
    pub rq_violations: u64,
    pub contains_violations: u64,
    pub history_violations: u64,
    pub collect_deref_violations: u64,
    pub final_state_violations: u64,
    /// The first few violations found.
    pub examples: Vec<Violation>,
}

impl ValidationReport {
    pub fn violations(&self) -> u64 {
        self.rq_violations
            + self.contains_violations
            + self.history_violations
            + self.collect_deref_violations
            + self.final_state_violations
    }

    pub fn is_clean(&self) -> bool {
        self.violations() == 0
    }

    fn record(&mut self, v: Violation) {
        if self.examples.len() < MAX_EXAMPLES {
            self.examples.push(v);
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} updates, {} range queries, {} contains checked: {} range-query, {} contains, {} history, {} collect, {} final-state violations",
            self.updates,
            self.rqs_checked,
            self.contains_checked,
            self.rq_violations,
            self.contains_violations,
            self.history_violations,
            self.collect_deref_violations,
            self.final_state_violations
        )
    }
}

/// Sorted update timestamps per key.
pub struct Replay {
    per_key: BTreeMap<Key, Vec<u64>>,
}

impl Replay {
    /// Builds the replay and reports history violations (non-alternating
    /// updates, reused timestamps) into `report`.
    pub fn build<'a>(
        updates: impl IntoIterator<Item = &'a UpdateRecord>,
        shared_timestamps: bool,
        report: &mut ValidationReport,
    ) -> Replay {
        let mut all: Vec<UpdateRecord> = updates.into_iter().copied().collect();
        report.updates = all.len() as u64;
        if !shared_timestamps {
            let mut stamps: Vec<u64> = all.iter().map(|u| u.ts().0).collect();
            stamps.sort_unstable();
            for w in stamps.windows(2) {
                if w[0] == w[1] {
                    report.history_violations += 1;
                    report.record(Violation::DuplicateTimestamp { ts: Timestamp(w[0]) });
                }
            }
        }
        all.sort_unstable_by_key(|u| (u.key, u.ts(), u.kind() == UpdateKind::Remove));
        let mut per_key: BTreeMap<Key, Vec<u64>> = BTreeMap::new();
        let mut i = 0;
        while i < all.len() {
            let key = all[i].key;
            let mut j = i;
            while j < all.len() && all[j].key == key {
                j += 1;
            }
            Self::check_alternation(key, &all[i..j], report);
            per_key.insert(key, all[i..j].iter().map(|u| u.ts().0).collect());
            i = j;
        }
        Replay { per_key }
    }

    /// Within each group of equal timestamps the order is unknown; the group
    /// is consistent if some order alternates from the state before it.
    fn check_alternation(key: Key, ops: &[UpdateRecord], report: &mut ValidationReport) {
        let mut present = false;
        let mut i = 0;
        while i < ops.len() {
            let ts = ops[i].ts();
            let mut ins = 0i64;
            let mut rem = 0i64;
            while i < ops.len() && ops[i].ts() == ts {
                match ops[i].kind() {
                    UpdateKind::Insert => ins += 1,
                    UpdateKind::Remove => rem += 1,
                }
                i += 1;
            }
            let ok = if present {
                rem == ins || rem == ins + 1
            } else {
                ins == rem || ins == rem + 1
            };
            if !ok {
                report.history_violations += 1;
                report.record(Violation::Alternation { key, ts });
            }
            present = (present as i64 + ins - rem) > 0;
        }
    }

    fn ops(&self, key: Key) -> &[u64] {
        self.per_key.get(&key).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Whether `key` is in the set once every update stamped `<= t` applied.
    pub fn present_at(&self, key: Key, t: Timestamp) -> bool {
        self.ops(key).partition_point(|&ts| ts <= t.0) % 2 == 1
    }

    /// Whether `key` is in the set once every update stamped `< t` applied.
    pub fn present_before(&self, key: Key, t: Timestamp) -> bool {
        self.ops(key).partition_point(|&ts| ts < t.0) % 2 == 1
    }

    /// Keys in `low..=high` present at `t`, in order.
    pub fn range_at(&self, low: Key, high: Key, t: Timestamp) -> Vec<Key> {
        self.per_key
            .range(low..=high)
            .filter(|(_, ops)| ops.partition_point(|&ts| ts <= t.0) % 2 == 1)
            .map(|(k, _)| *k)
            .collect()
    }

    /// Keys present after every update.
    pub fn final_keys(&self) -> Vec<Key> {
        self.per_key
            .iter()
            .filter(|(_, ops)| ops.len() % 2 == 1)
            .map(|(k, _)| *k)
            .collect()
    }

    /// Whether some update on `key` has a timestamp in `lo..=hi`.
    fn any_update_in(&self, key: Key, lo: u64, hi: u64) -> bool {
        let ops = self.ops(key);
        let i = ops.partition_point(|&ts| ts < lo);
        i < ops.len() && ops[i] <= hi
    }
}

fn diff(expected: &[Key], actual: &[Key]) -> (Vec<Key>, Vec<Key>) {
    let missing = expected.iter().filter(|k| actual.binary_search(k).is_err()).copied().collect();
    let unexpected = actual.iter().filter(|k| expected.binary_search(k).is_err()).copied().collect();
    (missing, unexpected)
}

/// Checks the merged logs of a run.
pub fn validate(logs: &[ThreadLog], params: &ValidationParams) -> ValidationReport {
    let mut report = ValidationReport::default();
    let replay = Replay::build(logs.iter().flat_map(|l| l.updates.iter()), params.shared_timestamps, &mut report);

    for log in logs {
        for rq in &log.rqs {
            report.rqs_checked += 1;
            let actual: Vec<Key> = log.rq_keys(rq).collect();
            let expected = replay.range_at(rq.low, rq.high, rq.ts);
            if actual != expected {
                let (missing, unexpected) = diff(&expected, &actual);
                report.rq_violations += 1;
                report.record(Violation::RangeQuery { low: rq.low, high: rq.high, ts: rq.ts, missing, unexpected });
            }
            if params.check_collect_derefs && rq.derefs as usize != actual.len() + 1 {
                report.collect_deref_violations += 1;
                report.record(Violation::CollectDerefs {
                    low: rq.low,
                    high: rq.high,
                    ts: rq.ts,
                    derefs: rq.derefs,
                    results: actual.len(),
                });
            }
        }
        for c in &log.contains {
            report.contains_checked += 1;
            // The state before the window, then one state per update in it.
            // Updates on one key alternate, so any update in the window makes
            // both answers admissible.
            let (before, window_lo) = if params.shared_timestamps {
                (replay.present_before(c.key, c.c1), c.c1.0)
            } else {
                (replay.present_at(c.key, c.c1), c.c1.0 + 1)
            };
            let ok = before == c.result || replay.any_update_in(c.key, window_lo, c.c2.0);
            if !ok {
                report.contains_violations += 1;
                report.record(Violation::Contains { key: c.key, c1: c.c1, c2: c.c2, result: c.result });
            }
        }
    }

    if let Some(actual) = &params.final_keys {
        let expected = replay.final_keys();
        if *actual != expected {
            let (missing, unexpected) = diff(&expected, actual);
            report.final_state_violations += 1;
            report.record(Violation::FinalState { missing, unexpected });
        }
    }
    report
}
