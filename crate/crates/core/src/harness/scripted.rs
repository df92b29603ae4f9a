//! A short scripted history whose bundle contents and snapshots are known in
//! advance. Used by `bundled selftest` and the acceptance checks.

use super::log::UpdateKind;
use crate::clock::Timestamp;
use crate::runtime::Settings;
use crate::set::{BundleView, Key, NodeRef, RangeSet, StructureKind};
use crate::{BundledList, BundledSkipList, BundledTree};

/// Four updates on an empty set; they take timestamps 1 to 4.
pub const SCRIPT: [(UpdateKind, Key); 4] = [
    (UpdateKind::Insert, 20),
    (UpdateKind::Insert, 30),
    (UpdateKind::Insert, 10),
    (UpdateKind::Remove, 20),
];

const EXPECTED_SNAPSHOTS: [&[Key]; 5] = [&[], &[20], &[20, 30], &[10, 20, 30], &[10, 30]];

/// Level-0 bundles of the list and the skip list after the script, in node
/// order (head first).
fn expected_linear_views() -> Vec<BundleView> {
    use NodeRef::{Head, Key as K, Tail};
    let view = |node, entries: &[(NodeRef, u64)]| BundleView {
        node,
        link: "next",
        entries: entries.iter().map(|&(n, t)| (n, Timestamp(t))).collect(),
    };
    vec![
        view(Head, &[(K(10), 3), (K(20), 1), (Tail, 0)]),
        view(K(10), &[(K(30), 4), (K(20), 3)]),
        view(K(20), &[(Head, 4), (K(30), 2), (Tail, 1)]),
        view(K(30), &[(Tail, 2)]),
    ]
}

#[derive(Clone, Debug)]
pub struct ScriptedReplay {
    pub ds: StructureKind,
    /// Timestamps the script's updates received.
    pub update_ts: Vec<Option<Timestamp>>,
    /// Every bundle after the script, removed nodes included.
    pub views: Vec<BundleView>,
    /// Historical range query over `[0, 100]` at each timestamp 0 to 4.
    pub snapshots: Vec<(Timestamp, Vec<Key>)>,
    /// Differences from the expected outcome; empty on success.
    pub mismatches: Vec<String>,
}

impl ScriptedReplay {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn replay_on<S: RangeSet<i64>>(set: S) -> ScriptedReplay {
    let h = set.runtime().register().expect("fresh runtime");
    let mut mismatches = Vec::new();
    let update_ts: Vec<_> = SCRIPT
        .iter()
        .map(|&(kind, key)| match kind {
            UpdateKind::Insert => set.insert_ts(&h, key, key),
            UpdateKind::Remove => set.remove_ts(&h, key),
        })
        .collect();
    for (i, ts) in update_ts.iter().enumerate() {
        let want = Timestamp(i as u64 + 1);
        if *ts != Some(want) {
            mismatches.push(format!("update {} took {ts:?}, expected {want}", i + 1));
        }
    }
    let mut snapshots = Vec::new();
    for (t, want) in EXPECTED_SNAPSHOTS.iter().enumerate() {
        let ts = Timestamp(t as u64);
        match set.range_query_at(&h, 0, 100, ts) {
            Ok(q) => {
                let got: Vec<Key> = q.keys().collect();
                if got != *want {
                    mismatches.push(format!("snapshot at {ts}: got {got:?}, expected {want:?}"));
                }
                snapshots.push((ts, got));
            }
            Err(e) => mismatches.push(format!("snapshot at {ts}: {e}")),
        }
    }
    let views = set.bundle_views(&h);
    if set.kind() != StructureKind::Bst {
        let want = expected_linear_views();
        if views != want {
            mismatches.push(format!(
                "bundles differ:\n  got:\n    {}\n  expected:\n    {}",
                join(&views),
                join(&want)
            ));
        }
    }
    if let Err(e) = set.check_invariants(&h) {
        mismatches.push(format!("invariants: {e}"));
    }
    ScriptedReplay { ds: set.kind(), update_ts, views, snapshots, mismatches }
}

fn join(views: &[BundleView]) -> String {
    views.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n    ")
}

/// Runs [`SCRIPT`] on a fresh structure that keeps its history and compares
/// the outcome with the known answer. Bundle contents are compared for the
/// list and the skip list only.
pub fn replay_scripted(ds: StructureKind) -> ScriptedReplay {
    let settings = Settings { retain_history: true, ..Settings::default() };
    match ds {
        StructureKind::List => replay_on(BundledList::with_settings(settings)),
        StructureKind::SkipList => replay_on(BundledSkipList::with_settings(settings)),
        StructureKind::Bst => replay_on(BundledTree::with_settings(settings)),
    }
}
