//! Per-thread operation logs, appended during a run and merged afterwards.

use crate::clock::Timestamp;
use crate::set::Key;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateKind {
    Insert,
    Remove,
}

const REMOVE_BIT: u64 = 1 << 63;

/// A successful update: key, kind and linearization timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpdateRecord {
    pub key: Key,
    word: u64,
}

impl UpdateRecord {
    pub fn new(kind: UpdateKind, key: Key, ts: Timestamp) -> Self {
        debug_assert!(ts.0 < REMOVE_BIT);
        let bit = if kind == UpdateKind::Remove { REMOVE_BIT } else { 0 };
        UpdateRecord { key, word: ts.0 | bit }
    }

    pub fn kind(&self) -> UpdateKind {
        if self.word & REMOVE_BIT != 0 {
            UpdateKind::Remove
        } else {
            UpdateKind::Insert
        }
    }

    pub fn ts(&self) -> Timestamp {
        Timestamp(self.word & !REMOVE_BIT)
    }
}

/// A range query; its result is a bitset over `low..=high` stored in the
/// owning log's word pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RqRecord {
    pub low: Key,
    pub high: Key,
    pub ts: Timestamp,
    pub bits_at: usize,
    pub derefs: u32,
}

/// A contains call with the clock read just before (`c1`) and just after
/// (`c2`) it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContainsRecord {
    pub key: Key,
    pub c1: Timestamp,
    pub c2: Timestamp,
    pub result: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ThreadLog {
    pub updates: Vec<UpdateRecord>,
    pub rqs: Vec<RqRecord>,
    rq_bits: Vec<u64>,
    pub contains: Vec<ContainsRecord>,
}

fn words_for(low: Key, high: Key) -> usize {
    ((high - low) as usize + 1).div_ceil(64)
}

impl ThreadLog {
    pub fn update(&mut self, kind: UpdateKind, key: Key, ts: Timestamp) {
        self.updates.push(UpdateRecord::new(kind, key, ts));
    }

    /// Records a range query. `keys` must lie in `low..=high`.
    pub fn range_query(&mut self, low: Key, high: Key, ts: Timestamp, keys: impl IntoIterator<Item = Key>, derefs: u64) {
        let bits_at = self.rq_bits.len();
        self.rq_bits.resize(bits_at + words_for(low, high), 0);
        for k in keys {
            debug_assert!((low..=high).contains(&k));
            let i = (k - low) as usize;
            self.rq_bits[bits_at + i / 64] |= 1 << (i % 64);
        }
        self.rqs.push(RqRecord {
            low,
            high,
            ts,
            bits_at,
            derefs: derefs.min(u32::MAX as u64) as u32,
        });
    }

    pub fn contains_call(&mut self, key: Key, c1: Timestamp, c2: Timestamp, result: bool) {
        self.contains.push(ContainsRecord { key, c1, c2, result });
    }

    /// Keys reported by `rq`, which must belong to this log.
    pub fn rq_keys(&self, rq: &RqRecord) -> impl Iterator<Item = Key> + '_ {
        let words = &self.rq_bits[rq.bits_at..rq.bits_at + words_for(rq.low, rq.high)];
        let low = rq.low;
        words.iter().enumerate().flat_map(move |(w, &bits)| {
            (0..64).filter(move |b| bits & (1 << b) != 0).map(move |b| low + (w * 64 + b) as Key)
        })
    }

    pub fn rq_len(&self, rq: &RqRecord) -> usize {
        self.rq_bits[rq.bits_at..rq.bits_at + words_for(rq.low, rq.high)]
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    }

    pub fn operations(&self) -> usize {
        self.updates.len() + self.rqs.len() + self.contains.len()
    }
}
