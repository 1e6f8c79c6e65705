//! The capped operation log: a ring of sequenced write records that slaves
//! pull and replay. Eviction drops the lowest sequence numbers first, so the
//! retained entries always form one contiguous interval.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::doc::Document;
use crate::Tick;

/// The kind of a logged write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Insert,
    Update,
    Delete,
}

/// One sequenced write record. `payload` is the full post-image for inserts
/// and updates (absent for deletes), which makes replay idempotent and
/// resynchronization a plain state copy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OplogEntry {
    pub seq: u64,
    /// Election term of the master that authored this entry.
    pub term: u64,
    pub op: OpKind,
    pub collection: String,
    pub doc_id: String,
    pub payload: Option<Document>,
    pub ts: Tick,
}

/// Capped buffer of oplog entries, ordered by seq.
#[derive(Debug, Clone)]
pub struct OplogBuffer {
    capacity: usize,
    entries: VecDeque<OplogEntry>,
}

impl OplogBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        OplogBuffer {
            capacity,
            entries: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lowest retained seq, if any.
    pub fn first_seq(&self) -> Option<u64> {
        self.entries.front().map(|e| e.seq)
    }

    /// Highest retained seq, if any.
    pub fn last_seq(&self) -> Option<u64> {
        self.entries.back().map(|e| e.seq)
    }

    /// Append the next entry, evicting from the front when over capacity.
    pub fn push(&mut self, entry: OplogEntry) {
        if let Some(last) = self.last_seq() {
            assert_eq!(entry.seq, last + 1, "oplog seqs must be gapless");
        }
        self.entries.push_back(entry);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    /// Entries with seq strictly greater than `after`, in seq order.
    /// `None` when the requested point has been evicted (the caller must
    /// fall back to a full resync).
    pub fn entries_after(&self, after: u64) -> Option<Vec<OplogEntry>> {
        match self.first_seq() {
            None => {
                // Empty log: fine only if the puller is already at our tail.
                Some(Vec::new())
            }
            Some(first) if after + 1 < first => None,
            Some(_) => Some(
                self.entries
                    .iter()
                    .filter(|e| e.seq > after)
                    .cloned()
                    .collect(),
            ),
        }
    }

    /// Drop everything; used when a node takes over as master and starts a
    /// fresh log at its current applied seq.
    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &OplogEntry> {
        self.entries.iter()
    }
}
