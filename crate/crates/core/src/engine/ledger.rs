//! Work queue of unexplored branches.

use std::collections::{HashMap, VecDeque};

use serde::Serialize;

use crate::constraints::CondStmtRecord;
use crate::coverage::BranchKey;
use crate::input::InputId;

/// An unexplored branch and the input/statement that reaches its sibling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    pub key: BranchKey,
    pub input: InputId,
    pub record: CondStmtRecord,
    /// Fast executions done when the entry was added.
    pub discovered_at: u64,
    /// Completed solving rounds.
    pub rounds: u32,
    pub execs: u64,
}

/// FIFO by discovery; entries whose round ran out of budget go to a second
/// queue that is only served once the first is empty.
#[derive(Clone, Debug, Default)]
pub struct BranchLedger {
    entries: HashMap<BranchKey, LedgerEntry>,
    fresh: VecDeque<BranchKey>,
    exhausted: VecDeque<BranchKey>,
}

impl BranchLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &BranchKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &BranchKey) -> Option<&LedgerEntry> {
        self.entries.get(key)
    }

    /// Adds `entry` unless its branch is already queued.
    pub fn insert(&mut self, entry: LedgerEntry) -> bool {
        if self.entries.contains_key(&entry.key) {
            return false;
        }
        self.fresh.push_back(entry.key);
        self.entries.insert(entry.key, entry);
        true
    }

    /// Next branch to work on. Entries for which `explored` holds are dropped
    /// on the way. The returned entry stays in the ledger until
    /// [`remove`](Self::remove) or [`requeue`](Self::requeue).
    pub fn select(&mut self, mut explored: impl FnMut(&BranchKey) -> bool) -> Option<BranchKey> {
        loop {
            let key = match self.fresh.pop_front() {
                Some(k) => k,
                None => self.exhausted.pop_front()?,
            };
            if !self.entries.contains_key(&key) {
                continue;
            }
            if explored(&key) {
                self.entries.remove(&key);
                continue;
            }
            return Some(key);
        }
    }

    /// Records a finished round that did not explore `key` and puts it at
    /// the back of the exhausted queue.
    pub fn requeue(&mut self, key: BranchKey, execs: u64) {
        if let Some(e) = self.entries.get_mut(&key) {
            e.rounds += 1;
            e.execs += execs;
            self.exhausted.push_back(key);
        }
    }

    pub fn remove(&mut self, key: &BranchKey) -> Option<LedgerEntry> {
        self.entries.remove(key)
    }

    /// Entries not yet selected, in queue order.
    pub fn pending(&self) -> impl Iterator<Item = &LedgerEntry> {
        self.fresh
            .iter()
            .chain(&self.exhausted)
            .filter_map(|k| self.entries.get(k))
    }
}
