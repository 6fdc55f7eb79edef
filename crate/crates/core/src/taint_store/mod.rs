//! Byte-offset taint labels.
//!
//! Every set of input offsets that some value depends on is stored once, as
//! a path in a binary tree: starting at the root, bit `i` of the (trimmed)
//! vector selects the left (0) or right (1) child. The node reached by the
//! last bit holds the set's label, and a label-indexed table points back at
//! that node so the vector can be rebuilt by walking parent links. Labels are
//! dense integers handed out in insertion order.

mod bitvec;

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bitvec::BitVector;

/// Compact name for a set of input byte offsets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaintLabel(pub u32);

impl TaintLabel {
    /// Labels at or above this value are never handed out by an
    /// [`OffsetTree`]; the harness uses them to mark read-call return values.
    pub const SPECIAL_BASE: u32 = 0xF000_0000;

    pub const fn special(index: u32) -> Self {
        TaintLabel(Self::SPECIAL_BASE + index)
    }

    pub const fn is_special(self) -> bool {
        self.0 >= Self::SPECIAL_BASE
    }

    /// Index of the read record a special label refers to.
    pub const fn special_index(self) -> Option<u32> {
        if self.is_special() {
            Some(self.0 - Self::SPECIAL_BASE)
        } else {
            None
        }
    }
}

impl fmt::Display for TaintLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.special_index() {
            Some(i) => write!(f, "read#{i}"),
            None => write!(f, "{}", self.0),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaintError {
    #[error("taint store full: no labels left below {limit}")]
    StoreFull { limit: u32 },
    #[error("unknown taint label {0}")]
    UnknownLabel(TaintLabel),
}

const NIL: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct Node {
    left: u32,
    right: u32,
    parent: u32,
    label: u32,
}

impl Node {
    const fn new(parent: u32) -> Self {
        Node {
            left: NIL,
            right: NIL,
            parent,
            label: NIL,
        }
    }
}

/// The bit-vector tree plus the label lookup table, with memo tables for
/// `find` and `union`.
#[derive(Clone, Debug)]
pub struct OffsetTree {
    nodes: Vec<Node>,
    /// label -> node index
    labels: Vec<u32>,
    capacity: u32,
    union_memo: HashMap<(TaintLabel, TaintLabel), TaintLabel>,
    find_memo: HashMap<TaintLabel, BitVector>,
    walks: u64,
}

impl Default for OffsetTree {
    fn default() -> Self {
        Self::new()
    }
}

impl OffsetTree {
    pub fn new() -> Self {
        Self::with_capacity_limit(TaintLabel::SPECIAL_BASE)
    }

    /// A tree that refuses to assign more than `limit` labels.
    pub fn with_capacity_limit(limit: u32) -> Self {
        OffsetTree {
            nodes: vec![Node::new(NIL)],
            labels: Vec::new(),
            capacity: limit.min(TaintLabel::SPECIAL_BASE),
            union_memo: HashMap::new(),
            find_memo: HashMap::new(),
            walks: 0,
        }
    }

    /// Drops every label and both memo tables.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.nodes.push(Node::new(NIL));
        self.labels.clear();
        self.union_memo.clear();
        self.find_memo.clear();
        self.walks = 0;
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of parent-link walks performed by `find` so far.
    pub fn find_walks(&self) -> u64 {
        self.walks
    }

    fn next_label(&mut self, node: u32) -> Result<u32, TaintError> {
        let label = self.labels.len() as u64;
        if label >= self.capacity as u64 {
            return Err(TaintError::StoreFull {
                limit: self.capacity,
            });
        }
        let label = label as u32;
        self.labels.push(node);
        self.nodes[node as usize].label = label;
        Ok(label)
    }

    /// Returns the label of `v`, creating the path and a fresh label if the
    /// vector has not been seen before.
    pub fn insert(&mut self, v: &BitVector) -> Result<TaintLabel, TaintError> {
        let mut node = 0u32;
        for bit in v.bits() {
            let cur = self.nodes[node as usize];
            let child = if bit { cur.right } else { cur.left };
            node = if child == NIL {
                let idx = self.nodes.len() as u32;
                self.nodes.push(Node::new(node));
                let parent = &mut self.nodes[node as usize];
                if bit {
                    parent.right = idx;
                } else {
                    parent.left = idx;
                }
                idx
            } else {
                child
            };
        }
        let existing = self.nodes[node as usize].label;
        let label = if existing == NIL {
            self.next_label(node)?
        } else {
            existing
        };
        Ok(TaintLabel(label))
    }

    /// Rebuilds the vector named by `t` from its node's parent chain.
    pub fn find(&mut self, t: TaintLabel) -> Result<BitVector, TaintError> {
        let &start = self
            .labels
            .get(t.0 as usize)
            .ok_or(TaintError::UnknownLabel(t))?;
        self.walks += 1;
        let mut rev = Vec::new();
        let mut node = start;
        let mut parent = self.nodes[node as usize].parent;
        while parent != NIL {
            rev.push(self.nodes[parent as usize].right == node);
            node = parent;
            parent = self.nodes[node as usize].parent;
        }
        Ok(BitVector::from_bits(rev.into_iter().rev()))
    }

    pub fn union(&mut self, a: TaintLabel, b: TaintLabel) -> Result<TaintLabel, TaintError> {
        let va = self.find(a)?;
        let vb = self.find(b)?;
        self.insert(&va.union(&vb))
    }

    /// `find` with a per-label memo.
    pub fn cached_find(&mut self, t: TaintLabel) -> Result<BitVector, TaintError> {
        if let Some(v) = self.find_memo.get(&t) {
            return Ok(v.clone());
        }
        let v = self.find(t)?;
        self.find_memo.insert(t, v.clone());
        Ok(v)
    }

    /// `union` with a memo keyed by the unordered label pair.
    pub fn cached_union(&mut self, a: TaintLabel, b: TaintLabel) -> Result<TaintLabel, TaintError> {
        let key = if a <= b { (a, b) } else { (b, a) };
        if let Some(&t) = self.union_memo.get(&key) {
            return Ok(t);
        }
        let va = self.cached_find(a)?;
        let vb = self.cached_find(b)?;
        let t = self.insert(&va.union(&vb))?;
        self.union_memo.insert(key, t);
        Ok(t)
    }

    /// One line per label: `label k -> [offsets]`.
    pub fn dump(&mut self) -> String {
        let mut out = String::new();
        for k in 0..self.labels.len() as u32 {
            let v = self.find(TaintLabel(k)).expect("label in range");
            let offs: Vec<_> = v.ones().collect();
            let _ = writeln!(out, "label {k} -> {offs:?}");
        }
        out
    }
}
