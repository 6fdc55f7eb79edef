//! Growing the input only when a branch depends on how much a read got.
//!
//! Stream reads taint the bytes they deliver with their offsets and taint
//! their return value with a special label that names the read. A
//! conditional on such a value that was reached after a short read tells us
//! exactly how long the input must be for the read to be satisfied.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::constraints::CondStmtRecord;
use crate::input::{InputBuffer, Origin};
use crate::taint_store::TaintLabel;

/// Default upper bound on input growth (1 MiB).
pub const DEFAULT_MAX_LEN: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadRecord {
    /// Stream position when the call was made.
    pub start: usize,
    pub requested: usize,
    pub returned: usize,
    pub special_label: TaintLabel,
}

impl ReadRecord {
    pub fn offset_range(&self) -> Range<usize> {
        self.start..self.start + self.returned
    }

    pub fn is_short(&self) -> bool {
        self.returned < self.requested
    }
}

/// Sequential read cursor over the input.
#[derive(Clone, Debug, Default)]
pub struct StreamState {
    pub pos: usize,
}

/// Serves `requested` bytes from the stream: returns the delivered offset
/// range and the record for the call, whose special label is derived from
/// `index`, the call's position in this run's read sequence.
pub fn on_read(stream: &mut StreamState, input_len: usize, requested: usize, index: u32) -> (Range<usize>, ReadRecord) {
    let start = stream.pos.min(input_len);
    let returned = requested.min(input_len - start);
    stream.pos = start + returned;
    let rec = ReadRecord {
        start,
        requested,
        returned,
        special_label: TaintLabel::special(index),
    };
    (rec.offset_range(), rec)
}

/// Input length at which the read governing `stmt` would be fully
/// satisfied, if one of its operands carries a read label and that read came
/// up short. When both operands carry one, the later read governs.
pub fn length_requirement(stmt: &CondStmtRecord, records: &[ReadRecord]) -> Option<usize> {
    let idx = [stmt.lhs_label, stmt.rhs_label]
        .into_iter()
        .filter_map(TaintLabel::special_index)
        .max()?;
    let rec = records.get(idx as usize)?;
    rec.is_short().then_some(rec.start + rec.requested)
}

/// Pads `input` with `filler` up to `to_len`. Existing bytes are untouched;
/// no-op if the input is already long enough.
pub fn extend(input: &InputBuffer, to_len: usize, filler: u8) -> InputBuffer {
    if input.len() >= to_len {
        return input.clone();
    }
    let mut bytes = input.bytes.clone();
    bytes.resize(to_len, filler);
    InputBuffer {
        bytes,
        parent: input.parent,
        origin: Origin::Extension {
            from_len: input.len(),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthPolicy {
    pub filler: u8,
    pub max_len: usize,
}

impl Default for LengthPolicy {
    fn default() -> Self {
        LengthPolicy {
            filler: 0,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl LengthPolicy {
    /// [`extend`], refusing to grow past `max_len`.
    pub fn grow(&self, input: &InputBuffer, to_len: usize) -> Option<InputBuffer> {
        (to_len > input.len() && to_len <= self.max_len).then(|| extend(input, to_len, self.filler))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{CmpOp, ConstraintKind, FOutput, Operands};
    use crate::coverage::{BranchKey, CallContext};
    use crate::taint_store::BitVector;

    fn record(lhs: TaintLabel, rhs: TaintLabel) -> CondStmtRecord {
        let key = BranchKey::new(0, 1, CallContext::ROOT);
        CondStmtRecord {
            site: 0,
            context: CallContext::ROOT,
            branch: key,
            sibling: key,
            op: CmpOp::Lt,
            taken: true,
            kind: ConstraintKind::LessThanZero,
            f: FOutput(-1),
            operands: Operands::Int { lhs: 0, rhs: 1 },
            lhs_label: lhs,
            rhs_label: rhs,
            offsets: BitVector::new(),
            shapes: vec![],
            is_explored_true: true,
            is_explored_false: false,
            length_hint: None,
        }
    }

    #[test]
    fn full_and_short_reads() {
        let mut s = StreamState::default();
        let (r, rec) = on_read(&mut s, 1032, 1024, 0);
        assert_eq!(r, 0..1024);
        assert_eq!(rec.returned, 1024);

        let mut s = StreamState { pos: 96 };
        let (r, rec) = on_read(&mut s, 100, 8, 0);
        assert_eq!(r, 96..100);
        assert_eq!((rec.requested, rec.returned), (8, 4));

        let (r, rec) = on_read(&mut s, 100, 8, 1);
        assert!(r.is_empty());
        assert_eq!(rec.returned, 0);
        assert_ne!(rec.special_label, TaintLabel::special(0));
    }

    #[test]
    fn requirement_from_short_read() {
        let mut s = StreamState::default();
        let (_, r0) = on_read(&mut s, 100, 1024, 0);
        assert_eq!(length_requirement(&record(r0.special_label, TaintLabel(0)), std::slice::from_ref(&r0)), Some(1024));

        let mut s = StreamState::default();
        let (_, a) = on_read(&mut s, 1028, 1024, 0);
        let (_, b) = on_read(&mut s, 1028, 4, 1);
        let (_, c) = on_read(&mut s, 1028, 4, 2);
        let recs = [a, b, c];
        assert_eq!(length_requirement(&record(TaintLabel(0), recs[2].special_label), &recs), Some(1032));
        // a satisfied read gives no requirement
        assert_eq!(length_requirement(&record(recs[1].special_label, TaintLabel(0)), &recs), None);
    }

    #[test]
    fn no_special_label_no_requirement() {
        assert_eq!(length_requirement(&record(TaintLabel(3), TaintLabel(0)), &[]), None);
    }

    #[test]
    fn extend_preserves_prefix_and_is_idempotent() {
        let seed = InputBuffer::seed((0..100u8).collect());
        let once = extend(&seed, 1024, 0);
        assert_eq!(once.len(), 1024);
        assert_eq!(&once.bytes[..100], &seed.bytes[..]);
        assert!(once.bytes[100..].iter().all(|&b| b == 0));
        assert_eq!(extend(&once, 1024, 0).bytes, once.bytes);
        assert_eq!(extend(&seed, 1024, 0).bytes, once.bytes);
        assert_eq!(extend(&seed, 10, 0), seed);
    }

    #[test]
    fn policy_caps_growth() {
        let p = LengthPolicy {
            filler: 0xAA,
            max_len: 64,
        };
        let seed = InputBuffer::seed(vec![1; 8]);
        assert!(p.grow(&seed, 65).is_none());
        let g = p.grow(&seed, 64).unwrap();
        assert_eq!(g.bytes[8], 0xAA);
        assert_eq!(g.origin, Origin::Extension { from_len: 8 });
    }
}
