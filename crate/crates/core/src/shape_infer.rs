//! Which input bytes are read together as one value, and with what type.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::taint_store::BitVector;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signedness {
    Signed,
    #[default]
    Unsigned,
}

/// Byte order used to turn a multi-byte component into an integer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endian {
    #[default]
    Little,
    Big,
}

pub fn is_primitive_width(size: usize) -> bool {
    matches!(size, 1 | 2 | 4 | 8)
}

/// One component of the search vector: `size` input bytes starting at
/// `offset`, read as one integer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValueShape {
    pub offset: usize,
    pub size: u8,
    pub signedness: Signedness,
}

impl ValueShape {
    pub fn new(offset: usize, size: u8, signedness: Signedness) -> Self {
        debug_assert!(is_primitive_width(size as usize));
        ValueShape {
            offset,
            size,
            signedness,
        }
    }

    pub fn byte(offset: usize) -> Self {
        Self::new(offset, 1, Signedness::Unsigned)
    }

    pub fn end(&self) -> usize {
        self.offset + self.size as usize
    }

    pub fn min_value(&self) -> i128 {
        match self.signedness {
            Signedness::Unsigned => 0,
            Signedness::Signed => -(1i128 << (8 * self.size as u32 - 1)),
        }
    }

    pub fn max_value(&self) -> i128 {
        match self.signedness {
            Signedness::Unsigned => (1i128 << (8 * self.size as u32)) - 1,
            Signedness::Signed => (1i128 << (8 * self.size as u32 - 1)) - 1,
        }
    }

    /// Reads this component out of `input`. Bytes past the end read as 0.
    pub fn decode(&self, input: &[u8], endian: Endian) -> i128 {
        let n = self.size as usize;
        let mut raw = 0u64;
        for i in 0..n {
            let byte = input.get(self.offset + i).copied().unwrap_or(0);
            let shift = match endian {
                Endian::Little => 8 * i,
                Endian::Big => 8 * (n - 1 - i),
            };
            raw |= u64::from(byte) << shift;
        }
        match self.signedness {
            Signedness::Unsigned => i128::from(raw),
            Signedness::Signed => {
                let unused = 64 - 8 * n as u32;
                i128::from(((raw << unused) as i64) >> unused)
            }
        }
    }

    /// Writes `value` (clamped to the component's range) back into `input`.
    pub fn encode(&self, value: i128, input: &mut [u8], endian: Endian) {
        let v = value.clamp(self.min_value(), self.max_value()) as u64;
        let n = self.size as usize;
        for i in 0..n {
            let shift = match endian {
                Endian::Little => 8 * i,
                Endian::Big => 8 * (n - 1 - i),
            };
            if let Some(b) = input.get_mut(self.offset + i) {
                *b = (v >> shift) as u8;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Entry {
    size: u8,
    sign: Option<Signedness>,
}

/// Per-offset smallest observed read width and signedness votes.
#[derive(Clone, Debug, Default)]
pub struct TypeTable {
    entries: BTreeMap<usize, Entry>,
}

impl TypeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// A read of `size` consecutive input bytes starting at `offset`.
    /// Non-primitive widths are ignored; on conflict the smaller size wins.
    pub fn observe_read(&mut self, offset: usize, size: usize) {
        if !is_primitive_width(size) {
            return;
        }
        let e = self.entries.entry(offset).or_default();
        if e.size == 0 || e.size as usize > size {
            e.size = size as u8;
        }
    }

    /// Signed unless some use was unsigned; unsigned is sticky.
    pub fn observe_signedness(&mut self, offset: usize, used_as: Signedness) {
        let e = self.entries.entry(offset).or_default();
        e.sign = match (e.sign, used_as) {
            (Some(Signedness::Unsigned), _) | (_, Signedness::Unsigned) => Some(Signedness::Unsigned),
            _ => Some(Signedness::Signed),
        };
    }

    /// Smallest width observed at `offset`, if any.
    pub fn size_at(&self, offset: usize) -> Option<u8> {
        self.entries
            .get(&offset)
            .map(|e| e.size)
            .filter(|&s| s != 0)
    }

    pub fn signedness_at(&self, offset: usize) -> Signedness {
        self.entries
            .get(&offset)
            .and_then(|e| e.sign)
            .unwrap_or_default()
    }
}

/// Partitions `offsets` into shaped components. Known groups are taken
/// smallest first (earliest first on ties) if they lie wholly inside the set
/// and do not overlap an accepted group; everything left becomes single
/// bytes.
pub fn shapes_for(offsets: &BitVector, table: &TypeTable) -> Vec<ValueShape> {
    let mut candidates: Vec<ValueShape> = offsets
        .ones()
        .filter_map(|o| {
            let size = table.size_at(o)?;
            offsets
                .contains_all(o..o + size as usize)
                .then(|| ValueShape::new(o, size, table.signedness_at(o)))
        })
        .collect();
    candidates.sort_by_key(|s| (s.size, s.offset));

    let mut taken = BitVector::new();
    let mut out = Vec::new();
    for c in candidates {
        if (c.offset..c.end()).any(|o| taken.get(o)) {
            continue;
        }
        for o in c.offset..c.end() {
            taken.set(o);
        }
        out.push(c);
    }
    for o in offsets.ones() {
        if !taken.get(o) {
            out.push(ValueShape::byte(o));
        }
    }
    out.sort_by_key(|s| s.offset);
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn fresh_read_is_recorded() {
        let mut t = TypeTable::new();
        t.observe_read(1024, 4);
        assert_eq!(t.size_at(1024), Some(4));
    }

    #[test]
    fn smallest_size_wins() {
        let mut t = TypeTable::new();
        t.observe_read(8, 4);
        t.observe_read(8, 2);
        t.observe_read(8, 8);
        assert_eq!(t.size_at(8), Some(2));
    }

    #[test]
    fn non_primitive_width_ignored() {
        let mut t = TypeTable::new();
        t.observe_read(3, 3);
        assert_eq!(t.size_at(3), None);
    }

    #[test]
    fn signedness_votes() {
        let mut t = TypeTable::new();
        t.observe_signedness(0, Signedness::Signed);
        t.observe_signedness(0, Signedness::Signed);
        assert_eq!(t.signedness_at(0), Signedness::Signed);
        t.observe_signedness(1, Signedness::Signed);
        t.observe_signedness(1, Signedness::Unsigned);
        t.observe_signedness(1, Signedness::Signed);
        assert_eq!(t.signedness_at(1), Signedness::Unsigned);
        assert_eq!(t.signedness_at(2), Signedness::Unsigned);
    }

    #[test]
    fn two_ints() {
        let mut t = TypeTable::new();
        t.observe_read(1024, 4);
        t.observe_read(1028, 4);
        t.observe_signedness(1024, Signedness::Signed);
        t.observe_signedness(1028, Signedness::Signed);
        let s = shapes_for(&BitVector::from_range(1024, 8), &t);
        assert_eq!(
            s,
            vec![
                ValueShape::new(1024, 4, Signedness::Signed),
                ValueShape::new(1028, 4, Signedness::Signed)
            ]
        );
    }

    #[test]
    fn unshaped_byte() {
        let s = shapes_for(&BitVector::from_offsets([5]), &TypeTable::new());
        assert_eq!(s, vec![ValueShape::byte(5)]);
    }

    #[test]
    fn partial_group_then_bytes() {
        let mut t = TypeTable::new();
        t.observe_read(0, 4);
        let s = shapes_for(&BitVector::from_range(0, 6), &t);
        let got: Vec<_> = s.iter().map(|s| (s.offset, s.size)).collect();
        assert_eq!(got, vec![(0, 4), (4, 1), (5, 1)]);
    }

    #[test]
    fn overlap_keeps_earlier_group() {
        let mut t = TypeTable::new();
        t.observe_read(0, 4);
        t.observe_read(2, 4);
        let s = shapes_for(&BitVector::from_range(0, 6), &t);
        let got: Vec<_> = s.iter().map(|s| (s.offset, s.size)).collect();
        assert_eq!(got, vec![(0, 4), (4, 1), (5, 1)]);
    }

    #[test]
    fn overlap_prefers_smaller_group() {
        let mut t = TypeTable::new();
        t.observe_read(0, 4);
        t.observe_read(2, 2);
        let s = shapes_for(&BitVector::from_range(0, 4), &t);
        let got: Vec<_> = s.iter().map(|s| (s.offset, s.size)).collect();
        assert_eq!(got, vec![(0, 1), (1, 1), (2, 2)]);
    }

    #[test]
    fn group_sticking_out_of_the_set_is_dropped() {
        let mut t = TypeTable::new();
        t.observe_read(0, 4);
        let s = shapes_for(&BitVector::from_range(0, 2), &t);
        assert_eq!(s, vec![ValueShape::byte(0), ValueShape::byte(1)]);
    }

    #[test]
    fn signed_decode() {
        let s = ValueShape::new(0, 2, Signedness::Signed);
        assert_eq!(s.decode(&[0xFF, 0xFF], Endian::Little), -1);
        assert_eq!(s.decode(&[0x00, 0x80], Endian::Little), -32768);
        assert_eq!(s.decode(&[0x80, 0x00], Endian::Big), -32768);
        let u = ValueShape::new(0, 4, Signedness::Unsigned);
        assert_eq!(u.decode(&[0xEF, 0xBE, 0xAD, 0xDE], Endian::Little), 0xDEAD_BEEF);
    }

    fn shape() -> impl Strategy<Value = ValueShape> {
        (prop::sample::select(vec![1u8, 2, 4, 8]), any::<bool>()).prop_map(|(size, signed)| {
            ValueShape::new(0, size, if signed { Signedness::Signed } else { Signedness::Unsigned })
        })
    }

    proptest! {
        #[test]
        fn encode_decode_identity(s in shape(), v: i64, big: bool) {
            let endian = if big { Endian::Big } else { Endian::Little };
            let v = i128::from(v).clamp(s.min_value(), s.max_value());
            let mut buf = [0u8; 8];
            s.encode(v, &mut buf, endian);
            prop_assert_eq!(s.decode(&buf, endian), v);
        }

        #[test]
        fn size_is_min_fold(obs in prop::collection::vec((0usize..8, 0usize..10), 0..40)) {
            let mut t = TypeTable::new();
            for &(o, s) in &obs {
                t.observe_read(o, s);
            }
            for o in 0..8 {
                let expect = obs.iter().filter(|&&(oo, s)| oo == o && is_primitive_width(s)).map(|&(_, s)| s as u8).min();
                prop_assert_eq!(t.size_at(o), expect);
            }
        }

        #[test]
        fn partition_covers_exactly(offs in prop::collection::btree_set(0usize..40, 0..30),
                                    reads in prop::collection::vec((0usize..40, prop::sample::select(vec![1usize, 2, 4, 8])), 0..12)) {
            let mut t = TypeTable::new();
            for (o, s) in reads {
                t.observe_read(o, s);
            }
            let set = BitVector::from_offsets(offs.iter().copied());
            let shapes = shapes_for(&set, &t);
            let mut covered = Vec::new();
            for s in &shapes {
                covered.extend(s.offset..s.end());
            }
            covered.sort_unstable();
            let expect: Vec<_> = offs.into_iter().collect();
            prop_assert_eq!(covered, expect);
        }
    }
}
