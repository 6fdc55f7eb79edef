use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A set of input byte offsets stored as a bit vector, always in canonical
/// form: bit `i` means byte offset `i` is tainted and there are no trailing
/// zero bits. Two vectors that differ only by trailing zeros are therefore
/// equal.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitVector {
    words: Vec<u64>,
    len: usize,
}

impl BitVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a canonical vector from a sequence of booleans.
    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut v = Self::new();
        for (i, b) in bits.into_iter().enumerate() {
            if b {
                v.set(i);
            }
        }
        v
    }

    pub fn from_offsets<I: IntoIterator<Item = usize>>(offsets: I) -> Self {
        let mut v = Self::new();
        for o in offsets {
            v.set(o);
        }
        v
    }

    /// Contiguous run of offsets `start..start + len`.
    pub fn from_range(start: usize, len: usize) -> Self {
        Self::from_offsets(start..start + len)
    }

    /// Length of the canonical vector (one past the highest set offset).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        self.words
            .get(i / 64)
            .is_some_and(|w| w >> (i % 64) & 1 == 1)
    }

    pub fn set(&mut self, i: usize) {
        let w = i / 64;
        if w >= self.words.len() {
            self.words.resize(w + 1, 0);
        }
        self.words[w] |= 1 << (i % 64);
        self.len = self.len.max(i + 1);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Set offsets in ascending order.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let tz = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    /// All `len()` bits, lowest offset first.
    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    pub fn union(&self, other: &BitVector) -> BitVector {
        let (long, short) = if self.words.len() >= other.words.len() {
            (self, other)
        } else {
            (other, self)
        };
        let mut words = long.words.clone();
        for (w, s) in words.iter_mut().zip(&short.words) {
            *w |= s;
        }
        BitVector {
            words,
            len: self.len.max(other.len),
        }
    }

    pub fn contains_all(&self, offsets: std::ops::Range<usize>) -> bool {
        offsets.into_iter().all(|o| self.get(o))
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.ones()).finish()
    }
}

impl Serialize for BitVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.ones())
    }
}

impl<'de> Deserialize<'de> for BitVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(BitVector::from_offsets(Vec::<usize>::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_zeros_are_not_part_of_the_vector() {
        let a = BitVector::from_bits([true, false, false]);
        let b = BitVector::from_bits([true]);
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
        assert!(BitVector::from_bits([false, false]).is_empty());
    }

    #[test]
    fn ones_crosses_word_boundaries() {
        let v = BitVector::from_offsets([0, 63, 64, 200]);
        assert_eq!(v.ones().collect::<Vec<_>>(), vec![0, 63, 64, 200]);
        assert_eq!(v.len(), 201);
        assert_eq!(v.count_ones(), 4);
    }

    #[test]
    fn union_is_bitwise_or() {
        let a = BitVector::from_offsets([1, 130]);
        let b = BitVector::from_offsets([2]);
        assert_eq!(a.union(&b), BitVector::from_offsets([1, 2, 130]));
        assert_eq!(b.union(&a), a.union(&b));
    }
}
