//! Context-sensitive branch coverage.
//!
//! A branch is `(prev block, next block, calling context)`. Each run counts
//! branch executions in a [`PathTraceTable`]; a global [`CoverageTable`] keeps,
//! per bucket, one bit for each execution-count range ever observed.

use serde::{Deserialize, Serialize};

/// Default table size exponent: 2^20 buckets.
pub const DEFAULT_MAP_BITS: u8 = 20;

/// Random identifier of one call site in a target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CallSiteId(pub u32);

/// Hash of the call stack: xor of the ids of every call site on it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CallContext(pub u32);

impl CallContext {
    pub const ROOT: CallContext = CallContext(0);

    #[must_use]
    pub fn push(self, site: CallSiteId) -> CallContext {
        CallContext(self.0 ^ site.0)
    }

    #[must_use]
    pub fn pop(self, site: CallSiteId) -> CallContext {
        CallContext(self.0 ^ site.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BranchKey {
    pub prev: u32,
    pub cur: u32,
    pub context: CallContext,
}

impl BranchKey {
    pub fn new(prev: u32, cur: u32, context: CallContext) -> Self {
        BranchKey { prev, cur, context }
    }

    /// Bucket of this branch in a table of `2^map_bits` entries. Fixed mix,
    /// no per-process salt.
    pub fn bucket(&self, map_bits: u8) -> u32 {
        let mut h = (u64::from(self.prev) << 32 | u64::from(self.cur))
            ^ u64::from(self.context.0).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        // splitmix64 finalizer
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
        (h & ((1u64 << map_bits) - 1)) as u32
    }
}

/// Range bit for an execution count: `[1] [2] [3] [4,7] [8,15] [16,31]
/// [32,127] [128,inf)`.
pub fn bucket_index(count: u32) -> u8 {
    debug_assert!(count > 0, "branch recorded with zero count");
    match count {
        0 | 1 => 0,
        2 => 1,
        3 => 2,
        4..=7 => 3,
        8..=15 => 4,
        16..=31 => 5,
        32..=127 => 6,
        _ => 7,
    }
}

/// Per-run branch execution counters. Only touched buckets are remembered,
/// so clearing and snapshotting cost is proportional to the run, not the
/// table.
#[derive(Clone, Debug)]
pub struct PathTraceTable {
    counts: Vec<u32>,
    touched: Vec<u32>,
    map_bits: u8,
}

impl PathTraceTable {
    pub fn new(map_bits: u8) -> Self {
        assert!((1..=28).contains(&map_bits), "map_bits out of range");
        PathTraceTable {
            counts: vec![0; 1 << map_bits],
            touched: Vec::new(),
            map_bits,
        }
    }

    pub fn map_bits(&self) -> u8 {
        self.map_bits
    }

    pub fn record(&mut self, key: &BranchKey) {
        self.record_bucket(key.bucket(self.map_bits));
    }

    pub fn record_bucket(&mut self, bucket: u32) {
        let c = &mut self.counts[bucket as usize];
        if *c == 0 {
            self.touched.push(bucket);
        }
        *c = c.saturating_add(1);
    }

    pub fn count(&self, bucket: u32) -> u32 {
        self.counts[bucket as usize]
    }

    /// Sorted `(bucket, count)` pairs for this run.
    pub fn snapshot(&self) -> BranchTrace {
        let mut v: Vec<_> = self
            .touched
            .iter()
            .map(|&b| (b, self.counts[b as usize]))
            .collect();
        v.sort_unstable_by_key(|&(b, _)| b);
        BranchTrace(v)
    }

    pub fn clear(&mut self) {
        for &b in &self.touched {
            self.counts[b as usize] = 0;
        }
        self.touched.clear();
    }

    /// Snapshot then clear.
    pub fn take(&mut self) -> BranchTrace {
        let s = self.snapshot();
        self.clear();
        s
    }
}

/// Compact result of one run: every touched bucket with its count, sorted by
/// bucket.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchTrace(pub Vec<(u32, u32)>);

impl BranchTrace {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn count(&self, bucket: u32) -> u32 {
        self.0
            .binary_search_by_key(&bucket, |&(b, _)| b)
            .map_or(0, |i| self.0[i].1)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NewState {
    pub is_new: bool,
    /// `(bucket, range bit)` pairs a merge would set.
    pub newly_set: Vec<(u32, u8)>,
}

/// Cross-run coverage: one 8-bit range vector per bucket.
#[derive(Clone, Debug)]
pub struct CoverageTable {
    ranges: Vec<u8>,
    map_bits: u8,
    covered: usize,
    set_bits: usize,
}

impl CoverageTable {
    pub fn new(map_bits: u8) -> Self {
        assert!((1..=28).contains(&map_bits), "map_bits out of range");
        CoverageTable {
            ranges: vec![0; 1 << map_bits],
            map_bits,
            covered: 0,
            set_bits: 0,
        }
    }

    pub fn map_bits(&self) -> u8 {
        self.map_bits
    }

    pub fn ranges(&self, bucket: u32) -> u8 {
        self.ranges[bucket as usize]
    }

    /// Whether some past run executed `key` (modulo bucket collisions).
    pub fn is_covered(&self, key: &BranchKey) -> bool {
        self.ranges[key.bucket(self.map_bits) as usize] != 0
    }

    /// True iff the trace hits a bucket with no coverage yet, or a count
    /// whose range bit is unset.
    pub fn has_new_state(&self, trace: &BranchTrace) -> NewState {
        let newly_set: Vec<_> = trace
            .0
            .iter()
            .filter_map(|&(b, n)| {
                let bit = bucket_index(n);
                (self.ranges[b as usize] & (1 << bit) == 0).then_some((b, bit))
            })
            .collect();
        NewState {
            is_new: !newly_set.is_empty(),
            newly_set,
        }
    }

    pub fn merge(&mut self, trace: &BranchTrace) {
        for &(b, n) in &trace.0 {
            let bit = 1u8 << bucket_index(n);
            let slot = &mut self.ranges[b as usize];
            if *slot & bit == 0 {
                if *slot == 0 {
                    self.covered += 1;
                }
                *slot |= bit;
                self.set_bits += 1;
            }
        }
    }

    /// Buckets with at least one range bit set.
    pub fn covered_buckets(&self) -> usize {
        self.covered
    }

    pub fn set_bits(&self) -> usize {
        self.set_bits
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    const BITS: u8 = 16;

    fn trace_of(counts: &[(u32, u32)]) -> BranchTrace {
        let mut t = PathTraceTable::new(BITS);
        for &(b, n) in counts {
            for _ in 0..n {
                t.record_bucket(b);
            }
        }
        t.take()
    }

    #[test]
    fn bucket_ranges() {
        assert_eq!(bucket_index(1), 0);
        assert_eq!(bucket_index(5), 3);
        assert_eq!(bucket_index(200), 7);
        assert_eq!(bucket_index(u32::MAX), 7);
    }

    #[test]
    fn same_key_counts_twice() {
        let mut t = PathTraceTable::new(BITS);
        let k = BranchKey::new(1, 2, CallContext(0));
        t.record(&k);
        t.record(&k);
        assert_eq!(t.count(k.bucket(BITS)), 2);
    }

    #[test]
    fn contexts_separate_counters() {
        let a = BranchKey::new(1, 2, CallContext(0x1234));
        let b = BranchKey::new(1, 2, CallContext(0x9876));
        assert_ne!(a.bucket(20), b.bucket(20));
    }

    #[test]
    fn counter_saturates() {
        let mut t = PathTraceTable::new(BITS);
        t.counts[3] = u32::MAX;
        t.touched.push(3);
        t.record_bucket(3);
        assert_eq!(t.count(3), u32::MAX);
    }

    #[test]
    fn clear_resets_only_touched() {
        let mut t = PathTraceTable::new(BITS);
        t.record_bucket(9);
        let snap = t.take();
        assert_eq!(snap.0, vec![(9, 1)]);
        assert_eq!(t.count(9), 0);
        assert!(t.take().is_empty());
    }

    #[test]
    fn new_state_rules() {
        let mut cov = CoverageTable::new(BITS);
        let first = trace_of(&[(4, 5)]);
        assert!(cov.has_new_state(&first).is_new);
        cov.merge(&first);
        assert!(!cov.has_new_state(&first).is_new);
        // 6 is still in [4,7]
        assert!(!cov.has_new_state(&trace_of(&[(4, 6)])).is_new);
        let nine = cov.has_new_state(&trace_of(&[(4, 9)]));
        assert!(nine.is_new);
        assert_eq!(nine.newly_set, vec![(4, 4)]);
    }

    #[test]
    fn disjoint_merges() {
        let mut cov = CoverageTable::new(BITS);
        let a = trace_of(&[(1, 1), (2, 3)]);
        let b = trace_of(&[(7, 40)]);
        cov.merge(&a);
        cov.merge(&b);
        assert!(!cov.has_new_state(&a).is_new);
        assert!(!cov.has_new_state(&b).is_new);
        assert_eq!(cov.covered_buckets(), 3);
        assert_eq!(cov.set_bits(), 3);
    }

    #[test]
    fn coverage_bits_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cov = CoverageTable::new(10);
        let mut prev = 0;
        for _ in 0..1000 {
            let counts: Vec<_> = (0..rng.gen_range(1..8))
                .map(|_| (rng.gen_range(0..1024), rng.gen_range(1..300)))
                .collect();
            let mut t = PathTraceTable::new(10);
            for (b, n) in counts {
                for _ in 0..n {
                    t.record_bucket(b);
                }
            }
            let tr = t.take();
            let before: Vec<u8> = tr.0.iter().map(|&(b, _)| cov.ranges(b)).collect();
            cov.merge(&tr);
            for (&(b, _), old) in tr.0.iter().zip(before) {
                assert_eq!(cov.ranges(b) & old, old);
            }
            let bits: usize = cov.ranges.iter().map(|r| r.count_ones() as usize).sum();
            assert_eq!(bits, cov.set_bits());
            assert!(bits >= prev);
            prev = bits;
        }
    }

    #[test]
    fn context_push_pop() {
        let ctx = CallContext(0xAAAA);
        let s = CallSiteId(0x1357);
        assert_eq!(ctx.push(s).pop(s), ctx);
        let (a, b) = (CallSiteId(3), CallSiteId(12));
        assert_eq!(ctx.push(a).push(b), ctx.push(b).push(a));
    }

    #[test]
    fn recursion_through_one_site_alternates() {
        let s = CallSiteId(0xDEAD_BEEF);
        let mut ctx = CallContext::ROOT;
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..50 {
            ctx = ctx.push(s);
            seen.insert(ctx);
        }
        assert_eq!(seen.len(), 2);
    }

    proptest! {
        #[test]
        fn bucket_index_is_monotone(a in 1u32..100_000, b in 1u32..100_000) {
            if a <= b {
                prop_assert!(bucket_index(a) <= bucket_index(b));
            }
        }

        #[test]
        fn bucket_is_stable(prev: u32, cur: u32, ctx: u32) {
            let k = BranchKey::new(prev, cur, CallContext(ctx));
            prop_assert_eq!(k.bucket(20), k.bucket(20));
            prop_assert!(k.bucket(20) < 1 << 20);
        }
    }
}
