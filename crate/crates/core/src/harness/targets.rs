//! Built-in synthetic targets.

use std::sync::Arc;

use super::{Chunk, Cmp, Crash, Ctx, Layout, Registration, Target, TaintedBytes, TaintedValue};
use crate::constraints::{CmpOp, Pred};
use crate::shape_infer::Signedness::{Signed, Unsigned};

const fn k(v: i64) -> TaintedValue {
    TaintedValue::konst(v)
}

pub const MAGIC4: u32 = 0xDEAD_BEEF;

/// u32 at offset 0 equals a constant.
pub struct Magic4;

impl Target for Magic4 {
    fn name(&self) -> &'static str {
        "magic4"
    }
    fn description(&self) -> &'static str {
        "little-endian u32 at offset 0 compared with 0xdeadbeef"
    }
    fn layout(&self) -> Layout {
        Layout::new(1, 0)
    }
    fn seeds(&self) -> Vec<Vec<u8>> {
        vec![vec![0; 4]]
    }
    fn execute(&self, cx: &mut Ctx<'_>) -> Result<(), Crash> {
        let x = cx.load(0, 4, Unsigned);
        if cx.cmp(0, x, CmpOp::Eq, k(MAGIC4 as i64)) {
            return Err(Crash::abort("magic matched"));
        }
        Ok(())
    }
}

pub const COMPUTED_KEY: i64 = 0x1BAD_B002;
pub const COMPUTED_MAGIC: i64 = 7 * COMPUTED_KEY - 12345;

/// `7x - 12345` compared with a constant: the bytes that must appear in the
/// input never appear in the program.
pub struct ComputedMagic;

impl Target for ComputedMagic {
    fn name(&self) -> &'static str {
        "computed_magic"
    }
    fn description(&self) -> &'static str {
        "u32 at offset 0 transformed as 7x - 12345 before the equality check"
    }
    fn layout(&self) -> Layout {
        Layout::new(1, 0)
    }
    fn seeds(&self) -> Vec<Vec<u8>> {
        vec![vec![0; 4]]
    }
    fn execute(&self, cx: &mut Ctx<'_>) -> Result<(), Crash> {
        let x = cx.load(0, 4, Unsigned);
        let y = cx.mul(x, k(7));
        let y = cx.sub(y, k(12345));
        if cx.cmp(0, y, CmpOp::Eq, k(COMPUTED_MAGIC)) {
            return Err(Crash::abort("computed magic matched"));
        }
        Ok(())
    }
}

pub const SIZED_READS_FOO_SITE: u32 = 3;

/// Three stream reads (1024 bytes, then two i32s) guarding a quadratic
/// predicate inside a callee.
pub struct SizedReads;

impl SizedReads {
    fn read_int(cx: &mut Ctx<'_>, site: u32) -> Option<TaintedValue> {
        let c: Chunk = cx.read(4);
        if cx.cmp(site, c.count, CmpOp::Lt, k(4)) {
            return None;
        }
        Some(cx.load_in(&c, 0, 4, Signed))
    }
}

impl Target for SizedReads {
    fn name(&self) -> &'static str {
        "sized_reads"
    }
    fn description(&self) -> &'static str {
        "read(1024) then two i32 reads; callee branches on i*i - 2*j > 0"
    }
    fn layout(&self) -> Layout {
        Layout::new(4, 1)
    }
    fn seeds(&self) -> Vec<Vec<u8>> {
        vec![(0..100u8).map(|b| b'a' + b % 26).collect()]
    }
    fn execute(&self, cx: &mut Ctx<'_>) -> Result<(), Crash> {
        let header = cx.read(1024);
        if cx.cmp(0, header.count, CmpOp::Lt, k(1024)) {
            return Ok(());
        }
        let Some(i) = Self::read_int(cx, 1) else {
            return Ok(());
        };
        let Some(j) = Self::read_int(cx, 2) else {
            return Ok(());
        };
        cx.call(0, |cx| {
            let ii = cx.mul(i, i);
            let jj = cx.mul(j, k(2));
            let d = cx.sub(ii, jj);
            cx.cmp(SIZED_READS_FOO_SITE, d, CmpOp::Gt, k(0));
        });
        Ok(())
    }
}

pub const CALL_CONTEXT_X_SITE: u32 = 0;
pub const CALL_CONTEXT_CRASH_SITE: u32 = 1;

/// One function called from two call sites. Its `else` arm arms a flag; its
/// `then` arm crashes when the flag is armed and byte 2 is 1. The flag only
/// scales an operand, so arming it adds no branch of its own.
pub struct CallContextTarget;

impl CallContextTarget {
    fn f(cx: &mut Ctx<'_>, x: TaintedValue, trigger: &mut i64) -> Result<(), Crash> {
        if cx.cmp(CALL_CONTEXT_X_SITE, x, CmpOp::Ne, k(0)) {
            let b2 = cx.byte(2);
            let gated = cx.mul(b2, k(*trigger));
            if cx.cmp(CALL_CONTEXT_CRASH_SITE, gated, CmpOp::Eq, k(1)) {
                return Err(Crash::abort("armed flag reached with byte 2 == 1"));
            }
        } else {
            *trigger = 1;
        }
        Ok(())
    }
}

impl Target for CallContextTarget {
    fn name(&self) -> &'static str {
        "call_context"
    }
    fn description(&self) -> &'static str {
        "f(byte0); f(byte1) where only the second call can see the flag armed by the first"
    }
    fn layout(&self) -> Layout {
        Layout::new(2, 2)
    }
    fn seeds(&self) -> Vec<Vec<u8>> {
        vec![vec![0; 3]]
    }
    fn execute(&self, cx: &mut Ctx<'_>) -> Result<(), Crash> {
        let mut trigger = 0;
        let a = cx.byte(0);
        cx.call(0, |cx| Self::f(cx, a, &mut trigger))?;
        let b = cx.byte(1);
        cx.call(1, |cx| Self::f(cx, b, &mut trigger))
    }
}

pub const LENGTH_GATE_READ: usize = 64;
pub const LENGTH_GATE_TAG: u32 = u32::from_le_bytes(*b"LEN!");

/// A 64-byte read that must be complete before a tag at its end is checked.
pub struct LengthGate;

impl Target for LengthGate {
    fn name(&self) -> &'static str {
        "length_gate"
    }
    fn description(&self) -> &'static str {
        "read(64); requires a full read, then a u32 tag at offset 60"
    }
    fn layout(&self) -> Layout {
        Layout::new(2, 0)
    }
    fn seeds(&self) -> Vec<Vec<u8>> {
        vec![vec![0x41; 16]]
    }
    fn execute(&self, cx: &mut Ctx<'_>) -> Result<(), Crash> {
        let c = cx.read(LENGTH_GATE_READ);
        if cx.cmp(0, c.count, CmpOp::Lt, k(LENGTH_GATE_READ as i64)) {
            return Ok(());
        }
        let tag = cx.load_in(&c, 60, 4, Unsigned);
        if cx.cmp(1, tag, CmpOp::Eq, k(LENGTH_GATE_TAG as i64)) {
            return Err(Crash::abort("length-gated tag matched"));
        }
        Ok(())
    }
}

pub const NESTED_GUARD: u16 = 0x55AA;
pub const NESTED_INNER_SITE: u32 = 4;

/// `(b0 == 'G' && b1 > 200) || (b2 < 10 && b3 != 0)` guarding an equality.
pub struct NestedLogic;

impl Target for NestedLogic {
    fn name(&self) -> &'static str {
        "nested_logic"
    }
    fn description(&self) -> &'static str {
        "compound && / || predicate over bytes 0..4 guarding a u16 check at offset 4"
    }
    fn layout(&self) -> Layout {
        Layout::new(5, 0)
    }
    fn seeds(&self) -> Vec<Vec<u8>> {
        vec![vec![0x40; 8]]
    }
    fn execute(&self, cx: &mut Ctx<'_>) -> Result<(), Crash> {
        let b: Vec<TaintedValue> = (0..4).map(|i| cx.byte(i)).collect();
        let pred = Pred::or(
            Pred::and(
                Pred::atom(Cmp::new(0, b[0], CmpOp::Eq, k(i64::from(b'G')))),
                Pred::atom(Cmp::new(1, b[1], CmpOp::Gt, k(200))),
            ),
            Pred::and(
                Pred::atom(Cmp::new(2, b[2], CmpOp::Lt, k(10))),
                Pred::atom(Cmp::new(3, b[3], CmpOp::Ne, k(0))),
            ),
        );
        if cx.test(&pred) {
            let w = cx.load(4, 2, Unsigned);
            if cx.cmp(NESTED_INNER_SITE, w, CmpOp::Eq, k(i64::from(NESTED_GUARD))) {
                return Err(Crash::abort("nested predicate and guard satisfied"));
            }
        }
        Ok(())
    }
}

pub const POLY_THRESHOLD: i64 = 40_000;

/// Fixed-point `ln(1 + u)` cubic approximation, scaled so `u = x / 65536`.
pub fn poly(x: i64) -> i64 {
    x - x * x / 131_072 + x * x * x / (3 << 32)
}

/// Monotone polynomial of a u16 compared with a threshold.
pub struct PolyThreshold;

impl Target for PolyThreshold {
    fn name(&self) -> &'static str {
        "poly_threshold"
    }
    fn description(&self) -> &'static str {
        "cubic log approximation of the u16 at offset 0 compared with a threshold"
    }
    fn layout(&self) -> Layout {
        Layout::new(1, 0)
    }
    fn seeds(&self) -> Vec<Vec<u8>> {
        vec![vec![0; 2]]
    }
    fn execute(&self, cx: &mut Ctx<'_>) -> Result<(), Crash> {
        let x = cx.load(0, 2, Unsigned);
        let p = cx.map(x, poly);
        if cx.cmp(0, p, CmpOp::Ge, k(POLY_THRESHOLD)) {
            return Err(Crash::abort("threshold exceeded"));
        }
        Ok(())
    }
}

pub const LAVA_LEN: usize = 32;
pub const LAVA_STRCMP_SITE: u32 = 6;
pub const LAVA_BUG_IDS: [u32; 8] = [11, 23, 37, 41, 53, 67, 79, 97];

/// Eight independent guarded crashes over disjoint fields of a 32-byte
/// record, each with its own bug id.
pub struct Lava;

impl Target for Lava {
    fn name(&self) -> &'static str {
        "lava"
    }
    fn description(&self) -> &'static str {
        "eight guarded injected bugs over disjoint fields of a 32-byte record"
    }
    fn layout(&self) -> Layout {
        Layout::new(9, 0)
    }
    fn seeds(&self) -> Vec<Vec<u8>> {
        vec![vec![0; LAVA_LEN]]
    }
    fn execute(&self, cx: &mut Ctx<'_>) -> Result<(), Crash> {
        let ids = LAVA_BUG_IDS;

        let a = cx.load(0, 4, Unsigned);
        if cx.cmp(0, a, CmpOp::Eq, k(0x6C61_7661)) {
            return Err(Crash::bug(ids[0]));
        }
        let b = cx.load(4, 4, Unsigned);
        let b = cx.add(b, k(0x1000));
        if cx.cmp(1, b, CmpOp::Eq, k(0x4142_4344)) {
            return Err(Crash::bug(ids[1]));
        }
        let c = cx.load(8, 2, Unsigned);
        let c = cx.mul(c, k(3));
        if cx.cmp(2, c, CmpOp::Eq, k(0xBEEF * 3)) {
            return Err(Crash::bug(ids[2]));
        }
        let d = cx.load(12, 4, Signed);
        if cx.cmp(3, d, CmpOp::Lt, k(-100_000)) {
            return Err(Crash::bug(ids[3]));
        }
        let e = cx.load(10, 2, Unsigned);
        if cx.cmp(4, e, CmpOp::Eq, k(0x1337)) {
            return Err(Crash::bug(ids[4]));
        }
        let f0 = cx.load(16, 4, Unsigned);
        let f1 = cx.load(20, 4, Unsigned);
        let f = cx.sub(f0, f1);
        if cx.cmp(5, f, CmpOp::Eq, k(777)) {
            return Err(Crash::bug(ids[5]));
        }
        let s = cx.bytes(24, 4);
        if cx.cmp_bytes(LAVA_STRCMP_SITE, &s, CmpOp::Eq, &TaintedBytes::konst(b"BUG!")) {
            return Err(Crash::bug(ids[6]));
        }
        let g0 = cx.byte(28);
        let g1 = cx.byte(29);
        let pred = Pred::and(
            Pred::atom(Cmp::new(7, g0, CmpOp::Gt, k(250))),
            Pred::atom(Cmp::new(8, g1, CmpOp::Lt, k(3))),
        );
        if cx.test(&pred) {
            return Err(Crash::bug(ids[7]));
        }
        Ok(())
    }
}

pub const CHECKSUM_LEN: usize = 64;
pub const CHECKSUM_TARGET: i64 = 300_000;

/// Position-weighted byte sum over 64 bytes compared with a constant: one
/// conditional whose gradient has 64 components.
pub struct Checksum;

impl Target for Checksum {
    fn name(&self) -> &'static str {
        "checksum"
    }
    fn description(&self) -> &'static str {
        "sum of (i + 1) * byte[i] over 64 bytes compared with a constant"
    }
    fn layout(&self) -> Layout {
        Layout::new(1, 0)
    }
    fn seeds(&self) -> Vec<Vec<u8>> {
        vec![vec![0; CHECKSUM_LEN]]
    }
    fn execute(&self, cx: &mut Ctx<'_>) -> Result<(), Crash> {
        let mut acc = k(0);
        for i in 0..CHECKSUM_LEN {
            let b = cx.byte(i);
            let w = cx.mul(b, k(i as i64 + 1));
            acc = cx.add(acc, w);
        }
        if cx.cmp(0, acc, CmpOp::Eq, k(CHECKSUM_TARGET)) {
            return Err(Crash::abort("checksum matched"));
        }
        Ok(())
    }
}

/// Named collection of targets.
#[derive(Clone)]
pub struct Catalog {
    targets: Vec<Arc<dyn Target>>,
}

impl Catalog {
    pub fn builtin() -> Self {
        Catalog {
            targets: vec![
                Arc::new(Magic4),
                Arc::new(ComputedMagic),
                Arc::new(SizedReads),
                Arc::new(CallContextTarget),
                Arc::new(LengthGate),
                Arc::new(NestedLogic),
                Arc::new(PolyThreshold),
                Arc::new(Lava),
                Arc::new(Checksum),
            ],
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.targets.iter().map(|t| t.name())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn Target>> {
        self.targets.iter()
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Target>> {
        self.targets.iter().find(|t| t.name() == name).cloned()
    }

    /// Looks up `name` and assigns its call-site ids from `seed`.
    pub fn register(&self, name: &str, seed: u64) -> Option<Registration> {
        self.get(name).map(|t| Registration::new(t, seed))
    }
}

/// The built-in catalog.
pub fn register_targets() -> Catalog {
    Catalog::builtin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::CallContext;
    use crate::harness::{Executor, RunOptions, Verdict, DEFAULT_LAYOUT_SEED};
    use crate::taint_store::BitVector;

    fn exec(name: &str) -> Executor {
        Executor::new(Catalog::builtin().register(name, DEFAULT_LAYOUT_SEED).unwrap(), 16)
    }

    #[test]
    fn names_are_unique() {
        let cat = Catalog::builtin();
        let mut names: Vec<_> = cat.names().collect();
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), n);
        assert!(n >= 8);
    }

    #[test]
    fn seeds_do_not_crash() {
        let cat = Catalog::builtin();
        for t in cat.iter() {
            let ex = exec(t.name());
            for s in t.seeds() {
                assert_eq!(ex.run_fast(&s, &RunOptions::default()).verdict, Verdict::Ok, "{}", t.name());
            }
        }
    }

    #[test]
    fn magic_solution_crashes() {
        let r = exec("magic4").run_fast(&MAGIC4.to_le_bytes(), &RunOptions::default());
        assert!(r.verdict.is_crash());
        let x = ((COMPUTED_MAGIC + 12345) / 7) as u32;
        let r = exec("computed_magic").run_fast(&x.to_le_bytes(), &RunOptions::default());
        assert!(r.verdict.is_crash());
    }

    #[test]
    fn sized_reads_offsets() {
        let mut input = vec![0u8; 1032];
        input[1024..1028].copy_from_slice(&3i32.to_le_bytes());
        input[1028..1032].copy_from_slice(&(-2i32).to_le_bytes());
        let r = exec("sized_reads").run_taint(&input, &RunOptions::default());
        let foo = r
            .cond_records
            .iter()
            .find(|r| r.site == SIZED_READS_FOO_SITE)
            .unwrap();
        assert_eq!(foo.offsets, BitVector::from_range(1024, 8));
        assert_ne!(foo.context, CallContext::ROOT);
        assert!(foo.taken);
        assert_eq!(foo.shapes.len(), 2);
        assert!(foo.shapes.iter().all(|s| s.size == 4 && s.signedness == Signed));
    }

    #[test]
    fn sized_reads_length_hints() {
        let ex = exec("sized_reads");
        let hint = |len: usize| {
            let r = ex.run_taint(&vec![0; len], &RunOptions::default());
            r.cond_records.iter().find_map(|r| r.length_hint)
        };
        assert_eq!(hint(100), Some(1024));
        assert_eq!(hint(1024), Some(1028));
        assert_eq!(hint(1030), Some(1032));
        assert_eq!(hint(1032), None);
    }

    #[test]
    fn call_context_crash_path() {
        let ex = exec("call_context");
        let opts = RunOptions::default();
        assert_eq!(ex.run_fast(&[1, 0, 1], &opts).verdict, Verdict::Ok);
        assert_eq!(ex.run_fast(&[0, 1, 0], &opts).verdict, Verdict::Ok);
        assert!(ex.run_fast(&[0, 1, 1], &opts).verdict.is_crash());
    }

    #[test]
    fn lava_each_guard() {
        let ex = exec("lava");
        let mut cases: Vec<Vec<u8>> = Vec::new();
        let z = || vec![0u8; LAVA_LEN];
        let mut v = z();
        v[0..4].copy_from_slice(&0x6C61_7661u32.to_le_bytes());
        cases.push(v);
        let mut v = z();
        v[4..8].copy_from_slice(&(0x4142_4344u32 - 0x1000).to_le_bytes());
        cases.push(v);
        let mut v = z();
        v[8..10].copy_from_slice(&0xBEEFu16.to_le_bytes());
        cases.push(v);
        let mut v = z();
        v[12..16].copy_from_slice(&(-100_001i32).to_le_bytes());
        cases.push(v);
        let mut v = z();
        v[10..12].copy_from_slice(&0x1337u16.to_le_bytes());
        cases.push(v);
        let mut v = z();
        v[16..20].copy_from_slice(&777u32.to_le_bytes());
        cases.push(v);
        let mut v = z();
        v[24..28].copy_from_slice(b"BUG!");
        cases.push(v);
        let mut v = z();
        v[28] = 251;
        cases.push(v);
        for (case, id) in cases.iter().zip(LAVA_BUG_IDS) {
            match ex.run_fast(case, &RunOptions::default()).verdict {
                Verdict::Crash { class, .. } => assert_eq!(class, crate::harness::CrashClass::Abort { bug: Some(id) }),
                v => panic!("bug {id} not triggered: {v:?}"),
            }
        }
    }

    #[test]
    fn poly_is_monotone_and_reachable() {
        let mut prev = poly(0);
        for x in 1..=65535 {
            let p = poly(x);
            assert!(p >= prev, "poly decreases at {x}");
            prev = p;
        }
        assert!(poly(65535) >= POLY_THRESHOLD);
        assert!(poly(0) < POLY_THRESHOLD);
    }

    #[test]
    fn checksum_is_reachable() {
        let max: i64 = (1..=CHECKSUM_LEN as i64).map(|w| 255 * w).sum();
        assert!(max >= CHECKSUM_TARGET);
    }
}
