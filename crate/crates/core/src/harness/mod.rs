//! In-process instrumentation runtime.
//!
//! Targets are ordinary Rust functions written against [`Ctx`]: they pull
//! bytes out of the input, combine them with the arithmetic helpers, and
//! route every two-way decision through [`Ctx::cmp`] (or
//! [`Ctx::cmp_bytes`] / [`Ctx::test`]). The same target body runs in two
//! modes:
//!
//! * **fast** records only the branch trace (plus, optionally, the value of
//!   `f` at one watched conditional);
//! * **taint** additionally labels every value with the input offsets it
//!   depends on, and emits a [`CondStmtRecord`] per conditional, the read
//!   records used for length exploration, and shape observations.

pub mod targets;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{split_logical, CmpOp, CondStmtRecord, FOutput, Operands, Pred};
use crate::coverage::{BranchKey, BranchTrace, CallContext, CallSiteId, PathTraceTable};
use crate::length_explore::{length_requirement, on_read, ReadRecord, StreamState};
use crate::par;
use crate::shape_infer::{shapes_for, Endian, Signedness, TypeTable};
use crate::taint_store::{BitVector, OffsetTree, TaintLabel};

/// Label of the empty offset set. Every taint run inserts the empty vector
/// first, so it is always label 0.
pub const EMPTY: TaintLabel = TaintLabel(0);

/// Default seed for call-site id assignment.
pub const DEFAULT_LAYOUT_SEED: u64 = 0x5EED_CA11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TaintedValue {
    pub value: i64,
    pub label: TaintLabel,
}

impl TaintedValue {
    pub const fn konst(value: i64) -> Self {
        TaintedValue {
            value,
            label: EMPTY,
        }
    }
}

/// A byte string together with the label of all offsets it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaintedBytes {
    pub data: Vec<u8>,
    pub label: TaintLabel,
}

impl TaintedBytes {
    pub fn konst(data: &[u8]) -> Self {
        TaintedBytes {
            data: data.to_vec(),
            label: EMPTY,
        }
    }
}

/// Result of a stream read: where the delivered bytes sit in the input and
/// the (tainted) number of bytes delivered.
#[derive(Clone, Copy, Debug)]
pub struct Chunk {
    pub start: usize,
    pub len: usize,
    pub count: TaintedValue,
}

/// A simple comparison used inside a compound predicate.
#[derive(Clone, Copy, Debug)]
pub struct Cmp {
    pub site: u32,
    pub lhs: TaintedValue,
    pub op: CmpOp,
    pub rhs: TaintedValue,
}

impl Cmp {
    pub fn new(site: u32, lhs: TaintedValue, op: CmpOp, rhs: TaintedValue) -> Self {
        Cmp { site, lhs, op, rhs }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "class")]
pub enum CrashClass {
    /// Explicit abort, optionally carrying an injected bug id.
    Abort { bug: Option<u32> },
    /// Trapped arithmetic fault such as division by zero.
    Arithmetic,
}

impl fmt::Display for CrashClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CrashClass::Abort { bug: Some(id) } => write!(f, "bug-{id}"),
            CrashClass::Abort { bug: None } => f.write_str("abort"),
            CrashClass::Arithmetic => f.write_str("arith"),
        }
    }
}

/// Raised by a target to signal a crash.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Crash {
    pub class: CrashClass,
    pub detail: String,
}

impl Crash {
    pub fn bug(id: u32) -> Self {
        Crash {
            class: CrashClass::Abort { bug: Some(id) },
            detail: format!("injected bug {id} triggered"),
        }
    }

    pub fn abort(detail: impl Into<String>) -> Self {
        Crash {
            class: CrashClass::Abort { bug: None },
            detail: detail.into(),
        }
    }

    pub fn arithmetic(detail: impl Into<String>) -> Self {
        Crash {
            class: CrashClass::Arithmetic,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum Verdict {
    Ok,
    Crash {
        /// Last branch recorded before the crash.
        at: Option<BranchKey>,
        class: CrashClass,
        detail: String,
    },
}

impl Verdict {
    pub fn is_crash(&self) -> bool {
        matches!(self, Verdict::Crash { .. })
    }
}

/// Static shape of a target: how many conditional and call sites it has.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub cond_sites: u32,
    pub call_sites: u32,
    pub endian: Endian,
}

impl Layout {
    pub const fn new(cond_sites: u32, call_sites: u32) -> Self {
        Layout {
            cond_sites,
            call_sites,
            endian: Endian::Little,
        }
    }
}

/// A program under test. Implementations must be deterministic functions of
/// the input: [`Ctx`] exposes no clock or randomness.
pub trait Target: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn layout(&self) -> Layout;
    /// Inputs to start fuzzing from when the user supplies none.
    fn seeds(&self) -> Vec<Vec<u8>>;
    fn execute(&self, cx: &mut Ctx<'_>) -> Result<(), Crash>;
}

/// Block id of conditional site `site` and of its two successors.
pub fn site_blocks(site: u32) -> (u32, u32, u32) {
    (3 * site, 3 * site + 1, 3 * site + 2)
}

/// The edge a conditional takes in a given direction.
pub fn edge(site: u32, direction: bool, context: CallContext) -> BranchKey {
    let (prev, t, f) = site_blocks(site);
    BranchKey::new(prev, if direction { t } else { f }, context)
}

/// A target plus the ids assigned to it at registration.
#[derive(Clone)]
pub struct Registration {
    target: Arc<dyn Target>,
    layout: Layout,
    call_ids: Vec<CallSiteId>,
}

impl fmt::Debug for Registration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registration")
            .field("target", &self.target.name())
            .field("layout", &self.layout)
            .field("call_ids", &self.call_ids)
            .finish()
    }
}

impl Registration {
    /// Registers `target`, drawing call-site ids from `rng`.
    pub fn with_rng<R: Rng>(target: Arc<dyn Target>, rng: &mut R) -> Self {
        let layout = target.layout();
        let mut call_ids = Vec::with_capacity(layout.call_sites as usize);
        while call_ids.len() < layout.call_sites as usize {
            let id = CallSiteId(rng.gen());
            // zero or duplicate ids would make contexts collide
            if id.0 != 0 && !call_ids.contains(&id) {
                call_ids.push(id);
            }
        }
        Registration {
            target,
            layout,
            call_ids,
        }
    }

    pub fn new(target: Arc<dyn Target>, seed: u64) -> Self {
        Self::with_rng(target, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn target(&self) -> &dyn Target {
        &*self.target
    }

    pub fn name(&self) -> &'static str {
        self.target.name()
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn call_id(&self, index: u32) -> CallSiteId {
        self.call_ids[index as usize]
    }
}

/// Ask a run to report `f` for one conditional.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Watch {
    pub site: u32,
    pub context: CallContext,
    /// Comparison whose constraint value is wanted.
    pub op: CmpOp,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub context_sensitive: bool,
    pub watch: Option<Watch>,
    /// Keep the full sequence of branches taken.
    pub log_path: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            context_sensitive: true,
            watch: None,
            log_path: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunResult {
    pub trace: BranchTrace,
    pub cond_records: Vec<CondStmtRecord>,
    pub read_records: Vec<ReadRecord>,
    pub verdict: Verdict,
    /// `f` at the first visit of the watched conditional.
    pub watched: Option<FOutput>,
    pub path: Vec<BranchKey>,
}

#[derive(Default)]
struct TaintState {
    tree: OffsetTree,
    range_labels: HashMap<(usize, usize), TaintLabel>,
    types: TypeTable,
    records: Vec<CondStmtRecord>,
    seen: HashSet<(u32, CallContext)>,
    reads: Vec<ReadRecord>,
}

impl TaintState {
    fn reset(&mut self) {
        self.tree.clear();
        self.range_labels.clear();
        self.types.clear();
        self.records.clear();
        self.seen.clear();
        self.reads.clear();
        let empty = self.tree.insert(&BitVector::new()).expect("fresh tree");
        debug_assert_eq!(empty, EMPTY);
    }

    fn range_label(&mut self, start: usize, len: usize) -> TaintLabel {
        if len == 0 {
            return EMPTY;
        }
        if let Some(&l) = self.range_labels.get(&(start, len)) {
            return l;
        }
        let l = self
            .tree
            .insert(&BitVector::from_range(start, len))
            .expect("taint store full");
        self.range_labels.insert((start, len), l);
        l
    }

    fn union(&mut self, a: TaintLabel, b: TaintLabel) -> TaintLabel {
        if a == b || b == EMPTY {
            return a;
        }
        if a == EMPTY {
            return b;
        }
        match (a.is_special(), b.is_special()) {
            (true, true) => a.max(b),
            (true, false) => a,
            (false, true) => b,
            (false, false) => self.tree.cached_union(a, b).expect("valid labels"),
        }
    }

    fn offsets(&mut self, a: TaintLabel, b: TaintLabel) -> BitVector {
        let plain = |l: TaintLabel| if l.is_special() { EMPTY } else { l };
        let u = self.union(plain(a), plain(b));
        self.tree.cached_find(u).expect("valid label")
    }
}

/// Execution context handed to a target body.
pub struct Ctx<'r> {
    input: &'r [u8],
    reg: &'r Registration,
    opts: &'r RunOptions,
    trace: &'r mut PathTraceTable,
    taint: Option<&'r mut TaintState>,
    stream: StreamState,
    context: CallContext,
    stack: Vec<CallSiteId>,
    last: Option<BranchKey>,
    watched: Option<FOutput>,
    path: Vec<BranchKey>,
}

impl<'r> Ctx<'r> {
    pub fn input_len(&self) -> usize {
        self.input.len()
    }

    pub fn is_tainting(&self) -> bool {
        self.taint.is_some()
    }

    pub fn context(&self) -> CallContext {
        self.context
    }

    fn observe(&mut self, offset: usize, size: usize, sign: Signedness) {
        if let Some(t) = self.taint.as_deref_mut() {
            t.types.observe_read(offset, size);
            t.types.observe_signedness(offset, sign);
        }
    }

    fn label_range(&mut self, start: usize, len: usize) -> TaintLabel {
        let len = len.min(self.input.len().saturating_sub(start));
        match self.taint.as_deref_mut() {
            Some(t) => t.range_label(start, len),
            None => EMPTY,
        }
    }

    /// Input byte at `offset`, or an untainted 0 past the end.
    pub fn byte(&mut self, offset: usize) -> TaintedValue {
        self.load(offset, 1, Signedness::Unsigned)
    }

    /// `size` consecutive input bytes at `offset` read as one integer in the
    /// target's byte order. Bytes past the end read as untainted zeros.
    pub fn load(&mut self, offset: usize, size: usize, sign: Signedness) -> TaintedValue {
        assert!(matches!(size, 1 | 2 | 4 | 8), "load width must be 1, 2, 4 or 8");
        let shape = crate::shape_infer::ValueShape::new(offset, size as u8, sign);
        let value = shape.decode(self.input, self.reg.layout.endian) as i64;
        if offset < self.input.len() {
            self.observe(offset, size, sign);
        }
        TaintedValue {
            value,
            label: self.label_range(offset, size),
        }
    }

    /// Raw byte string `offset..offset + len` (clipped to the input).
    pub fn bytes(&mut self, offset: usize, len: usize) -> TaintedBytes {
        let end = (offset + len).min(self.input.len());
        let start = offset.min(end);
        TaintedBytes {
            data: self.input[start..end].to_vec(),
            label: self.label_range(start, end - start),
        }
    }

    /// Stream read hook: delivers up to `requested` bytes from the current
    /// stream position.
    pub fn read(&mut self, requested: usize) -> Chunk {
        let index = self.taint.as_deref().map_or(0, |t| t.reads.len() as u32);
        let (range, rec) = on_read(&mut self.stream, self.input.len(), requested, index);
        let label = match self.taint.as_deref_mut() {
            Some(t) => {
                let l = rec.special_label;
                t.reads.push(rec);
                l
            }
            None => EMPTY,
        };
        Chunk {
            start: range.start,
            len: range.len(),
            count: TaintedValue {
                value: range.len() as i64,
                label,
            },
        }
    }

    /// `load` relative to a chunk.
    pub fn load_in(&mut self, chunk: &Chunk, at: usize, size: usize, sign: Signedness) -> TaintedValue {
        if at + size > chunk.len {
            return TaintedValue::konst(0);
        }
        self.load(chunk.start + at, size, sign)
    }

    pub fn union(&mut self, a: TaintLabel, b: TaintLabel) -> TaintLabel {
        match self.taint.as_deref_mut() {
            Some(t) => t.union(a, b),
            None => EMPTY,
        }
    }

    pub fn map(&mut self, a: TaintedValue, f: impl FnOnce(i64) -> i64) -> TaintedValue {
        TaintedValue {
            value: f(a.value),
            label: a.label,
        }
    }

    pub fn map2(&mut self, a: TaintedValue, b: TaintedValue, f: impl FnOnce(i64, i64) -> i64) -> TaintedValue {
        TaintedValue {
            value: f(a.value, b.value),
            label: self.union(a.label, b.label),
        }
    }

    pub fn add(&mut self, a: TaintedValue, b: TaintedValue) -> TaintedValue {
        self.map2(a, b, i64::wrapping_add)
    }

    pub fn sub(&mut self, a: TaintedValue, b: TaintedValue) -> TaintedValue {
        self.map2(a, b, i64::wrapping_sub)
    }

    pub fn mul(&mut self, a: TaintedValue, b: TaintedValue) -> TaintedValue {
        self.map2(a, b, i64::wrapping_mul)
    }

    /// Integer division; a zero divisor is a crash.
    pub fn div(&mut self, a: TaintedValue, b: TaintedValue) -> Result<TaintedValue, Crash> {
        if b.value == 0 {
            return Err(Crash::arithmetic("division by zero"));
        }
        Ok(self.map2(a, b, i64::wrapping_div))
    }

    fn effective_context(&self) -> CallContext {
        if self.opts.context_sensitive {
            self.context
        } else {
            CallContext::ROOT
        }
    }

    fn record_edge(&mut self, site: u32, taken: bool) -> BranchKey {
        debug_assert!(site < self.reg.layout.cond_sites, "undeclared conditional site {site}");
        let key = edge(site, taken, self.effective_context());
        self.trace.record(&key);
        self.last = Some(key);
        if self.opts.log_path {
            self.path.push(key);
        }
        key
    }

    fn observe_cond(&mut self, site: u32, op: CmpOp, taken: bool, operands: Operands, labels: (TaintLabel, TaintLabel)) {
        let ctx = self.effective_context();
        if let Some(w) = self.opts.watch {
            if self.watched.is_none() && w.site == site && w.context == ctx {
                self.watched = Some(operands.transform(w.op).0);
            }
        }
        let Some(t) = self.taint.as_deref_mut() else {
            return;
        };
        if !t.seen.insert((site, ctx)) {
            return;
        }
        let (f, kind) = operands.transform(op);
        let offsets = t.offsets(labels.0, labels.1);
        t.records.push(CondStmtRecord {
            site,
            context: ctx,
            branch: edge(site, taken, ctx),
            sibling: edge(site, !taken, ctx),
            op,
            taken,
            kind,
            f,
            operands,
            lhs_label: labels.0,
            rhs_label: labels.1,
            offsets,
            shapes: Vec::new(),
            is_explored_true: taken,
            is_explored_false: !taken,
            length_hint: None,
        });
    }

    /// Two-way conditional hook: returns the real outcome of `a op b`.
    pub fn cmp(&mut self, site: u32, a: TaintedValue, op: CmpOp, b: TaintedValue) -> bool {
        let taken = op.eval(a.value, b.value);
        self.record_edge(site, taken);
        self.observe_cond(site, op, taken, Operands::Int { lhs: a.value, rhs: b.value }, (a.label, b.label));
        taken
    }

    /// Byte-sequence comparison hook (`strcmp`/`memcmp` style); `op` is
    /// [`CmpOp::Eq`] or [`CmpOp::Ne`].
    pub fn cmp_bytes(&mut self, site: u32, a: &TaintedBytes, op: CmpOp, b: &TaintedBytes) -> bool {
        debug_assert!(matches!(op, CmpOp::Eq | CmpOp::Ne));
        let equal = a.data == b.data;
        let taken = if op == CmpOp::Eq { equal } else { !equal };
        self.record_edge(site, taken);
        let operands = Operands::Bytes {
            lhs: a.data.clone(),
            rhs: b.data.clone(),
        };
        self.observe_cond(site, op, taken, operands, (a.label, b.label));
        taken
    }

    /// Evaluates a compound predicate as nested two-way conditionals, one
    /// `cmp` per simple comparison reached.
    pub fn test(&mut self, pred: &Pred<Cmp>) -> bool {
        split_logical(pred).eval(&mut |c: &Cmp| self.cmp(c.site, c.lhs, c.op, c.rhs))
    }

    /// Runs `body` as a callee of call site `index`.
    pub fn call<R>(&mut self, index: u32, body: impl FnOnce(&mut Self) -> R) -> R {
        let site = self.reg.call_id(index);
        self.context = self.context.push(site);
        self.stack.push(site);
        let r = body(self);
        let top = self.stack.pop();
        debug_assert_eq!(top, Some(site), "unbalanced call context");
        self.context = self.context.pop(site);
        r
    }
}

/// Runs targets in either mode. Fast runs may execute concurrently; taint
/// runs are serialized on an internal lock.
pub struct Executor {
    reg: Registration,
    map_bits: u8,
    tables: Mutex<Vec<PathTraceTable>>,
    taint: Mutex<TaintState>,
}

impl fmt::Debug for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Executor")
            .field("reg", &self.reg)
            .field("map_bits", &self.map_bits)
            .finish()
    }
}

impl Executor {
    pub fn new(reg: Registration, map_bits: u8) -> Self {
        Executor {
            reg,
            map_bits,
            tables: Mutex::new(Vec::new()),
            taint: Mutex::new(TaintState::default()),
        }
    }

    pub fn registration(&self) -> &Registration {
        &self.reg
    }

    pub fn map_bits(&self) -> u8 {
        self.map_bits
    }

    fn with_table<R>(&self, f: impl FnOnce(&mut PathTraceTable) -> R) -> R {
        let mut table = self
            .tables
            .lock()
            .expect("table pool poisoned")
            .pop()
            .unwrap_or_else(|| PathTraceTable::new(self.map_bits));
        let r = f(&mut table);
        table.clear();
        self.tables.lock().expect("table pool poisoned").push(table);
        r
    }

    fn execute(&self, input: &[u8], opts: &RunOptions, trace: &mut PathTraceTable, taint: Option<&mut TaintState>) -> (Verdict, Option<FOutput>, Vec<BranchKey>) {
        let mut cx = Ctx {
            input,
            reg: &self.reg,
            opts,
            trace,
            taint,
            stream: StreamState::default(),
            context: CallContext::ROOT,
            stack: Vec::new(),
            last: None,
            watched: None,
            path: Vec::new(),
        };
        let verdict = match self.reg.target.execute(&mut cx) {
            Ok(()) => Verdict::Ok,
            Err(c) => Verdict::Crash {
                at: cx.last,
                class: c.class,
                detail: c.detail,
            },
        };
        (verdict, cx.watched, cx.path)
    }

    /// Branch recording only.
    pub fn run_fast(&self, input: &[u8], opts: &RunOptions) -> RunResult {
        self.with_table(|table| {
            let (verdict, watched, path) = self.execute(input, opts, table, None);
            RunResult {
                trace: table.snapshot(),
                cond_records: Vec::new(),
                read_records: Vec::new(),
                verdict,
                watched,
                path,
            }
        })
    }

    /// `run_fast` over many inputs, results in input order.
    pub fn run_fast_batch(&self, inputs: &[Vec<u8>], opts: &RunOptions, mode: par::Mode) -> Vec<RunResult> {
        par::map(mode, inputs, |i| self.run_fast(i, opts))
    }

    /// Full taint tracking.
    pub fn run_taint(&self, input: &[u8], opts: &RunOptions) -> RunResult {
        let mut guard = self.taint.lock().expect("taint state poisoned");
        let state = &mut *guard;
        state.reset();
        self.with_table(|table| {
            let (verdict, watched, path) = self.execute(input, opts, table, Some(state));
            let reads = std::mem::take(&mut state.reads);
            let mut records = std::mem::take(&mut state.records);
            for r in &mut records {
                r.shapes = shapes_for(&r.offsets, &state.types);
                r.length_hint = length_requirement(r, &reads);
            }
            RunResult {
                trace: table.snapshot(),
                cond_records: records,
                read_records: reads,
                verdict,
                watched,
                path,
            }
        })
    }
}
