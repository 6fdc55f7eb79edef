//! Gradient descent over the input components a conditional depends on.
//!
//! The input is viewed as a vector `x` of integers, one per [`ValueShape`].
//! Partial derivatives of the constraint value `f(x)` are estimated by
//! finite differences, `x` moves against the gradient with an adaptive step,
//! and zero gradients or non-improving descents trigger a random restart of
//! the relevant components. Only bytes covered by the shapes are ever
//! changed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{satisfied, CmpOp, CondStmtRecord, ConstraintKind, FOutput};
use crate::harness::{Executor, RunOptions, Watch};
use crate::par;
use crate::shape_infer::{Endian, ValueShape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Finite-difference step, at least 1.
    pub delta: i128,
    /// Starting learning rate of every descent.
    pub learning_rate: f64,
    /// Step attempts per descent.
    pub max_iters: u32,
    /// Target executions per statement.
    pub max_execs: u64,
    /// Consecutive resamples allowed to land on inputs that miss the
    /// statement before giving up.
    pub resample_limit: u32,
    /// Consecutive non-improving steps after which a descent stops.
    pub stuck_after: u32,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            delta: 1,
            learning_rate: 1.0,
            max_iters: 256,
            max_execs: 4096,
            resample_limit: 16,
            stuck_after: 3,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.delta < 1 {
            return Err("delta must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err("learning rate must be positive".into());
        }
        if self.max_iters == 0 || self.max_execs == 0 || self.resample_limit == 0 || self.stuck_after == 0 {
            return Err("search budgets must be positive".into());
        }
        Ok(())
    }
}

/// Outcome of one probe of the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    Value(FOutput),
    /// The run did not reach the statement.
    Unreached,
    /// The caller wants the search to stop now.
    Halt,
}

/// `f` as a black box over whole inputs.
pub trait Objective {
    fn probe(&mut self, input: &[u8]) -> Probe;

    /// Probes several inputs; results are in input order.
    fn probe_batch(&mut self, inputs: &[Vec<u8>]) -> Vec<Probe> {
        inputs.iter().map(|i| self.probe(i)).collect()
    }
}

/// Adapts a closure into an [`Objective`].
pub struct FnObjective<F>(pub F);

impl<F: FnMut(&[u8]) -> Probe> Objective for FnObjective<F> {
    fn probe(&mut self, input: &[u8]) -> Probe {
        (self.0)(input)
    }
}

/// Runs a target in fast mode and reads `f` at one conditional.
pub struct TargetObjective<'e> {
    exec: &'e Executor,
    opts: RunOptions,
    mode: par::Mode,
}

impl<'e> TargetObjective<'e> {
    /// Objective for the comparison `op` at the statement's site and context.
    pub fn new(exec: &'e Executor, stmt: &CondStmtRecord, op: CmpOp, context_sensitive: bool, mode: par::Mode) -> Self {
        TargetObjective {
            exec,
            opts: RunOptions {
                context_sensitive,
                watch: Some(Watch {
                    site: stmt.site,
                    context: stmt.context,
                    op,
                }),
                log_path: false,
            },
            mode,
        }
    }

    /// Objective whose minimum takes the edge `stmt` did not take.
    pub fn for_sibling(exec: &'e Executor, stmt: &CondStmtRecord, context_sensitive: bool, mode: par::Mode) -> Self {
        Self::new(exec, stmt, stmt.sibling_op(), context_sensitive, mode)
    }

    pub fn options(&self) -> &RunOptions {
        &self.opts
    }
}

impl Objective for TargetObjective<'_> {
    fn probe(&mut self, input: &[u8]) -> Probe {
        self.exec
            .run_fast(input, &self.opts)
            .watched
            .map_or(Probe::Unreached, Probe::Value)
    }

    fn probe_batch(&mut self, inputs: &[Vec<u8>]) -> Vec<Probe> {
        self.exec
            .run_fast_batch(inputs, &self.opts, self.mode)
            .into_iter()
            .map(|r| r.watched.map_or(Probe::Unreached, Probe::Value))
            .collect()
    }
}

/// `f` of `stmt`'s own comparison on `input`, or `None` if the run does not
/// reach it.
pub fn evaluate_f(exec: &Executor, input: &[u8], stmt: &CondStmtRecord, context_sensitive: bool) -> Option<FOutput> {
    match TargetObjective::new(exec, stmt, stmt.op, context_sensitive, par::Mode::Sequential).probe(input) {
        Probe::Value(f) => Some(f),
        _ => None,
    }
}

/// What to solve: the components to move and the constraint to satisfy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Problem {
    pub shapes: Vec<ValueShape>,
    pub kind: ConstraintKind,
    pub endian: Endian,
}

impl Problem {
    /// Reaching the edge `stmt` did not take.
    pub fn for_sibling(stmt: &CondStmtRecord, endian: Endian) -> Self {
        Problem {
            shapes: stmt.shapes.clone(),
            kind: stmt.sibling_kind(),
            endian,
        }
    }
}

/// The input seen as one integer per component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchVector {
    pub components: Vec<(ValueShape, i128)>,
}

impl SearchVector {
    pub fn decode(shapes: &[ValueShape], input: &[u8], endian: Endian) -> Self {
        SearchVector {
            components: shapes.iter().map(|s| (*s, s.decode(input, endian))).collect(),
        }
    }

    /// `base` with every component written back.
    pub fn encode(&self, base: &[u8], endian: Endian) -> Vec<u8> {
        let mut out = base.to_vec();
        for (s, v) in &self.components {
            s.encode(*v, &mut out, endian);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    fn with(&self, i: usize, value: i128) -> Self {
        let mut out = self.clone();
        let s = out.components[i].0;
        out.components[i].1 = value.clamp(s.min_value(), s.max_value());
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub partials: Vec<f64>,
}

impl Gradient {
    pub fn is_zero(&self) -> bool {
        self.partials.iter().all(|&p| p == 0.0)
    }
}

/// Integer movement for one component: `rate * partial` rounded half away
/// from zero, at least one unit when the partial is nonzero.
pub fn step_size(rate: f64, partial: f64) -> i128 {
    if partial == 0.0 {
        return 0;
    }
    let s = (rate * partial).round();
    if s == 0.0 {
        partial.signum() as i128
    } else {
        s as i128
    }
}

/// Why a search stopped before finishing its current step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Interrupt {
    Solved { input: Vec<u8>, f: FOutput },
    Exhausted,
    Halted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Solved,
    Exhausted,
    Halted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchOutcome {
    pub status: Status,
    /// The satisfying input when solved.
    pub input: Option<Vec<u8>>,
    pub execs: u64,
    /// Smallest `f` seen at the statement.
    pub best_f: Option<FOutput>,
}

/// One constraint-solving session against a parent input.
pub struct Search<'a, O: Objective + ?Sized> {
    obj: &'a mut O,
    problem: &'a Problem,
    base: Vec<u8>,
    params: SearchParams,
    execs: u64,
    best_f: Option<FOutput>,
}

impl<'a, O: Objective + ?Sized> Search<'a, O> {
    pub fn new(obj: &'a mut O, problem: &'a Problem, parent: &[u8], params: SearchParams) -> Self {
        Search {
            obj,
            problem,
            base: parent.to_vec(),
            params,
            execs: 0,
            best_f: None,
        }
    }

    pub fn execs(&self) -> u64 {
        self.execs
    }

    pub fn start(&self) -> SearchVector {
        SearchVector::decode(&self.problem.shapes, &self.base, self.problem.endian)
    }

    /// Probes every candidate (within the remaining budget). The first
    /// satisfying candidate ends the search.
    pub fn evaluate_many(&mut self, xs: &[SearchVector]) -> Result<Vec<Option<FOutput>>, Interrupt> {
        let remaining = self.params.max_execs.saturating_sub(self.execs) as usize;
        if remaining == 0 {
            return Err(Interrupt::Exhausted);
        }
        let n = xs.len().min(remaining);
        let inputs: Vec<Vec<u8>> = xs[..n]
            .iter()
            .map(|x| x.encode(&self.base, self.problem.endian))
            .collect();
        let probes = self.obj.probe_batch(&inputs);
        self.execs += n as u64;
        let mut out = Vec::with_capacity(n);
        for (input, p) in inputs.into_iter().zip(probes) {
            match p {
                Probe::Halt => return Err(Interrupt::Halted),
                Probe::Unreached => out.push(None),
                Probe::Value(f) => {
                    if self.best_f.is_none_or(|b| f < b) {
                        self.best_f = Some(f);
                    }
                    if satisfied(self.problem.kind, f) {
                        return Err(Interrupt::Solved { input, f });
                    }
                    out.push(Some(f));
                }
            }
        }
        if n < xs.len() {
            return Err(Interrupt::Exhausted);
        }
        Ok(out)
    }

    pub fn evaluate(&mut self, x: &SearchVector) -> Result<Option<FOutput>, Interrupt> {
        Ok(self.evaluate_many(std::slice::from_ref(x))?[0])
    }

    /// Forward differences with step `delta`, retried backwards for
    /// components whose forward probe misses the statement. At most two
    /// probes per component.
    pub fn calculate_gradient(&mut self, x: &SearchVector, fx: FOutput) -> Result<Gradient, Interrupt> {
        let d = self.params.delta;
        let mut partials = vec![0.0; x.len()];
        let mut pending: Vec<usize> = (0..x.len()).collect();
        for sign in [1, -1] {
            let mut idx = Vec::new();
            let mut cand = Vec::new();
            for &i in &pending {
                let c = x.with(i, x.components[i].1 + sign * d);
                if c.components[i].1 != x.components[i].1 {
                    idx.push(i);
                    cand.push(c);
                }
            }
            let fs = self.evaluate_many(&cand)?;
            let mut missed = Vec::new();
            for ((i, c), f) in idx.into_iter().zip(&cand).zip(fs) {
                match f {
                    Some(f) => {
                        let dx = c.components[i].1 - x.components[i].1;
                        partials[i] = (f.0 - fx.0) as f64 / dx as f64;
                    }
                    None => missed.push(i),
                }
            }
            // components clamped in the forward direction are retried too
            missed.extend(pending.iter().copied().filter(|i| x.with(*i, x.components[*i].1 + sign * d) == *x));
            missed.sort_unstable();
            pending = missed;
        }
        Ok(Gradient { partials })
    }

    /// Moves against `grad` from `x`, doubling the rate after an improving
    /// step and halving it otherwise. Returns the best point seen.
    pub fn descend(&mut self, x: &SearchVector, fx: FOutput, grad: &Gradient) -> Result<(SearchVector, FOutput), Interrupt> {
        let mut best = x.clone();
        let mut fbest = fx;
        let mut rate = self.params.learning_rate;
        let mut fails = 0;
        for _ in 0..self.params.max_iters {
            let mut cand = best.clone();
            for (i, &p) in grad.partials.iter().enumerate() {
                cand = cand.with(i, best.components[i].1 - step_size(rate, p));
            }
            if cand == best {
                break;
            }
            match self.evaluate(&cand)? {
                Some(f) if f < fbest => {
                    best = cand;
                    fbest = f;
                    rate *= 2.0;
                    fails = 0;
                }
                _ => {
                    rate /= 2.0;
                    fails += 1;
                    if fails >= self.params.stuck_after {
                        break;
                    }
                }
            }
        }
        Ok((best, fbest))
    }

    /// A random point reaching the statement, drawing every component
    /// uniformly from its range.
    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(SearchVector, FOutput), Interrupt> {
        for _ in 0..self.params.resample_limit {
            let x = resample(&self.start(), rng);
            if let Some(f) = self.evaluate(&x)? {
                return Ok((x, f));
            }
        }
        Err(Interrupt::Exhausted)
    }

    fn solve<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(), Interrupt> {
        let mut x = self.start();
        let mut fx = match self.evaluate(&x)? {
            Some(f) => f,
            None => self.resample(rng).map(|(nx, f)| {
                x = nx;
                f
            })?,
        };
        loop {
            let grad = self.calculate_gradient(&x, fx)?;
            let next = if grad.is_zero() {
                None
            } else {
                Some(self.descend(&x, fx, &grad)?).filter(|(_, f)| *f < fx)
            };
            (x, fx) = match next {
                Some(p) => p,
                None => self.resample(rng)?,
            };
        }
    }

    pub fn run<R: Rng + ?Sized>(mut self, rng: &mut R) -> SearchOutcome {
        let (status, input) = match self.solve(rng) {
            Ok(()) => unreachable!("solve only returns through an interrupt"),
            Err(Interrupt::Solved { input, .. }) => (Status::Solved, Some(input)),
            Err(Interrupt::Exhausted) => (Status::Exhausted, None),
            Err(Interrupt::Halted) => (Status::Halted, None),
        };
        SearchOutcome {
            status,
            input,
            execs: self.execs,
            best_f: self.best_f,
        }
    }
}

/// `x` with every component redrawn uniformly from its range.
pub fn resample<R: Rng + ?Sized>(x: &SearchVector, rng: &mut R) -> SearchVector {
    SearchVector {
        components: x
            .components
            .iter()
            .map(|(s, _)| (*s, rng.gen_range(s.min_value()..=s.max_value())))
            .collect(),
    }
}

/// Searches for an input that satisfies `problem`, starting from `parent`.
pub fn fuzz_conditional<O, R>(obj: &mut O, problem: &Problem, parent: &[u8], params: SearchParams, rng: &mut R) -> SearchOutcome
where
    O: Objective + ?Sized,
    R: Rng + ?Sized,
{
    if problem.shapes.is_empty() {
        return SearchOutcome {
            status: Status::Exhausted,
            input: None,
            execs: 0,
            best_f: None,
        };
    }
    Search::new(obj, problem, parent, params).run(rng)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::harness::targets::{Catalog, MAGIC4, POLY_THRESHOLD, SIZED_READS_FOO_SITE};
    use crate::harness::DEFAULT_LAYOUT_SEED;
    use crate::shape_infer::Signedness;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn bytes_problem(n: usize, kind: ConstraintKind) -> Problem {
        Problem {
            shapes: (0..n).map(ValueShape::byte).collect(),
            kind,
            endian: Endian::Little,
        }
    }

    fn sized_reads_input(i: i32, j: i32) -> Vec<u8> {
        let mut v = vec![0u8; 1032];
        v[1024..1028].copy_from_slice(&i.to_le_bytes());
        v[1028..1032].copy_from_slice(&j.to_le_bytes());
        v
    }

    fn sized_reads() -> (Executor, CondStmtRecord) {
        let ex = Executor::new(
            Catalog::builtin()
                .register("sized_reads", DEFAULT_LAYOUT_SEED)
                .unwrap(),
            16,
        );
        let r = ex.run_taint(&sized_reads_input(3, 1), &RunOptions::default());
        let rec = r
            .cond_records
            .into_iter()
            .find(|r| r.site == SIZED_READS_FOO_SITE)
            .unwrap();
        (ex, rec)
    }

    #[test]
    fn f_at_three_one() {
        let (ex, rec) = sized_reads();
        assert_eq!(rec.f, FOutput(-7));
        assert_eq!(evaluate_f(&ex, &sized_reads_input(3, 1), &rec, true), Some(FOutput(-7)));
        assert_eq!(evaluate_f(&ex, &[0; 100], &rec, true), None);
    }

    #[test]
    fn gradient_at_three_one() {
        let (ex, rec) = sized_reads();
        let mut obj = TargetObjective::for_sibling(&ex, &rec, true, par::Mode::Sequential);
        let problem = Problem::for_sibling(&rec, Endian::Little);
        assert_eq!(problem.kind, ConstraintKind::LessEqualZero);
        let input = sized_reads_input(3, 1);
        let mut s = Search::new(&mut obj, &problem, &input, SearchParams::default());
        let x = s.start();
        let fx = s.evaluate(&x).unwrap().unwrap();
        assert_eq!(fx, FOutput(7));
        let g = s.calculate_gradient(&x, fx).unwrap();
        assert_eq!(g.partials, vec![7.0, -2.0]);
        assert!(s.execs() <= 2 * 2 + 1);
    }

    #[test]
    fn false_direction_from_three_one() {
        let (ex, rec) = sized_reads();
        let mut obj = TargetObjective::for_sibling(&ex, &rec, true, par::Mode::Sequential);
        let problem = Problem::for_sibling(&rec, Endian::Little);
        let out = fuzz_conditional(&mut obj, &problem, &sized_reads_input(3, 1), SearchParams::default(), &mut rng());
        assert_eq!(out.status, Status::Solved);
        let input = out.input.unwrap();
        let i = i64::from(i32::from_le_bytes(input[1024..1028].try_into().unwrap()));
        let j = i64::from(i32::from_le_bytes(input[1028..1032].try_into().unwrap()));
        assert!(i * i - 2 * j <= 0, "({i}, {j})");
        assert_eq!(&input[..1024], &sized_reads_input(3, 1)[..1024]);
    }

    #[test]
    fn linear_converges() {
        let mut obj = FnObjective(|i: &[u8]| Probe::Value(FOutput((i128::from(i[0]) - 42).abs())));
        let problem = bytes_problem(1, ConstraintKind::EqualZero);
        let out = fuzz_conditional(&mut obj, &problem, &[0], SearchParams::default(), &mut rng());
        assert_eq!(out.status, Status::Solved);
        assert_eq!(out.input, Some(vec![42]));
    }

    #[test]
    fn satisfied_start_is_returned_unchanged() {
        let mut obj = FnObjective(|i: &[u8]| Probe::Value(FOutput(i128::from(i[0]) - 100)));
        let problem = bytes_problem(2, ConstraintKind::LessThanZero);
        let out = fuzz_conditional(&mut obj, &problem, &[5, 9], SearchParams::default(), &mut rng());
        assert_eq!(out.input, Some(vec![5, 9]));
        assert_eq!(out.execs, 1);
    }

    #[test]
    fn plateau_found_by_resampling() {
        let mut obj = FnObjective(|i: &[u8]| Probe::Value(FOutput(if i[0] == 7 { -1 } else { 0 })));
        let problem = bytes_problem(1, ConstraintKind::LessThanZero);
        for seed in 0..20 {
            let out = fuzz_conditional(&mut obj, &problem, &[200], SearchParams::default(), &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(out.input, Some(vec![7]), "seed {seed}");
        }
    }

    #[test]
    fn unsatisfiable_exhausts_budget() {
        let mut obj = FnObjective(|i: &[u8]| {
            let x = i128::from(i[0] as i8);
            Probe::Value(FOutput(x * x + 1))
        });
        let problem = Problem {
            shapes: vec![ValueShape::new(0, 1, Signedness::Signed)],
            kind: ConstraintKind::LessThanZero,
            endian: Endian::Little,
        };
        let params = SearchParams {
            max_execs: 500,
            ..SearchParams::default()
        };
        let out = fuzz_conditional(&mut obj, &problem, &[3], params, &mut rng());
        assert_eq!(out.status, Status::Exhausted);
        assert_eq!(out.execs, 500);
        assert_eq!(out.best_f, Some(FOutput(1)));
    }

    #[test]
    fn halt_is_respected() {
        let mut n = 0;
        let mut obj = FnObjective(|_: &[u8]| {
            n += 1;
            if n > 3 {
                Probe::Halt
            } else {
                Probe::Value(FOutput(5))
            }
        });
        let out = fuzz_conditional(&mut obj, &bytes_problem(1, ConstraintKind::EqualZero), &[0], SearchParams::default(), &mut rng());
        assert_eq!(out.status, Status::Halted);
    }

    #[test]
    fn unreached_both_ways_gives_zero_partial() {
        // byte 1 must stay 5 for the statement to be reached
        let mut obj = FnObjective(|i: &[u8]| {
            if i[1] != 5 {
                Probe::Unreached
            } else {
                Probe::Value(FOutput(i128::from(i[0])))
            }
        });
        let problem = bytes_problem(2, ConstraintKind::EqualZero);
        let mut s = Search::new(&mut obj, &problem, &[10, 5], SearchParams::default());
        let x = s.start();
        let g = s.calculate_gradient(&x, FOutput(10)).unwrap();
        assert_eq!(g.partials, vec![1.0, 0.0]);
        assert_eq!(s.execs(), 3);
    }

    #[test]
    fn magic_solved_quickly() {
        let ex = Executor::new(Catalog::builtin().register("magic4", DEFAULT_LAYOUT_SEED).unwrap(), 16);
        let r = ex.run_taint(&[0; 4], &RunOptions::default());
        let rec = &r.cond_records[0];
        assert_eq!(rec.shapes, vec![ValueShape::new(0, 4, Signedness::Unsigned)]);
        let mut obj = TargetObjective::for_sibling(&ex, rec, true, par::Mode::Sequential);
        let out = fuzz_conditional(&mut obj, &Problem::for_sibling(rec, Endian::Little), &[0; 4], SearchParams::default(), &mut rng());
        assert_eq!(out.input, Some(MAGIC4.to_le_bytes().to_vec()));
        assert!(out.execs < 1000, "{} execs", out.execs);
    }

    #[test]
    fn monotone_polynomial_solved() {
        let ex = Executor::new(Catalog::builtin().register("poly_threshold", DEFAULT_LAYOUT_SEED).unwrap(), 16);
        let r = ex.run_taint(&[0; 2], &RunOptions::default());
        let rec = &r.cond_records[0];
        let mut obj = TargetObjective::for_sibling(&ex, rec, true, par::Mode::Sequential);
        let out = fuzz_conditional(&mut obj, &Problem::for_sibling(rec, Endian::Little), &[0; 2], SearchParams::default(), &mut rng());
        assert_eq!(out.status, Status::Solved);
        let x = i64::from(u16::from_le_bytes(out.input.unwrap().try_into().unwrap()));
        assert!(crate::harness::targets::poly(x) >= POLY_THRESHOLD);
    }

    #[test]
    fn resample_touches_every_component() {
        let x = SearchVector::decode(&(0..8).map(ValueShape::byte).collect::<Vec<_>>(), &[0; 8], Endian::Little);
        let mut changed = [false; 8];
        let mut r = rng();
        for _ in 0..1000 {
            for (i, (_, v)) in resample(&x, &mut r).components.iter().enumerate() {
                changed[i] |= *v != 0;
            }
        }
        assert!(changed.iter().all(|&c| c));
    }

    #[test]
    fn step_rounding() {
        assert_eq!(step_size(1.0, 0.0), 0);
        assert_eq!(step_size(0.25, 1.0), 1);
        assert_eq!(step_size(0.25, -1.0), -1);
        assert_eq!(step_size(0.5, 5.0), 3);
        assert_eq!(step_size(0.5, -5.0), -3);
    }

    proptest! {
        #[test]
        fn quadratic_partial_signs(a in prop::collection::vec((1i128..5, 0u8..=254, 0u8..=254), 1..6)) {
            let coeffs: Vec<(i128, i128)> = a.iter().map(|&(k, c, _)| (k, i128::from(c))).collect();
            let start: Vec<u8> = a.iter().map(|&(_, _, x)| x).collect();
            let cf = coeffs.clone();
            let mut obj = FnObjective(move |i: &[u8]| {
                Probe::Value(FOutput(cf.iter().zip(i).map(|(&(k, c), &x)| k * (i128::from(x) - c).pow(2)).sum()))
            });
            let problem = bytes_problem(start.len(), ConstraintKind::EqualZero);
            let mut s = Search::new(&mut obj, &problem, &start, SearchParams::default());
            let x = s.start();
            let fx = s.evaluate(&x);
            if let Ok(Some(fx)) = fx {
                let g = match s.calculate_gradient(&x, fx) {
                    Ok(g) => g,
                    // a probe landed on the minimum
                    Err(Interrupt::Solved { .. }) => return Ok(()),
                    Err(e) => panic!("{e:?}"),
                };
                prop_assert!(s.execs() <= 2 * start.len() as u64 + 1);
                for (i, &(k, c)) in coeffs.iter().enumerate() {
                    let analytic = 2 * k * (i128::from(start[i]) - c);
                    if analytic.abs() >= 2 {
                        prop_assert_eq!(g.partials[i].signum(), (analytic as f64).signum());
                    }
                }
            }
        }

        #[test]
        fn outputs_differ_only_in_shaped_bytes(parent in prop::collection::vec(any::<u8>(), 12), picks in prop::collection::btree_set(0usize..12, 1..5), seed: u64) {
            let shapes: Vec<ValueShape> = picks.iter().map(|&o| ValueShape::byte(o)).collect();
            let problem = Problem { shapes, kind: ConstraintKind::EqualZero, endian: Endian::Little };
            let seen = std::cell::RefCell::new(Vec::new());
            let mut obj = FnObjective(|i: &[u8]| {
                seen.borrow_mut().push(i.to_vec());
                Probe::Value(FOutput(i128::from(i[*picks.iter().next().unwrap()]) + 1))
            });
            let params = SearchParams { max_execs: 200, ..SearchParams::default() };
            fuzz_conditional(&mut obj, &problem, &parent, params, &mut ChaCha8Rng::seed_from_u64(seed));
            for input in seen.borrow().iter() {
                for (o, (a, b)) in parent.iter().zip(input).enumerate() {
                    if !picks.contains(&o) {
                        prop_assert_eq!(a, b);
                    }
                }
            }
        }

        #[test]
        fn vector_roundtrip(bytes in prop::collection::vec(any::<u8>(), 16)) {
            let shapes = vec![
                ValueShape::new(0, 4, Signedness::Signed),
                ValueShape::new(4, 8, Signedness::Unsigned),
                ValueShape::new(12, 2, Signedness::Signed),
                ValueShape::byte(15),
            ];
            let x = SearchVector::decode(&shapes, &bytes, Endian::Big);
            prop_assert_eq!(x.encode(&bytes, Endian::Big), bytes.clone());
            let y = resample(&x, &mut ChaCha8Rng::seed_from_u64(1));
            let enc = y.encode(&bytes, Endian::Big);
            prop_assert_eq!(SearchVector::decode(&shapes, &enc, Endian::Big), y);
        }
    }
}
