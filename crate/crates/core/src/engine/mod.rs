//! The fuzzing loop.
//!
//! Every seed gets one taint run, which fills the ledger with the branches
//! its conditionals did not take. The loop then repeatedly picks a branch,
//! attacks it from the input that reached its sibling, and admits every
//! candidate that reaches a new coverage state. Each admitted input gets
//! exactly one taint run, whose conditionals extend the ledger in turn.

pub mod corpus;
pub mod ledger;
pub mod mutate;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use corpus::{dedup_crash, Corpus, CrashBin, CrashKey, InputMeta, StoredInput};
pub use ledger::{BranchLedger, LedgerEntry};

use crate::constraints::FOutput;
use crate::coverage::{BranchKey, CallContext, CoverageTable};
use crate::harness::{Executor, RunOptions, RunResult, Verdict, Watch, EMPTY};
use crate::input::{InputBuffer, InputId, Origin};
use crate::length_explore::LengthPolicy;
use crate::par;
use crate::search::{fuzz_conditional, Objective, Probe, Problem, SearchParams, Status};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("no seed inputs")]
    NoSeeds,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("output directory {0} already holds a corpus")]
    OutputNotEmpty(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Config {
    /// Total fast executions; unlimited if `None`.
    pub max_execs: Option<u64>,
    /// Wall-clock budget; unlimited if `None`.
    pub max_time: Option<Duration>,
    pub search: SearchParams,
    pub context_sensitive: bool,
    pub rng_seed: u64,
    pub length: LengthPolicy,
    pub parallelism: par::Mode,
    pub stats_interval: Duration,
    /// Give exhausted branches further rounds once nothing fresh is left.
    pub retry_exhausted: bool,
    /// Mirror the corpus to disk here.
    pub output_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            max_execs: None,
            max_time: Some(Duration::from_secs(60)),
            search: SearchParams::default(),
            context_sensitive: true,
            rng_seed: 0,
            length: LengthPolicy::default(),
            parallelism: par::Mode::default(),
            stats_interval: Duration::from_secs(1),
            retry_exhausted: true,
            output_dir: None,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidConfig(m.to_string()));
        if self.max_execs == Some(0) {
            return bad("exec budget must be positive");
        }
        if self.max_time == Some(Duration::ZERO) {
            return bad("time budget must be positive");
        }
        if self.length.max_len == 0 {
            return bad("max input length must be positive");
        }
        if self.stats_interval.is_zero() {
            return bad("stats interval must be positive");
        }
        self.search.validate().map_err(EngineError::InvalidConfig)
    }
}

/// Periodic progress snapshot.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stats {
    pub elapsed_ms: u64,
    pub fast_execs: u64,
    pub taint_runs: u64,
    pub seeds: usize,
    pub admitted: usize,
    pub ledger: usize,
    pub explored: u64,
    pub covered_buckets: usize,
    pub set_bits: usize,
    pub crash_bins: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LedgerDrained,
    ExecBudget,
    TimeBudget,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Gradient,
    Length,
    Havoc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Explored,
    Exhausted,
    /// The global budget ran out mid-round.
    Interrupted,
}

/// One round of work on one ledger entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StmtTelemetry {
    pub branch: BranchKey,
    pub site: u32,
    pub context: CallContext,
    pub round: u32,
    pub strategy: Strategy,
    pub outcome: Outcome,
    pub execs: u64,
    pub finished_at_exec: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CoveragePoint {
    pub fast_execs: u64,
    pub elapsed_ms: u64,
    pub covered_buckets: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FuzzReport {
    pub target: String,
    pub stop: StopReason,
    pub seeds: usize,
    pub admitted: usize,
    pub fast_execs: u64,
    pub taint_runs: u64,
    pub fast_secs: f64,
    pub taint_secs: f64,
    pub elapsed_ms: u64,
    pub explored: u64,
    pub ledger_remaining: usize,
    pub covered_buckets: usize,
    pub set_bits: usize,
    pub coverage: Vec<CoveragePoint>,
    pub crash_bins: Vec<CrashBin>,
    pub statements: Vec<StmtTelemetry>,
}

impl FuzzReport {
    /// Fast executions per second of time spent in fast runs.
    pub fn fast_throughput(&self) -> f64 {
        self.fast_execs as f64 / self.fast_secs.max(f64::MIN_POSITIVE)
    }

    /// Taint runs per second of time spent in taint runs.
    pub fn taint_throughput(&self) -> f64 {
        self.taint_runs as f64 / self.taint_secs.max(f64::MIN_POSITIVE)
    }
}

/// Callback invoked with each periodic stats snapshot.
type Observer<'e> = Box<dyn FnMut(&Stats) + 'e>;

/// Fuzzing session over one executor.
pub struct Engine<'e> {
    exec: &'e Executor,
    config: Config,
    coverage: CoverageTable,
    corpus: Corpus,
    ledger: BranchLedger,
    rng: ChaCha8Rng,
    observer: Option<Observer<'e>>,
    start: Instant,
    last_emit: Instant,
    seeds: usize,
    fast_execs: u64,
    taint_runs: u64,
    fast_time: Duration,
    taint_time: Duration,
    explored: u64,
    history: Vec<CoveragePoint>,
    telemetry: Vec<StmtTelemetry>,
    error: Option<EngineError>,
}

impl<'e> Engine<'e> {
    pub fn new(exec: &'e Executor, config: Config) -> Result<Self, EngineError> {
        config.validate()?;
        let corpus = match &config.output_dir {
            Some(d) => Corpus::on_disk(d)?,
            None => Corpus::new(),
        };
        let now = Instant::now();
        Ok(Engine {
            exec,
            coverage: CoverageTable::new(exec.map_bits()),
            corpus,
            ledger: BranchLedger::new(),
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            observer: None,
            start: now,
            last_emit: now,
            seeds: 0,
            fast_execs: 0,
            taint_runs: 0,
            fast_time: Duration::ZERO,
            taint_time: Duration::ZERO,
            explored: 0,
            history: Vec::new(),
            telemetry: Vec::new(),
            error: None,
            config,
        })
    }

    /// Called with a [`Stats`] snapshot every `stats_interval` and at the end.
    pub fn with_observer(mut self, f: impl FnMut(&Stats) + 'e) -> Self {
        self.observer = Some(Box::new(f));
        self
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn into_corpus(self) -> Corpus {
        self.corpus
    }

    pub fn ledger(&self) -> &BranchLedger {
        &self.ledger
    }

    pub fn coverage(&self) -> &CoverageTable {
        &self.coverage
    }

    fn run_options(&self, watch: Option<Watch>) -> RunOptions {
        RunOptions {
            context_sensitive: self.config.context_sensitive,
            watch,
            log_path: false,
        }
    }

    pub fn stats(&self) -> Stats {
        Stats {
            elapsed_ms: self.start.elapsed().as_millis() as u64,
            fast_execs: self.fast_execs,
            taint_runs: self.taint_runs,
            seeds: self.seeds,
            admitted: self.corpus.len() - self.seeds,
            ledger: self.ledger.len(),
            explored: self.explored,
            covered_buckets: self.coverage.covered_buckets(),
            set_bits: self.coverage.set_bits(),
            crash_bins: self.corpus.crashes().len(),
        }
    }

    fn emit(&mut self) {
        let s = self.stats();
        if let Some(obs) = self.observer.as_mut() {
            obs(&s);
        }
        self.last_emit = Instant::now();
    }

    fn maybe_emit(&mut self) {
        if self.last_emit.elapsed() >= self.config.stats_interval {
            self.emit();
        }
    }

    fn budget_stop(&self) -> Option<StopReason> {
        if self.config.max_execs.is_some_and(|m| self.fast_execs >= m) {
            return Some(StopReason::ExecBudget);
        }
        if self.config.max_time.is_some_and(|t| self.start.elapsed() >= t) {
            return Some(StopReason::TimeBudget);
        }
        None
    }

    fn merge(&mut self, result: &RunResult) -> bool {
        if !self.coverage.has_new_state(&result.trace).is_new {
            return false;
        }
        let before = self.coverage.covered_buckets();
        self.coverage.merge(&result.trace);
        let after = self.coverage.covered_buckets();
        if after > before {
            self.history.push(CoveragePoint {
                fast_execs: self.fast_execs,
                elapsed_ms: self.start.elapsed().as_millis() as u64,
                covered_buckets: after,
            });
        }
        true
    }

    fn crash(&mut self, result: &RunResult, bytes: &[u8], parent: Option<InputId>) -> Result<(), EngineError> {
        if let (Some(key), Verdict::Crash { detail, .. }) = (dedup_crash(result), &result.verdict) {
            self.corpus
                .record_crash(key, detail, bytes, parent, self.fast_execs)?;
        }
        Ok(())
    }

    /// Queues the untaken side of every conditional in a taint run.
    fn enqueue(&mut self, id: InputId, result: RunResult) {
        for rec in result.cond_records {
            let untainted = rec.lhs_label == EMPTY && rec.rhs_label == EMPTY;
            if untainted || self.coverage.is_covered(&rec.sibling) {
                continue;
            }
            self.ledger.insert(LedgerEntry {
                key: rec.sibling,
                input: id,
                record: rec,
                discovered_at: self.fast_execs,
                rounds: 0,
                execs: 0,
            });
        }
    }

    fn taint(&mut self, bytes: &[u8]) -> RunResult {
        let t = Instant::now();
        let r = self.exec.run_taint(bytes, &self.run_options(None));
        self.taint_time += t.elapsed();
        self.taint_runs += 1;
        r
    }

    /// Stores a seed and queues its branches. Seeds are kept even if they
    /// add no coverage.
    pub fn add_seed(&mut self, bytes: Vec<u8>) -> Result<(), EngineError> {
        let r = self.taint(&bytes);
        self.merge(&r);
        if r.verdict.is_crash() {
            self.crash(&r, &bytes, None)?;
        }
        let id = self
            .corpus
            .add_input(bytes, None, Origin::Seed, self.fast_execs)?;
        self.seeds += 1;
        self.enqueue(id, r);
        Ok(())
    }

    /// Coverage bookkeeping for one fast run of a candidate.
    fn process(&mut self, bytes: &[u8], result: &RunResult, parent: InputId, origin: &Origin) -> Result<(), EngineError> {
        let novel = self.merge(result);
        if result.verdict.is_crash() {
            return self.crash(result, bytes, Some(parent));
        }
        if novel {
            let id = self
                .corpus
                .add_input(bytes.to_vec(), Some(parent), origin.clone(), self.fast_execs)?;
            let r = self.taint(bytes);
            debug_assert_eq!(r.trace, result.trace, "fast and taint runs diverged");
            self.enqueue(id, r);
        }
        Ok(())
    }

    /// Fast-runs `inputs` and processes them in order; returns the watched
    /// `f` of each.
    fn batch(&mut self, inputs: &[Vec<u8>], opts: &RunOptions, parent: InputId, origin: &Origin) -> Result<Vec<Option<FOutput>>, EngineError> {
        let t = Instant::now();
        let results = self
            .exec
            .run_fast_batch(inputs, opts, self.config.parallelism);
        self.fast_time += t.elapsed();
        let mut out = Vec::with_capacity(results.len());
        for (bytes, r) in inputs.iter().zip(&results) {
            self.fast_execs += 1;
            self.process(bytes, r, parent, origin)?;
            out.push(r.watched);
        }
        self.maybe_emit();
        Ok(out)
    }

    fn attack(&mut self, entry: &LedgerEntry) -> Result<Strategy, EngineError> {
        let rec = &entry.record;
        let parent = self
            .corpus
            .get(entry.input)
            .expect("ledger inputs are stored")
            .bytes
            .clone();
        let watch = Watch {
            site: rec.site,
            context: rec.context,
            op: rec.sibling_op(),
        };
        let opts = self.run_options(Some(watch));

        if let Some(len) = rec.length_hint {
            let buf = InputBuffer::derived(parent, Some(entry.input), Origin::Seed);
            if let Some(grown) = self.config.length.grow(&buf, len) {
                let origin = grown.origin.clone();
                self.batch(&[grown.bytes], &opts, entry.input, &origin)?;
            }
            return Ok(Strategy::Length);
        }

        if rec.shapes.is_empty() {
            let origin = Origin::Havoc;
            let mut left = self.config.search.max_execs;
            while left > 0 && !self.coverage.is_covered(&entry.key) && self.budget_stop().is_none() {
                let n = left.min(16);
                let inputs: Vec<Vec<u8>> = (0..n)
                    .map(|_| mutate::havoc(&parent, &mut self.rng))
                    .collect();
                self.batch(&inputs, &opts, entry.input, &origin)?;
                left -= n;
            }
            return Ok(Strategy::Havoc);
        }

        let problem = Problem::for_sibling(rec, self.exec.registration().layout().endian);
        let mut round_rng = ChaCha8Rng::seed_from_u64(self.rng.gen());
        let params = self.config.search;
        let mut obj = EngineObjective {
            engine: self,
            opts,
            parent: entry.input,
            origin: Origin::Search { site: rec.site },
            target: entry.key,
        };
        let out = fuzz_conditional(&mut obj, &problem, &parent, params, &mut round_rng);
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        debug_assert!(out.status != Status::Solved || self.coverage.is_covered(&entry.key));
        Ok(Strategy::Gradient)
    }

    /// Runs the loop until the ledger drains or a budget runs out.
    pub fn run(&mut self) -> Result<FuzzReport, EngineError> {
        if self.seeds == 0 {
            return Err(EngineError::NoSeeds);
        }
        let stop = loop {
            self.maybe_emit();
            if let Some(r) = self.budget_stop() {
                break r;
            }
            let coverage = &self.coverage;
            let Some(key) = self.ledger.select(|k| coverage.is_covered(k)) else {
                break StopReason::LedgerDrained;
            };
            let entry = self.ledger.get(&key).expect("selected").clone();
            if entry.rounds > 0 && !self.config.retry_exhausted {
                self.ledger.remove(&key);
                continue;
            }
            let before = self.fast_execs;
            let strategy = self.attack(&entry)?;
            let execs = self.fast_execs - before;
            let outcome = if self.coverage.is_covered(&key) {
                self.ledger.remove(&key);
                self.explored += 1;
                Outcome::Explored
            } else if self.budget_stop().is_some() {
                Outcome::Interrupted
            } else {
                self.ledger.requeue(key, execs);
                Outcome::Exhausted
            };
            self.telemetry.push(StmtTelemetry {
                branch: key,
                site: entry.record.site,
                context: entry.record.context,
                round: entry.rounds,
                strategy,
                outcome,
                execs,
                finished_at_exec: self.fast_execs,
            });
        };
        self.emit();
        let s = self.stats();
        Ok(FuzzReport {
            target: self.exec.registration().name().to_string(),
            stop,
            seeds: s.seeds,
            admitted: s.admitted,
            fast_execs: s.fast_execs,
            taint_runs: s.taint_runs,
            fast_secs: self.fast_time.as_secs_f64(),
            taint_secs: self.taint_time.as_secs_f64(),
            elapsed_ms: s.elapsed_ms,
            explored: s.explored,
            ledger_remaining: s.ledger,
            covered_buckets: s.covered_buckets,
            set_bits: s.set_bits,
            coverage: self.history.clone(),
            crash_bins: self.corpus.crashes().to_vec(),
            statements: self.telemetry.clone(),
        })
    }
}

/// The search objective as seen through the engine: every probe is also a
/// fuzzing execution whose coverage and crashes are kept.
struct EngineObjective<'a, 'e> {
    engine: &'a mut Engine<'e>,
    opts: RunOptions,
    parent: InputId,
    origin: Origin,
    target: BranchKey,
}

impl EngineObjective<'_, '_> {
    fn done(&self) -> bool {
        self.engine.error.is_some() || self.engine.budget_stop().is_some() || self.engine.coverage.is_covered(&self.target)
    }
}

impl Objective for EngineObjective<'_, '_> {
    fn probe(&mut self, input: &[u8]) -> Probe {
        self.probe_batch(&[input.to_vec()])[0]
    }

    fn probe_batch(&mut self, inputs: &[Vec<u8>]) -> Vec<Probe> {
        if self.done() {
            return vec![Probe::Halt; inputs.len()];
        }
        match self.engine.batch(inputs, &self.opts, self.parent, &self.origin) {
            Ok(fs) => {
                let halt = self.done();
                fs.into_iter()
                    .map(|f| match f {
                        _ if halt => Probe::Halt,
                        Some(f) => Probe::Value(f),
                        None => Probe::Unreached,
                    })
                    .collect()
            }
            Err(e) => {
                self.engine.error = Some(e);
                vec![Probe::Halt; inputs.len()]
            }
        }
    }
}

/// Seeds the engine with `seeds` and runs it to completion.
pub fn fuzz(exec: &Executor, seeds: &[Vec<u8>], config: Config) -> Result<(FuzzReport, Corpus), EngineError> {
    let mut engine = Engine::new(exec, config)?;
    for s in seeds {
        engine.add_seed(s.clone())?;
    }
    let report = engine.run()?;
    Ok((report, engine.into_corpus()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::targets::Catalog;
    use crate::harness::{CrashClass, DEFAULT_LAYOUT_SEED};

    fn exec(name: &str) -> Executor {
        Executor::new(Catalog::builtin().register(name, DEFAULT_LAYOUT_SEED).unwrap(), 16)
    }

    fn cfg(max_execs: u64) -> Config {
        Config {
            max_execs: Some(max_execs),
            max_time: None,
            ..Config::default()
        }
    }

    #[test]
    fn magic_found_and_ledger_drains() {
        let ex = exec("magic4");
        let (report, corpus) = fuzz(&ex, &[vec![0; 4]], cfg(100_000)).unwrap();
        assert_eq!(report.stop, StopReason::LedgerDrained);
        assert_eq!(corpus.crashes().len(), 1);
        assert_eq!(corpus.crashes()[0].bytes, 0xDEAD_BEEFu32.to_le_bytes());
        assert_eq!(report.ledger_remaining, 0);
    }

    #[test]
    fn full_coverage_seed_exits_immediately() {
        let ex = exec("poly_threshold");
        // an Ok seed covers only the false side; give an empty exec budget a
        // chance to prove the loop does not spin
        let mut e = Engine::new(&ex, cfg(10)).unwrap();
        e.add_seed(vec![0, 0]).unwrap();
        e.add_seed(vec![0xFF, 0xFF]).unwrap();
        let r = e.run().unwrap();
        assert_eq!(r.stop, StopReason::LedgerDrained);
        assert_eq!(r.fast_execs, 0);
    }

    #[test]
    fn no_seeds_is_an_error() {
        let ex = exec("magic4");
        assert!(matches!(fuzz(&ex, &[], cfg(10)), Err(EngineError::NoSeeds)));
    }

    #[test]
    fn taint_runs_match_admissions() {
        let ex = exec("lava");
        let (r, corpus) = fuzz(&ex, &[vec![0; 32]], cfg(50_000)).unwrap();
        assert_eq!(r.taint_runs as usize, corpus.len());
        assert_eq!(r.taint_runs as usize, r.admitted + r.seeds);
        assert!(r.fast_execs <= 50_000 + 64);
    }

    #[test]
    fn lava_bins_match_bug_ids() {
        let ex = exec("lava");
        let (_, corpus) = fuzz(&ex, &[vec![0; 32]], cfg(100_000)).unwrap();
        let mut ids: Vec<u32> = corpus
            .crashes()
            .iter()
            .filter_map(|c| match c.key.class {
                CrashClass::Abort { bug } => bug,
                _ => None,
            })
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), corpus.crashes().len());
        assert_eq!(ids.len(), 8);
    }

    #[test]
    fn coverage_is_monotone() {
        let ex = exec("nested_logic");
        let (r, _) = fuzz(&ex, &[vec![0x40; 8]], cfg(20_000)).unwrap();
        assert!(r.coverage.windows(2).all(|w| w[0].covered_buckets <= w[1].covered_buckets && w[0].fast_execs <= w[1].fast_execs));
    }

    #[test]
    fn invalid_config_rejected() {
        let ex = exec("magic4");
        let c = Config {
            max_execs: Some(0),
            ..Config::default()
        };
        assert!(matches!(Engine::new(&ex, c), Err(EngineError::InvalidConfig(_))));
    }
}
