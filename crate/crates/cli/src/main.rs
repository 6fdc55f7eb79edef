mod stats;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use gradfuzz_core::constraints::CondStmtRecord;
use gradfuzz_core::coverage::DEFAULT_MAP_BITS;
use gradfuzz_core::engine::{Config, Engine};
use gradfuzz_core::harness::targets::Catalog;
use gradfuzz_core::harness::{Executor, Registration, RunOptions, RunResult, Target, Verdict};
use gradfuzz_core::length_explore::{LengthPolicy, DEFAULT_MAX_LEN};
use gradfuzz_core::par;
use gradfuzz_core::search::SearchParams;
use gradfuzz_core::throughput;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::stats::StatsWriter;

#[derive(Parser)]
#[command(name = "gradfuzz", version, about = "Taint-guided gradient-descent fuzzer for built-in targets")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fuzz a target and write its corpus and crashes.
    Fuzz(FuzzArgs),
    /// Run one input through a target in both modes.
    Repro(ReproArgs),
    /// Measure fast and taint executions per second.
    Bench(BenchArgs),
    /// Print the built-in targets.
    ListTargets,
}

fn target_parser() -> PossibleValuesParser {
    PossibleValuesParser::new(Catalog::builtin().names().collect::<Vec<_>>())
}

#[derive(Args, Clone, Debug)]
struct TargetArgs {
    /// Built-in target name.
    #[arg(long, env = "GRADFUZZ_TARGET", value_parser = target_parser())]
    target: String,

    /// Random seed for call-site ids and the search.
    #[arg(long, env = "GRADFUZZ_SEED", default_value_t = 0)]
    seed: u64,

    /// Coverage table size exponent.
    #[arg(long, env = "GRADFUZZ_MAP_BITS", default_value_t = DEFAULT_MAP_BITS)]
    map_bits: u8,

    /// Distinguish branches by calling context.
    #[arg(long, env = "GRADFUZZ_CONTEXT_SENSITIVE", default_value_t = true, action = clap::ArgAction::Set)]
    context_sensitive: bool,
}

#[derive(Args, Debug)]
struct FuzzArgs {
    #[command(flatten)]
    target: TargetArgs,

    /// Directory of seed files; the target's own seeds if omitted.
    #[arg(long, env = "GRADFUZZ_SEEDS")]
    seeds: Option<PathBuf>,

    /// Output directory for queue/, crashes/ and report.json.
    #[arg(long, env = "GRADFUZZ_OUT")]
    out: PathBuf,

    /// Wall-clock budget in seconds.
    #[arg(long, env = "GRADFUZZ_TIME", default_value_t = 60)]
    time: u64,

    /// Fast-execution budget.
    #[arg(long, env = "GRADFUZZ_EXECS")]
    execs: Option<u64>,

    /// Finite-difference step.
    #[arg(long, env = "GRADFUZZ_DELTA", default_value_t = 1)]
    delta: i64,

    /// Starting learning rate of each descent.
    #[arg(long, env = "GRADFUZZ_LEARNING_RATE", default_value_t = 1.0)]
    learning_rate: f64,

    /// Step attempts per descent.
    #[arg(long, env = "GRADFUZZ_MAX_ITERS", default_value_t = 256)]
    max_iters: u32,

    /// Executions per branch per round.
    #[arg(long, env = "GRADFUZZ_BRANCH_EXECS", default_value_t = 4096)]
    branch_execs: u64,

    /// Consecutive unreachable resamples before a round gives up.
    #[arg(long, env = "GRADFUZZ_RESAMPLE_LIMIT", default_value_t = 16)]
    resample_limit: u32,

    /// Byte used to pad inputs grown for short reads.
    #[arg(long, env = "GRADFUZZ_FILLER", default_value_t = 0)]
    filler: u8,

    /// Upper bound on input length.
    #[arg(long, env = "GRADFUZZ_MAX_LEN", default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,

    /// Batch evaluation mode: parallel or sequential.
    #[arg(long, env = "GRADFUZZ_PARALLELISM", default_value = "parallel")]
    parallelism: par::Mode,

    /// Write stats lines here instead of stdout.
    #[arg(long, env = "GRADFUZZ_STATS_FILE")]
    stats_file: Option<PathBuf>,

    /// Milliseconds between stats lines.
    #[arg(long, env = "GRADFUZZ_STATS_INTERVAL_MS", default_value_t = 1000)]
    stats_interval_ms: u64,

    /// Drop branches after their first unsuccessful round.
    #[arg(long, env = "GRADFUZZ_NO_RETRY")]
    no_retry: bool,
}

#[derive(Args, Debug)]
struct ReproArgs {
    #[command(flatten)]
    target: TargetArgs,

    /// Input file.
    input: PathBuf,

    /// Print a JSON record instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Targets to measure (comma separated); all if omitted.
    #[arg(long, value_delimiter = ',', value_parser = target_parser())]
    targets: Vec<String>,

    /// Executions per mode per target.
    #[arg(long, default_value_t = 10_000)]
    runs: u64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long)]
    json: bool,
}

fn target(name: &str) -> Arc<dyn Target> {
    Catalog::builtin().get(name).expect("validated by the argument parser")
}

/// Registration plus the engine seed, both drawn from the one seeded PRNG.
fn setup(args: &TargetArgs) -> Result<(Executor, u64)> {
    ensure!((1..=28).contains(&args.map_bits), "--map-bits must be in 1..=28");
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let reg = Registration::with_rng(target(&args.target), &mut rng);
    Ok((Executor::new(reg, args.map_bits), rng.gen()))
}

fn read_seeds(dir: &Path) -> Result<Vec<Vec<u8>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading seed directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.sort();
    let mut seeds = Vec::new();
    for p in &paths {
        let hidden = p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'));
        let sidecar = p.extension().is_some_and(|e| e == "json") && p.with_extension("").is_file();
        if !p.is_file() || hidden || sidecar {
            continue;
        }
        seeds.push(fs::read(p).with_context(|| format!("reading {}", p.display()))?);
    }
    if seeds.is_empty() {
        bail!("seed directory {} has no seed files", dir.display());
    }
    Ok(seeds)
}

fn engine_config(a: &FuzzArgs, rng_seed: u64) -> Result<Config> {
    ensure!(a.time > 0, "--time must be positive");
    ensure!(a.stats_interval_ms > 0, "--stats-interval-ms must be positive");
    let cfg = Config {
        max_execs: a.execs,
        max_time: Some(Duration::from_secs(a.time)),
        search: SearchParams {
            delta: i128::from(a.delta),
            learning_rate: a.learning_rate,
            max_iters: a.max_iters,
            max_execs: a.branch_execs,
            resample_limit: a.resample_limit,
            ..SearchParams::default()
        },
        context_sensitive: a.target.context_sensitive,
        rng_seed,
        length: LengthPolicy {
            filler: a.filler,
            max_len: a.max_len,
        },
        parallelism: a.parallelism,
        stats_interval: Duration::from_millis(a.stats_interval_ms),
        retry_exhausted: !a.no_retry,
        output_dir: Some(a.out.clone()),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_fuzz(a: FuzzArgs) -> Result<()> {
    let (exec, rng_seed) = setup(&a.target)?;
    let seeds = match &a.seeds {
        Some(d) => read_seeds(d)?,
        None => exec.registration().target().seeds(),
    };
    let cfg = engine_config(&a, rng_seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let mut writer = StatsWriter::spawn(a.stats_file.as_deref())?;
    let report = {
        let mut engine = Engine::new(&exec, cfg)?.with_observer(|s| writer.push(s));
        for s in seeds {
            engine.add_seed(s)?;
        }
        engine.run()?
    };
    let dropped = writer.finish()?;

    let path = a.out.join("report.json");
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
    eprintln!(
        "{}: {} execs, {} taint runs, {} admitted, {} crash bins, stopped: {:?}{}",
        report.target,
        report.fast_execs,
        report.taint_runs,
        report.admitted,
        report.crash_bins.len(),
        report.stop,
        if dropped > 0 { format!(" ({dropped} stats lines dropped)") } else { String::new() },
    );
    Ok(())
}

#[derive(Serialize)]
struct ModeSummary<'a> {
    verdict: &'a Verdict,
    branches: usize,
    hits: u64,
}

impl<'a> ModeSummary<'a> {
    fn of(r: &'a RunResult) -> Self {
        ModeSummary {
            verdict: &r.verdict,
            branches: r.trace.len(),
            hits: r.trace.0.iter().map(|&(_, c)| u64::from(c)).sum(),
        }
    }
}

#[derive(Serialize)]
struct Repro<'a> {
    target: &'a str,
    input_len: usize,
    fast: ModeSummary<'a>,
    taint: ModeSummary<'a>,
    modes_agree: bool,
    cond_records: &'a [CondStmtRecord],
    read_records: &'a [gradfuzz_core::length_explore::ReadRecord],
}

fn offsets_summary(r: &CondStmtRecord) -> String {
    let v: Vec<usize> = r.offsets.ones().collect();
    match (v.first(), v.last()) {
        (None, _) => "{}".into(),
        (Some(a), Some(b)) if b - a + 1 == v.len() && v.len() > 1 => format!("{{{a}..={b}}}"),
        _ => format!("{v:?}"),
    }
}

fn cmd_repro(a: ReproArgs) -> Result<bool> {
    let input = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (exec, _) = setup(&a.target)?;
    let opts = RunOptions {
        context_sensitive: a.target.context_sensitive,
        ..RunOptions::default()
    };
    let fast = exec.run_fast(&input, &opts);
    let taint = exec.run_taint(&input, &opts);
    let rep = Repro {
        target: exec.registration().name(),
        input_len: input.len(),
        fast: ModeSummary::of(&fast),
        taint: ModeSummary::of(&taint),
        modes_agree: fast.trace == taint.trace && fast.verdict == taint.verdict,
        cond_records: &taint.cond_records,
        read_records: &taint.read_records,
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rep)?);
    } else {
        match &fast.verdict {
            Verdict::Ok => println!("verdict: ok"),
            Verdict::Crash { at, class, detail } => {
                println!("verdict: crash ({class}) {detail}");
                if let Some(k) = at {
                    println!("  at: {} -> {} ctx {:#010x}", k.prev, k.cur, k.context.0);
                }
            }
        }
        println!("trace: {} branches, {} hits, modes agree: {}", rep.fast.branches, rep.fast.hits, rep.modes_agree);
        for r in &taint.cond_records {
            println!(
                "  site {:>3} ctx {:#010x} {:>2} taken={:<5} f={:<12} offsets={} shapes={}{}",
                r.site,
                r.context.0,
                r.op,
                r.taken,
                r.f.0,
                offsets_summary(r),
                r.shapes.len(),
                r.length_hint.map(|l| format!(" needs_len={l}")).unwrap_or_default(),
            );
        }
    }
    Ok(fast.verdict.is_crash())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    ensure!(a.runs > 0, "--runs must be positive");
    let cat = Catalog::builtin();
    let names: Vec<String> = if a.targets.is_empty() {
        cat.names().map(String::from).collect()
    } else {
        a.targets.clone()
    };
    let mut rows = Vec::new();
    for name in &names {
        let t = target(name);
        let exec = Executor::new(Registration::new(t.clone(), a.seed), DEFAULT_MAP_BITS);
        rows.push(throughput::measure(&exec, &t.seeds(), a.runs, &RunOptions::default()));
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        println!("{:<16} {:>14} {:>14} {:>8}", "target", "fast/s", "taint/s", "ratio");
        for r in &rows {
            println!("{:<16} {:>14.0} {:>14.0} {:>8.2}", r.target, r.fast_per_sec, r.taint_per_sec, r.ratio());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Fuzz(a) => cmd_fuzz(a),
        Cmd::Repro(a) => cmd_repro(a).map(|_| ()),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::ListTargets => {
            for t in Catalog::builtin().iter() {
                println!("{:<16} {}", t.name(), t.description());
            }
            Ok(())
        }
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
