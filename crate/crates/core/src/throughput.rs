//! Executions per second in each run mode.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::harness::{Executor, RunOptions};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Throughput {
    pub target: String,
    pub runs: u64,
    pub fast_per_sec: f64,
    pub taint_per_sec: f64,
}

impl Throughput {
    pub fn ratio(&self) -> f64 {
        self.fast_per_sec / self.taint_per_sec
    }
}

fn rate(runs: u64, t: Duration) -> f64 {
    runs as f64 / t.as_secs_f64().max(f64::MIN_POSITIVE)
}

/// Runs `runs` executions per mode, cycling through `inputs`, one at a time.
pub fn measure(exec: &Executor, inputs: &[Vec<u8>], runs: u64, opts: &RunOptions) -> Throughput {
    assert!(!inputs.is_empty() && runs > 0);
    let mut it = inputs.iter().cycle();
    let t = Instant::now();
    for _ in 0..runs {
        std::hint::black_box(exec.run_fast(it.next().expect("cycle"), opts));
    }
    let fast = t.elapsed();
    let mut it = inputs.iter().cycle();
    let t = Instant::now();
    for _ in 0..runs {
        std::hint::black_box(exec.run_taint(it.next().expect("cycle"), opts));
    }
    let taint = t.elapsed();
    Throughput {
        target: exec.registration().name().to_string(),
        runs,
        fast_per_sec: rate(runs, fast),
        taint_per_sec: rate(runs, taint),
    }
}
