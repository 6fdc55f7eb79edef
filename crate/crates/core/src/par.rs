//! Data-parallel batch evaluation with a sequential fallback.
//!
//! Without the `parallel` feature every mode runs sequentially. Results are
//! always returned in input order, so the choice of mode never changes what
//! a caller observes.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sequential,
    #[default]
    Parallel,
}

impl Mode {
    /// True if `Parallel` would actually use worker threads in this build.
    pub const fn available() -> bool {
        cfg!(feature = "parallel")
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" | "seq" => Ok(Mode::Sequential),
            "parallel" | "par" => Ok(Mode::Parallel),
            _ => Err(format!("unknown parallelism mode `{s}`")),
        }
    }
}

/// Batches smaller than this are not worth splitting.
pub const MIN_PARALLEL_BATCH: usize = 16;

pub fn map<T, R, F>(mode: Mode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == Mode::Parallel && items.len() >= MIN_PARALLEL_BATCH {
        use rayon::prelude::*;
        return items.par_iter().with_min_len(MIN_PARALLEL_BATCH).map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}
