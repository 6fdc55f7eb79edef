//! Stats stream: JSON lines written by a dedicated thread.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::mpsc::{sync_channel, SyncSender, TrySendError};
use std::thread::JoinHandle;

use anyhow::{Context, Result};
use gradfuzz_core::engine::Stats;

const QUEUE: usize = 64;

pub struct StatsWriter {
    tx: Option<SyncSender<String>>,
    handle: Option<JoinHandle<io::Result<()>>>,
    dropped: u64,
}

impl StatsWriter {
    /// Lines go to `path`, or stdout if `None`.
    pub fn spawn(path: Option<&Path>) -> Result<Self> {
        let mut out: Box<dyn Write + Send> = match path {
            Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
            None => Box::new(io::stdout()),
        };
        let (tx, rx) = sync_channel::<String>(QUEUE);
        let handle = std::thread::spawn(move || {
            for line in rx {
                out.write_all(line.as_bytes())?;
                out.write_all(b"\n")?;
                out.flush()?;
            }
            Ok(())
        });
        Ok(StatsWriter {
            tx: Some(tx),
            handle: Some(handle),
            dropped: 0,
        })
    }

    /// Never blocks: a line is dropped if the writer is behind.
    pub fn push(&mut self, s: &Stats) {
        let line = serde_json::to_string(s).expect("stats serialize");
        if let Some(tx) = &self.tx {
            if let Err(TrySendError::Full(_)) = tx.try_send(line) {
                self.dropped += 1;
            }
        }
    }

    pub fn finish(mut self) -> Result<u64> {
        drop(self.tx.take());
        if let Some(h) = self.handle.take() {
            h.join()
                .map_err(|_| anyhow::anyhow!("stats writer panicked"))?
                .context("writing stats")?;
        }
        Ok(self.dropped)
    }
}
