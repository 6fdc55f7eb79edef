use serde::{Deserialize, Serialize};

/// Index of a stored input in the corpus (seeds included).
pub type InputId = u64;

/// How an input came to exist.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Origin {
    Seed,
    /// Gradient search on the conditional at `site`.
    Search { site: u32 },
    /// Grown from `from_len` bytes to satisfy a short read.
    Extension { from_len: usize },
    /// Random fallback mutation.
    Havoc,
}

/// Candidate input with provenance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputBuffer {
    pub bytes: Vec<u8>,
    pub parent: Option<InputId>,
    pub origin: Origin,
}

impl InputBuffer {
    pub fn seed(bytes: Vec<u8>) -> Self {
        InputBuffer {
            bytes,
            parent: None,
            origin: Origin::Seed,
        }
    }

    pub fn derived(bytes: Vec<u8>, parent: Option<InputId>, origin: Origin) -> Self {
        InputBuffer {
            bytes,
            parent,
            origin,
        }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}
