//! Taint-guided, gradient-descent greybox fuzzing over in-process targets.

pub mod constraints;
pub mod coverage;
pub mod engine;
pub mod harness;
pub mod input;
pub mod length_explore;
pub mod par;
pub mod search;
pub mod shape_infer;
pub mod taint_store;
pub mod throughput;
