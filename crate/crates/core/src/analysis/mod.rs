//! Memory-length extraction and the statistics used to compare sweeps.

pub mod memory;
pub mod special;
pub mod stats;

pub use memory::{coarse_length, extract, fine_length, LengthEstimate, MemoryLengths, Thresholds};
pub use stats::{Df, Method, StatsError, TestResult};
