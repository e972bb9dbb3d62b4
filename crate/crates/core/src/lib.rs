//! BGP anomaly detection over AS-path semantics.
//!
//! The pipeline turns a RIB snapshot plus an update stream into attributed
//! anomaly events:
//!
//! 1. [`route_monitor`] builds per-vantage prefix trees and extracts route
//!    changes by longest prefix match.
//! 2. [`as_profile`] renders a structured, versioned description of every AS
//!    from the business-relationship graph and per-AS metadata.
//! 3. [`embedder`] turns description segments into one vector per AS through
//!    a pluggable provider (deterministic mock, or HTTP wire protocol).
//! 4. [`cdr`] trains a contrastive reduction network and maps embeddings
//!    into a compact space aligned with Euclidean distance.
//! 5. [`detector`] scores each route change by aligning historical and
//!    updated paths over reduced embeddings, then flags outliers against a
//!    windowed mean + 4 sigma threshold.
//! 6. [`aggregator`] groups flagged changes into AS-attributed events and
//!    classifies them against known anomalous routing patterns.
//!
//! Batch stages are data-parallel when the `parallel` feature (default) is
//! on; each has a sequential twin (`*_seq`) so the two can be benchmarked
//! against each other.

pub mod aggregator;
pub mod as_profile;
pub mod cdr;
pub mod detector;
pub mod embedder;
pub mod error;
pub mod rng;
pub mod route_monitor;
pub mod types;

#[cfg(feature = "oracles")]
pub mod oracles;

pub use error::CoreError;

/// Caps the global worker pool for data-parallel stages. Callable once per
/// process; later calls report an error string.
#[cfg(feature = "parallel")]
pub fn set_parallelism(threads: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| format!("thread pool already initialized: {e}"))
}

/// Sequential build: the jobs setting has nothing to configure.
#[cfg(not(feature = "parallel"))]
pub fn set_parallelism(_threads: usize) -> Result<(), String> {
    Err("built without the parallel feature; running sequentially".to_string())
}
