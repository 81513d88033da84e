//! Error types shared across the crate.
//!
//! Shape mismatches in tensor ops are programming errors and panic at the
//! call site; everything data- or state-dependent (bad files, non-finite
//! numerics, infeasible instances) flows through these enums so callers —
//! in particular the CLI — can map failures to stable exit codes.

use thiserror::Error;

/// Numeric failures raised by tape ops and model forwards.
#[derive(Debug, Error)]
pub enum NumericError {
    #[error("non-finite value produced by `{context}`")]
    NonFinite { context: String },
    #[error("non-finite loss at iteration {iter} ({context})")]
    NonFiniteLoss { iter: usize, context: String },
}

/// Failures in ingest, alignment, windowing, or serialization of data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("timestamps not strictly increasing for series {series} at line {line}")]
    NonMonotone { series: String, line: u64 },
    #[error("series {series} resolution {found} min conflicts with declared {declared} min at line {line}")]
    MixedResolution { series: String, declared: u32, found: u32, line: u64 },
    #[error("gap in series {series} before line {line}: expected step of {expected} min")]
    Gap { series: String, expected: u32, line: u64 },
    #[error("series are not aligned: {msg}")]
    Misaligned { msg: String },
    #[error("{msg}")]
    Invalid { msg: String },
}

/// Failures of the unit-commitment harness.
#[derive(Debug, Error)]
pub enum UcError {
    #[error("enumeration bound exceeded: {units} units x {blocks} blocks = 2^{bits} schedules (max 2^{max_bits}); coarsen block granularity")]
    EnumerationBound { units: usize, blocks: usize, bits: usize, max_bits: usize },
    #[error("{msg}")]
    Invalid { msg: String },
}
