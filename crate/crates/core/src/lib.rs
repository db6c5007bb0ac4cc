//! Distributed sparse matrix-vector multiplication with explicit control
//! over how communication and computation overlap.
//!
//! The crate is organized around a single pipeline:
//!
//! 1. [`workload`] builds or reads a sparse matrix and a starting vector.
//! 2. [`partition`] assigns contiguous row blocks to ranks, balancing
//!    nonzeros rather than rows.
//! 3. [`plan`] turns a partition into per-rank communication plans: who
//!    sends which vector entries to whom, and how each rank's matrix block
//!    splits into a local and a remote part.
//! 4. [`engine`] executes repeated multiplications across ranks (threads
//!    with message-passing transports) in one of three modes that differ in
//!    how they hide communication behind computation.
//! 5. [`model`] predicts the attainable performance from memory traffic, so
//!    measured numbers have a yardstick.
//! 6. [`bench`] wraps all of it into timed, machine-readable runs.

pub mod bench;
pub mod cli;
pub mod engine;
pub mod model;
pub mod partition;
pub mod plan;
pub mod sparse;
pub mod workload;

pub use sparse::{CooTriples, CsrMatrix, DenseVector, SparseError};
