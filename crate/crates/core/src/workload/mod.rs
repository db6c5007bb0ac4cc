//! Problem construction: file ingestion, deterministic generators, vector
//! initialization, and the single-stream oracle every distributed run is
//! checked against.

mod gen;
mod market;

pub use gen::{gen_block_band, gen_stencil7};
pub use market::{read_matrix_market, write_matrix_market, MarketError};

use crate::sparse::{coo_to_csr, spmv, CsrMatrix, DenseVector, SparseError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error("invalid generator parameters: {0}")]
    Params(String),
    #[error("feedback iteration needs a square matrix, got {n_rows}x{n_cols}")]
    NonSquareFeedback { n_rows: usize, n_cols: usize },
}

/// Where the matrix comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSource {
    /// Matrix Market coordinate file.
    MarketFile(PathBuf),
    /// 7-point Laplacian stencil on an nx × ny × nz grid.
    Stencil7 { nx: usize, ny: usize, nz: usize },
    /// Banded diagonal blocks plus seeded random off-diagonal block fill.
    BlockBand {
        dim: usize,
        block: usize,
        inner_band: usize,
        outer_stride: usize,
        target_nnzr: f64,
    },
}

/// How the starting right-hand side is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhsInit {
    /// Every entry the same value.
    Constant(f64),
    /// Entry i gets i/n, a ramp over [0, 1).
    LinearRamp,
    /// Uniform values in [0, 1) from the problem seed.
    SeededUniform,
}

/// A fully-specified problem: matrix source, starting vector rule, and the
/// seed that pins down every random choice.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub source: MatrixSource,
    pub rhs: RhsInit,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn new(source: MatrixSource, rhs: RhsInit, seed: u64) -> Self {
        ProblemSpec { source, rhs, seed }
    }

    /// Builds the matrix in canonical form.
    pub fn assemble(&self) -> Result<CsrMatrix, WorkloadError> {
        let triples = match &self.source {
            MatrixSource::MarketFile(path) => read_matrix_market(path)?,
            MatrixSource::Stencil7 { nx, ny, nz } => gen_stencil7(*nx, *ny, *nz)?,
            MatrixSource::BlockBand {
                dim,
                block,
                inner_band,
                outer_stride,
                target_nnzr,
            } => gen_block_band(
                *dim,
                *block,
                *inner_band,
                *outer_stride,
                *target_nnzr,
                self.seed,
            )?,
        };
        Ok(coo_to_csr(&triples)?)
    }

    /// Starting vector of length `n` per the init rule and seed.
    pub fn initial_b(&self, n: usize) -> DenseVector {
        match self.rhs {
            RhsInit::Constant(c) => vec![c; n],
            RhsInit::LinearRamp => (0..n).map(|i| i as f64 / n.max(1) as f64).collect(),
            RhsInit::SeededUniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                (0..n).map(|_| rng.random::<f64>()).collect()
            }
        }
    }

    /// Short label for reports and CSV rows.
    pub fn name(&self) -> String {
        match &self.source {
            MatrixSource::MarketFile(path) => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            MatrixSource::Stencil7 { nx, ny, nz } => format!("stencil7-{nx}x{ny}x{nz}"),
            MatrixSource::BlockBand {
                dim, target_nnzr, ..
            } => format!("blockband-{dim}-nnzr{target_nnzr}"),
        }
    }
}

/// Ground truth for every distributed run: assembles the matrix, builds the
/// starting vector, and applies the serial kernel `iterations` times with
/// the result fed back as the next input (square matrices only when
/// iterating more than once).
pub fn sequential_oracle(
    problem: &ProblemSpec,
    iterations: usize,
) -> Result<DenseVector, WorkloadError> {
    let a = problem.assemble()?;
    if iterations > 1 && a.n_rows != a.n_cols {
        return Err(WorkloadError::NonSquareFeedback {
            n_rows: a.n_rows,
            n_cols: a.n_cols,
        });
    }
    let mut b = problem.initial_b(a.n_cols);
    let mut c = vec![0.0; a.n_rows];
    for _ in 0..iterations {
        crate::sparse::spmv_into(&a, &b, &mut c)?;
        std::mem::swap(&mut b, &mut c);
    }
    // after k swaps, b holds A^k times the starting vector
    Ok(b)
}

/// One serial multiplication of an already-assembled matrix; convenience
/// used by tests that have the matrix in hand.
pub fn single_spmv(a: &CsrMatrix, b: &[f64]) -> Result<DenseVector, WorkloadError> {
    Ok(spmv(a, b)?)
}
