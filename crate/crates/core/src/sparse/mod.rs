//! Compressed Row Storage matrices and the kernels that run on them.
//!
//! The CRS layout keeps all nonzeros in one contiguous `val` array, row by
//! row, with per-entry column indices in `col_idx` and per-row offsets in
//! `row_ptr`. Column indices are stored as 4-byte integers; values are
//! 8-byte reals. Assembly goes through [`CooTriples`].

mod kernels;
mod rcm;

pub use kernels::{
    balanced_row_cuts, spmv, spmv_accumulate, spmv_chunked, spmv_chunked_accumulate,
    spmv_chunked_into, spmv_into, spmv_split,
};
pub use rcm::{matrix_bandwidth, permute, permute_vec, rcm_permutation};

use thiserror::Error;

/// Dense vector of 8-byte reals. Length must match the matrix dimension it
/// is used with; kernels validate this at the call boundary.
pub type DenseVector = Vec<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("triple ({row}, {col}, {val}) is out of bounds for a {n_rows}x{n_cols} matrix")]
    TripleOutOfBounds {
        row: usize,
        col: usize,
        val: f64,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("column count {n_cols} exceeds the 4-byte index range")]
    ColumnRange { n_cols: usize },
    #[error("invalid CRS structure: {0}")]
    InvalidStructure(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("worker count must be at least 1")]
    NoWorkers,
}

/// Assembly staging format: a list of (row, col, value) triples plus the
/// matrix shape. Duplicates are permitted and are summed on conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct CooTriples {
    pub n_rows: usize,
    pub n_cols: usize,
    pub triples: Vec<(usize, usize, f64)>,
}

impl CooTriples {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        CooTriples {
            n_rows,
            n_cols,
            triples: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        self.triples.push((row, col, val));
    }

    pub fn nnz(&self) -> usize {
        self.triples.len()
    }
}

/// Square/rectangular sparse matrix in Compressed Row Storage.
///
/// Invariants (enforced by [`CsrMatrix::from_parts`] and by assembly):
/// - `row_ptr` is nondecreasing, starts at 0 and ends at `n_nz`
/// - every column index is in `[0, n_cols)`
/// - within each row, column indices are strictly increasing (canonical form)
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub val: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from raw CRS arrays, checking every structural
    /// invariant except per-row column ordering (checked in debug builds by
    /// assembly; kernel-internal matrices may interleave remapped columns).
    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        val: Vec<f64>,
    ) -> Result<Self, SparseError> {
        if n_cols > u32::MAX as usize {
            return Err(SparseError::ColumnRange { n_cols });
        }
        if row_ptr.len() != n_rows + 1 {
            return Err(SparseError::InvalidStructure(format!(
                "row_ptr length {} != n_rows + 1 = {}",
                row_ptr.len(),
                n_rows + 1
            )));
        }
        if row_ptr[0] != 0 || row_ptr[n_rows] != val.len() || col_idx.len() != val.len() {
            return Err(SparseError::InvalidStructure(format!(
                "row_ptr spans [{}, {}] but nnz arrays have {} and {} entries",
                row_ptr[0],
                row_ptr[n_rows],
                col_idx.len(),
                val.len()
            )));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(SparseError::InvalidStructure(
                "row_ptr is not nondecreasing".into(),
            ));
        }
        if let Some(&c) = col_idx.iter().find(|&&c| c as usize >= n_cols) {
            return Err(SparseError::InvalidStructure(format!(
                "column index {c} out of range for {n_cols} columns"
            )));
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            val,
        })
    }

    /// Empty matrix of the given shape.
    pub fn zero(n_rows: usize, n_cols: usize) -> Self {
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            val: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n as u32).collect(),
            val: vec![1.0; n],
        }
    }

    pub fn n_nz(&self) -> usize {
        self.val.len()
    }

    /// Average nonzeros per row, as a real number.
    pub fn nnzr(&self) -> f64 {
        if self.n_rows == 0 {
            0.0
        } else {
            self.n_nz() as f64 / self.n_rows as f64
        }
    }

    /// Column indices and values of one row.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.val[span])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn max_row_nnz(&self) -> usize {
        (0..self.n_rows).map(|i| self.row_nnz(i)).max().unwrap_or(0)
    }

    /// Maximum |i - col| over all nonzeros.
    pub fn bandwidth(&self) -> usize {
        matrix_bandwidth(self)
    }

    /// True when the row/column pattern equals the pattern of the transpose.
    pub fn pattern_symmetric(&self) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        let mut entries: Vec<(usize, usize)> = Vec::with_capacity(self.n_nz());
        for i in 0..self.n_rows {
            for &c in self.row(i).0 {
                entries.push((i, c as usize));
            }
        }
        let set: std::collections::HashSet<(usize, usize)> = entries.iter().copied().collect();
        entries.iter().all(|&(i, j)| set.contains(&(j, i)))
    }
}

/// Converts staged triples to canonical CRS. Duplicate (row, col) entries are
/// summed; per-row column indices come out strictly ascending.
pub fn coo_to_csr(t: &CooTriples) -> Result<CsrMatrix, SparseError> {
    if t.n_cols > u32::MAX as usize {
        return Err(SparseError::ColumnRange { n_cols: t.n_cols });
    }
    for &(r, c, v) in &t.triples {
        if r >= t.n_rows || c >= t.n_cols {
            return Err(SparseError::TripleOutOfBounds {
                row: r,
                col: c,
                val: v,
                n_rows: t.n_rows,
                n_cols: t.n_cols,
            });
        }
    }
    let mut sorted = t.triples.clone();
    sorted.sort_by_key(|&(r, c, _)| (r, c));

    let mut row_ptr = Vec::with_capacity(t.n_rows + 1);
    let mut col_idx: Vec<u32> = Vec::with_capacity(sorted.len());
    let mut val: Vec<f64> = Vec::with_capacity(sorted.len());
    row_ptr.push(0);
    let mut next_row = 0usize;
    for &(r, c, v) in &sorted {
        while next_row < r {
            row_ptr.push(val.len());
            next_row += 1;
        }
        if val.len() > row_ptr[next_row] && *col_idx.last().unwrap() as usize == c {
            // duplicate within the current row: sum
            *val.last_mut().unwrap() += v;
        } else {
            col_idx.push(c as u32);
            val.push(v);
        }
    }
    while next_row < t.n_rows {
        row_ptr.push(val.len());
        next_row += 1;
    }
    debug_assert_eq!(row_ptr.len(), t.n_rows + 1);
    Ok(CsrMatrix {
        n_rows: t.n_rows,
        n_cols: t.n_cols,
        row_ptr,
        col_idx,
        val,
    })
}

/// Expands a canonical matrix back into row-sorted triples.
pub fn csr_to_coo(a: &CsrMatrix) -> CooTriples {
    let mut t = CooTriples::new(a.n_rows, a.n_cols);
    for i in 0..a.n_rows {
        let (cols, vals) = a.row(i);
        for (c, v) in cols.iter().zip(vals) {
            t.push(i, *c as usize, *v);
        }
    }
    t
}
