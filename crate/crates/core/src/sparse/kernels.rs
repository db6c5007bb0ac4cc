//! Matrix-vector kernels: the serial reference loop, the split variant used
//! when remote vector entries arrive late, and a chunked multi-threaded
//! driver that reproduces the serial result bit for bit.

use super::{CsrMatrix, DenseVector, SparseError};

fn check_dims(a: &CsrMatrix, b: &[f64], c: &[f64]) -> Result<(), SparseError> {
    if b.len() != a.n_cols {
        return Err(SparseError::DimensionMismatch {
            context: "input vector length vs matrix columns",
            expected: a.n_cols,
            got: b.len(),
        });
    }
    if c.len() != a.n_rows {
        return Err(SparseError::DimensionMismatch {
            context: "output vector length vs matrix rows",
            expected: a.n_rows,
            got: c.len(),
        });
    }
    Ok(())
}

#[inline]
fn row_dot(a: &CsrMatrix, i: usize, b: &[f64]) -> f64 {
    let (cols, vals) = a.row(i);
    let mut sum = 0.0;
    for (c, v) in cols.iter().zip(vals) {
        sum += v * b[*c as usize];
    }
    sum
}

/// C = A * B, allocating the result.
pub fn spmv(a: &CsrMatrix, b: &[f64]) -> Result<DenseVector, SparseError> {
    let mut c = vec![0.0; a.n_rows];
    spmv_into(a, b, &mut c)?;
    Ok(c)
}

/// C = A * B into a caller-provided buffer. Accumulation within each row runs
/// in storage order, so the result is deterministic.
pub fn spmv_into(a: &CsrMatrix, b: &[f64], c: &mut [f64]) -> Result<(), SparseError> {
    check_dims(a, b, c)?;
    for (i, out) in c.iter_mut().enumerate() {
        *out = row_dot(a, i, b);
    }
    Ok(())
}

/// C += A * B. Used for the second pass of split kernels, where the first
/// pass has already written partial row sums.
pub fn spmv_accumulate(a: &CsrMatrix, b: &[f64], c: &mut [f64]) -> Result<(), SparseError> {
    check_dims(a, b, c)?;
    for (i, out) in c.iter_mut().enumerate() {
        *out += row_dot(a, i, b);
    }
    Ok(())
}

/// Split kernel: C = A_local * B_local + A_remote * B_remote, computed as two
/// full passes over C. The first pass overwrites, the second accumulates, so
/// every row of C is stored twice — the extra write traffic is what the
/// split-format term in the balance model accounts for.
pub fn spmv_split(
    a_local: &CsrMatrix,
    b_local: &[f64],
    a_remote: &CsrMatrix,
    b_remote: &[f64],
    c: &mut [f64],
) -> Result<(), SparseError> {
    if a_local.n_rows != a_remote.n_rows {
        return Err(SparseError::DimensionMismatch {
            context: "split parts must cover the same rows",
            expected: a_local.n_rows,
            got: a_remote.n_rows,
        });
    }
    spmv_into(a_local, b_local, c)?;
    spmv_accumulate(a_remote, b_remote, c)?;
    Ok(())
}

/// Cuts `0..n_rows` into `parts` contiguous ranges with near-equal nonzero
/// counts. Returns `parts + 1` boundaries starting at 0 and ending at
/// `n_rows`. Boundary k is the row index whose nonzero prefix sum is nearest
/// to `k/parts` of the total, so no part deviates from the ideal share by
/// more than the largest single row.
pub fn balanced_row_cuts(row_ptr: &[usize], parts: usize) -> Result<Vec<usize>, SparseError> {
    if parts == 0 {
        return Err(SparseError::NoWorkers);
    }
    let n_rows = row_ptr.len() - 1;
    let total = row_ptr[n_rows];
    let mut cuts = Vec::with_capacity(parts + 1);
    cuts.push(0);
    for k in 1..parts {
        let target = (total as u128 * k as u128 / parts as u128) as usize;
        // first boundary with prefix >= target, then compare with its
        // predecessor and keep whichever prefix lands closer
        let hi = row_ptr.partition_point(|&p| p < target).min(n_rows);
        let lo = hi.saturating_sub(1);
        let pick = if hi > 0 && target - row_ptr[lo] <= row_ptr[hi] - target {
            lo
        } else {
            hi
        };
        cuts.push(pick.max(cuts[k - 1]));
    }
    cuts.push(n_rows);
    Ok(cuts)
}

/// C = A * B computed by `workers` threads over contiguous row chunks with
/// balanced nonzero counts. Row sums accumulate in the same order as the
/// serial kernel, so the output is bitwise identical to [`spmv`].
pub fn spmv_chunked(a: &CsrMatrix, b: &[f64], workers: usize) -> Result<DenseVector, SparseError> {
    let mut c = vec![0.0; a.n_rows];
    spmv_chunked_into(a, b, workers, &mut c)?;
    Ok(c)
}

/// See [`spmv_chunked`]; writes into a caller-provided buffer.
pub fn spmv_chunked_into(
    a: &CsrMatrix,
    b: &[f64],
    workers: usize,
    c: &mut [f64],
) -> Result<(), SparseError> {
    chunked_driver(a, b, workers, c, false)
}

/// Chunked C += A * B, the accumulating counterpart of [`spmv_chunked_into`].
pub fn spmv_chunked_accumulate(
    a: &CsrMatrix,
    b: &[f64],
    workers: usize,
    c: &mut [f64],
) -> Result<(), SparseError> {
    chunked_driver(a, b, workers, c, true)
}

fn chunked_driver(
    a: &CsrMatrix,
    b: &[f64],
    workers: usize,
    c: &mut [f64],
    accumulate: bool,
) -> Result<(), SparseError> {
    check_dims(a, b, c)?;
    let cuts = balanced_row_cuts(&a.row_ptr, workers)?;
    if workers == 1 {
        return if accumulate {
            spmv_accumulate(a, b, c)
        } else {
            spmv_into(a, b, c)
        };
    }
    std::thread::scope(|scope| {
        let mut rest = c;
        for w in 0..workers {
            let (lo, hi) = (cuts[w], cuts[w + 1]);
            let (mine, tail) = rest.split_at_mut(hi - lo);
            rest = tail;
            scope.spawn(move || {
                for (off, out) in mine.iter_mut().enumerate() {
                    let dot = row_dot(a, lo + off, b);
                    if accumulate {
                        *out += dot;
                    } else {
                        *out = dot;
                    }
                }
            });
        }
    });
    Ok(())
}
