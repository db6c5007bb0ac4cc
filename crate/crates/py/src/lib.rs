//! Python bindings for the distributed sparse matrix-vector engine.
//!
//! The module exposes the CRS matrix type with its generators and kernels,
//! the code-balance performance model, communication-plan inspection, the
//! distributed engine (`run`), and the triad bandwidth microbenchmark.
//! Vectors cross the boundary as plain Python lists of floats.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use spmv_core::bench::{self, parse_transport};
use spmv_core::engine::{self, ExecConfig, Mode};
use spmv_core::model;
use spmv_core::partition::partition_by_nonzeros;
use spmv_core::plan::{build_all_plans, exchange_volume, PlanSummary};
use spmv_core::sparse;
use spmv_core::workload;
use spmv_core::{CooTriples, CsrMatrix};
use std::str::FromStr;
use std::time::Duration;

fn verr(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rerr(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// A sparse matrix in Compressed Row Storage, canonical form: sorted,
/// deduplicated column indices within each row.
#[pyclass(name = "CsrMatrix", frozen)]
struct PyCsrMatrix {
    inner: CsrMatrix,
}

#[pymethods]
impl PyCsrMatrix {
    /// Builds a matrix from (row, col, value) triples; duplicates are summed.
    #[staticmethod]
    fn from_coo(n_rows: usize, n_cols: usize, triples: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        let coo = CooTriples {
            n_rows,
            n_cols,
            triples,
        };
        Ok(PyCsrMatrix {
            inner: sparse::coo_to_csr(&coo).map_err(verr)?,
        })
    }

    /// The n x n identity.
    #[staticmethod]
    fn identity(n: usize) -> Self {
        PyCsrMatrix {
            inner: CsrMatrix::identity(n),
        }
    }

    /// 7-point Laplacian stencil on an nx x ny x nz grid.
    #[staticmethod]
    fn stencil7(nx: usize, ny: usize, nz: usize) -> PyResult<Self> {
        let coo = workload::gen_stencil7(nx, ny, nz).map_err(verr)?;
        Ok(PyCsrMatrix {
            inner: sparse::coo_to_csr(&coo).map_err(verr)?,
        })
    }

    /// Banded diagonal blocks plus seeded random off-diagonal block fill.
    #[staticmethod]
    #[pyo3(signature = (dim, block, inner_band, outer_stride, target_nnzr, seed=0))]
    fn block_band(
        dim: usize,
        block: usize,
        inner_band: usize,
        outer_stride: usize,
        target_nnzr: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let coo = workload::gen_block_band(dim, block, inner_band, outer_stride, target_nnzr, seed)
            .map_err(verr)?;
        Ok(PyCsrMatrix {
            inner: sparse::coo_to_csr(&coo).map_err(verr)?,
        })
    }

    /// Reads a Matrix Market coordinate file.
    #[staticmethod]
    fn read_market(path: &str) -> PyResult<Self> {
        let coo = workload::read_matrix_market(path).map_err(rerr)?;
        Ok(PyCsrMatrix {
            inner: sparse::coo_to_csr(&coo).map_err(rerr)?,
        })
    }

    /// Writes the matrix as a Matrix Market coordinate file.
    fn write_market(&self, path: &str) -> PyResult<()> {
        workload::write_matrix_market(path, &self.inner).map_err(rerr)
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows
    }

    #[getter]
    fn n_cols(&self) -> usize {
        self.inner.n_cols
    }

    #[getter]
    fn n_nz(&self) -> usize {
        self.inner.n_nz()
    }

    /// Average nonzeros per row.
    #[getter]
    fn n_nzr(&self) -> f64 {
        self.inner.nnzr()
    }

    /// Maximum |row - column| over the stored entries.
    fn bandwidth(&self) -> usize {
        sparse::matrix_bandwidth(&self.inner)
    }

    /// The stored entries as (row, col, value) triples in row-major order.
    fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.inner.n_nz());
        for i in 0..self.inner.n_rows {
            let (cols, vals) = self.inner.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out.push((i, c as usize, v));
            }
        }
        out
    }

    /// One serial multiplication: returns A @ b.
    fn spmv(&self, b: Vec<f64>) -> PyResult<Vec<f64>> {
        sparse::spmv(&self.inner, &b).map_err(verr)
    }

    /// Reverse Cuthill-McKee: returns (reordered matrix, permutation) where
    /// permutation[new] = old.
    fn rcm(&self) -> PyResult<(PyCsrMatrix, Vec<usize>)> {
        let p = sparse::rcm_permutation(&self.inner).map_err(verr)?;
        let reordered = sparse::permute(&self.inner, &p).map_err(verr)?;
        Ok((PyCsrMatrix { inner: reordered }, p))
    }

    /// Modeled memory traffic of one multiplication, in bytes.
    #[pyo3(signature = (split=false))]
    fn model_traffic(&self, split: bool) -> u64 {
        model::model_traffic(&self.inner, split)
    }

    fn __repr__(&self) -> String {
        format!(
            "CsrMatrix({} x {}, {} nonzeros)",
            self.inner.n_rows,
            self.inner.n_cols,
            self.inner.n_nz()
        )
    }
}

/// Code balance in bytes per flop: the memory traffic one multiply-add pair
/// must pay, from the average row length, the extra right-hand-side traffic
/// kappa, and whether the kernel runs as two passes.
#[pyfunction]
#[pyo3(signature = (n_nzr, kappa=0.0, split=false))]
fn code_balance(n_nzr: f64, kappa: f64, split: bool) -> PyResult<f64> {
    model::code_balance(model::BalanceInputs {
        n_nzr,
        kappa,
        split,
    })
    .map_err(verr)
}

/// Roofline bound: bandwidth (GB/s) over balance (bytes/flop) gives GFlop/s.
#[pyfunction]
fn max_performance(balance: f64, bandwidth: f64) -> PyResult<f64> {
    model::max_performance(balance, bandwidth).map_err(verr)
}

/// Solves the balance model for kappa from a measured rate and bandwidth.
#[pyfunction]
#[pyo3(signature = (measured_gflops, measured_bandwidth, n_nzr, split=false))]
fn estimate_kappa(
    measured_gflops: f64,
    measured_bandwidth: f64,
    n_nzr: f64,
    split: bool,
) -> PyResult<f64> {
    model::estimate_kappa(measured_gflops, measured_bandwidth, n_nzr, split).map_err(verr)
}

/// Full traversals of the right-hand side per multiplication implied by kappa.
#[pyfunction]
fn b_load_count(kappa: f64, n_nzr: f64) -> f64 {
    model::b_load_count(kappa, n_nzr)
}

fn summary_dict<'py>(py: Python<'py>, s: &PlanSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("rank", s.rank)?;
    d.set_item("rows", s.rows)?;
    d.set_item("nnz_local", s.nnz_local)?;
    d.set_item("nnz_remote", s.nnz_remote)?;
    d.set_item("halo_len", s.halo_len)?;
    d.set_item("sent_bytes", s.sent_bytes)?;
    d.set_item("received_bytes", s.received_bytes)?;
    d.set_item("messages_out", s.messages_out)?;
    d.set_item("raw_remote_refs", s.raw_remote_refs)?;
    d.set_item("send_counts", s.send_counts.clone())?;
    d.set_item("recv_counts", s.recv_counts.clone())?;
    Ok(d)
}

/// Partitions the matrix by nonzeros and reports each rank's communication
/// plan plus the validated total exchange volume.
#[pyfunction]
fn plan_report<'py>(
    py: Python<'py>,
    a: PyRef<'py, PyCsrMatrix>,
    ranks: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let part = partition_by_nonzeros(&a.inner, ranks).map_err(verr)?;
    let plans = build_all_plans(&a.inner, &part).map_err(rerr)?;
    let volume = exchange_volume(&plans).map_err(rerr)?;

    let per_rank: Vec<Bound<'py, PyDict>> = plans
        .iter()
        .map(|p| summary_dict(py, &p.summary()))
        .collect::<PyResult<_>>()?;
    let d = PyDict::new(py);
    d.set_item("per_rank", per_rank)?;
    d.set_item("total_bytes", volume.total_bytes)?;
    d.set_item("per_rank_sent_bytes", volume.per_rank_sent_bytes)?;
    d.set_item("per_rank_recv_bytes", volume.per_rank_recv_bytes)?;
    d.set_item("per_rank_messages", volume.per_rank_messages)?;
    Ok(d)
}

/// Runs the distributed engine on `a` and reports timings and the result.
///
/// `b0` defaults to the ramp i/n. With `check=True` (the default) the result
/// is compared against the iterated serial kernel and `max_gap` is included.
/// Modes: vector-no-overlap, vector-naive-overlap, task-mode. Transports:
/// in-process, in-process-on-wait, socket, and 'delayed-eager BASE_US
/// PER_BYTE_NS' / 'delayed-on-wait BASE_US PER_BYTE_NS'.
#[pyfunction]
#[pyo3(signature = (
    a, b0=None, *, mode="vector-no-overlap", ranks=1, workers=1, iterations=1,
    transport="in-process", timeout_s=60.0, check=true
))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    a: PyRef<'py, PyCsrMatrix>,
    b0: Option<Vec<f64>>,
    mode: &str,
    ranks: usize,
    workers: usize,
    iterations: usize,
    transport: &str,
    timeout_s: f64,
    check: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mode = Mode::from_str(mode).map_err(verr)?;
    let transport = parse_transport(transport).map_err(verr)?;
    if !(timeout_s > 0.0 && timeout_s.is_finite()) {
        return Err(verr(format!("timeout_s must be positive, got {timeout_s}")));
    }
    let n = a.inner.n_cols;
    let b0 = match b0 {
        Some(v) => v,
        None => (0..n).map(|i| i as f64 / n.max(1) as f64).collect(),
    };
    let cfg = ExecConfig {
        mode,
        n_ranks: ranks,
        workers_per_rank: workers,
        transport,
        iterations,
        seed: 0,
        epoch_timeout: Duration::from_secs_f64(timeout_s),
        debug_transport: false,
    };

    let matrix = &a.inner;
    let outcome = py
        .detach(|| engine::run_on_matrix(&cfg, matrix, &b0))
        .map_err(|e| match e {
            engine::EngineError::Config(_) => verr(e),
            other => rerr(other),
        })?;

    let d = PyDict::new(py);
    if check {
        let mut reference = b0.clone();
        let mut c = vec![0.0; matrix.n_rows];
        for _ in 0..iterations {
            sparse::spmv_into(matrix, &reference, &mut c).map_err(rerr)?;
            std::mem::swap(&mut reference, &mut c);
        }
        let gap = bench::max_relative_gap(&outcome.result, &reference);
        if gap > bench::ORACLE_TOLERANCE {
            return Err(rerr(format!(
                "result disagrees with the serial reference: largest relative gap {gap:.3e}"
            )));
        }
        d.set_item("max_gap", gap)?;
    }
    d.set_item("result", &outcome.result)?;
    d.set_item("median_s", outcome.median_wall_s())?;
    d.set_item("min_s", outcome.min_wall_s())?;
    d.set_item("gflops", outcome.gflops())?;
    d.set_item("comm_bytes", outcome.comm_bytes)?;
    d.set_item("epoch_walls", &outcome.epoch_walls)?;
    d.set_item("n_rows", outcome.n_rows)?;
    d.set_item("n_nz", outcome.n_nz)?;
    let phases = outcome.phase_medians();
    d.set_item("gather_s", phases.gather_s)?;
    d.set_item("comm_s", phases.comm_s)?;
    d.set_item("local_s", phases.local_s)?;
    d.set_item("remote_s", phases.remote_s)?;
    Ok(d)
}

/// STREAM-style triad a[i] = b[i] + s*c[i]: returns length, repetitions,
/// best_s, raw_gbps, and corrected_gbps (raw times exactly 4/3 to account
/// for write-allocate traffic on the output array).
#[pyfunction]
#[pyo3(signature = (length, repetitions=3, workers=1))]
fn triad<'py>(
    py: Python<'py>,
    length: usize,
    repetitions: usize,
    workers: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let r = py
        .detach(|| bench::triad_bench(length, repetitions, workers))
        .map_err(|e| match e {
            bench::BenchError::Allocation { .. } => rerr(e),
            other => verr(other),
        })?;
    let d = PyDict::new(py);
    d.set_item("length", r.length)?;
    d.set_item("repetitions", r.repetitions)?;
    d.set_item("best_s", r.best_s)?;
    d.set_item("raw_gbps", r.raw_gbps)?;
    d.set_item("corrected_gbps", r.corrected_gbps)?;
    Ok(d)
}

#[pymodule]
fn overlap_spmv(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCsrMatrix>()?;
    m.add_function(wrap_pyfunction!(code_balance, m)?)?;
    m.add_function(wrap_pyfunction!(max_performance, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(b_load_count, m)?)?;
    m.add_function(wrap_pyfunction!(plan_report, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(triad, m)?)?;
    m.add(
        "MODES",
        vec![
            Mode::VectorNoOverlap.to_string(),
            Mode::VectorNaiveOverlap.to_string(),
            Mode::TaskMode.to_string(),
        ],
    )?;
    Ok(())
}
