//! Benchmark orchestration: suite specs, validated runs, and CSV/JSON
//! reporting.
//!
//! A suite is described by a small key=value text spec ([`parse_bench_spec`]).
//! [`bench_suite`] runs the full cross product of modes, rank counts, and
//! worker counts it names, checks every result against the serial reference
//! before recording anything, and annotates parallel efficiency relative to
//! the one-rank run of the same mode and worker count. [`triad_bench`]
//! measures attainable memory bandwidth for feeding the roofline model.

mod triad;

pub use triad::{triad_bench, TriadResult};

use crate::engine::{
    run_on_matrix, EngineError, ExecConfig, Mode, Progress, TransportKind, DEFAULT_EPOCH_TIMEOUT,
};
use crate::model::{code_balance, max_performance, model_traffic, BalanceInputs, ModelError};
use crate::sparse::CsrMatrix;
use crate::workload::{sequential_oracle, MatrixSource, ProblemSpec, RhsInit, WorkloadError};
use serde::Serialize;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::io;
use std::str::FromStr;
use std::time::Duration;
use thiserror::Error;

/// Everything that can go wrong while benchmarking.
#[derive(Debug, Error)]
pub enum BenchError {
    #[error("a triad needs at least 3 repetitions to pick a best, got {0}")]
    TooFewRepetitions(usize),
    #[error(
        "cannot allocate the triad arrays: 3 x {elements} elements of 8 bytes = {bytes} bytes"
    )]
    Allocation { elements: usize, bytes: u128 },
    #[error("benchmark spec problems:\n  {}", .0.join("\n  "))]
    Spec(Vec<String>),
    #[error("run [{config}] disagrees with the serial reference: largest relative gap {gap:.3e}")]
    OracleMismatch { config: String, gap: f64 },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Largest relative result gap a run may show against the serial reference.
pub const ORACLE_TOLERANCE: f64 = 1e-12;

/// Column order of every CSV report; [`RunRecord::csv_row`] follows it
/// exactly and non-finite values become empty cells.
pub const CSV_HEADER: &str = "mode,transport,ranks,workers,matrix,n_rows,n_nz,iterations,\
median_s,min_s,gflops,eff_gbps_model,model_bound_gflops,comm_bytes,\
gather_s,comm_s,local_s,remote_s,efficiency,below_half_efficiency";

/// One validated benchmark run, ready for a CSV row or JSON object.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub mode: String,
    pub transport: String,
    pub ranks: usize,
    pub workers: usize,
    pub matrix: String,
    pub n_rows: usize,
    pub n_nz: usize,
    pub iterations: usize,
    /// Median timed epoch, slowest rank.
    pub median_s: f64,
    /// Fastest timed epoch, slowest rank.
    pub min_s: f64,
    /// Two flops per stored nonzero over the median epoch.
    pub gflops: f64,
    /// Modeled memory traffic over the median epoch (decimal GB/s). This is
    /// the traffic model divided by time, not a hardware counter.
    pub eff_gbps_model: f64,
    /// Roofline bound bandwidth/balance; empty unless the spec supplies a
    /// bandwidth.
    pub model_bound_gflops: f64,
    /// Bytes exchanged per multiplication, straight from the plans.
    pub comm_bytes: u64,
    pub gather_s: f64,
    pub comm_s: f64,
    pub local_s: f64,
    pub remote_s: f64,
    /// gflops / (ranks x gflops of the one-rank run in the same group);
    /// empty when the suite has no one-rank baseline for the group.
    pub efficiency: f64,
    /// Set on the first rank count in its group whose efficiency fell
    /// below one half.
    pub below_half_efficiency: bool,
}

fn csv_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

impl RunRecord {
    /// One CSV line in [`CSV_HEADER`] order (no trailing newline).
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.mode,
            self.transport,
            self.ranks,
            self.workers,
            self.matrix,
            self.n_rows,
            self.n_nz,
            self.iterations,
            csv_num(self.median_s),
            csv_num(self.min_s),
            csv_num(self.gflops),
            csv_num(self.eff_gbps_model),
            csv_num(self.model_bound_gflops),
            self.comm_bytes,
            csv_num(self.gather_s),
            csv_num(self.comm_s),
            csv_num(self.local_s),
            csv_num(self.remote_s),
            csv_num(self.efficiency),
            self.below_half_efficiency,
        );
        s
    }
}

/// Writes the pinned header plus one line per record.
pub fn write_csv<W: io::Write>(records: &[RunRecord], w: &mut W) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// The same table as a pretty JSON array (non-finite numbers become null).
pub fn records_to_json(records: &[RunRecord]) -> String {
    serde_json::to_string_pretty(records).expect("plain data serializes")
}

/// Builds the record for one finished run. `bandwidth_gbps` turns on the
/// roofline bound column; `kappa` is extra right-hand-side traffic for it.
pub fn make_record(
    cfg: &ExecConfig,
    matrix: &str,
    a: &CsrMatrix,
    outcome: &crate::engine::ExecOutcome,
    bandwidth_gbps: Option<f64>,
    kappa: f64,
) -> Result<RunRecord, BenchError> {
    let split = cfg.mode != Mode::VectorNoOverlap;
    let median_s = outcome.median_wall_s();
    let phases = outcome.phase_medians();
    let model_bound_gflops = match bandwidth_gbps {
        Some(bw) => {
            let balance = code_balance(BalanceInputs {
                n_nzr: outcome.n_nzr,
                kappa,
                split,
            })?;
            max_performance(balance, bw)?
        }
        None => f64::NAN,
    };
    Ok(RunRecord {
        mode: cfg.mode.to_string(),
        transport: cfg.transport.to_string(),
        ranks: cfg.n_ranks,
        workers: cfg.workers_per_rank,
        matrix: matrix.to_string(),
        n_rows: outcome.n_rows,
        n_nz: outcome.n_nz,
        iterations: cfg.iterations,
        median_s,
        min_s: outcome.min_wall_s(),
        gflops: outcome.gflops(),
        eff_gbps_model: model_traffic(a, split) as f64 / median_s / 1e9,
        model_bound_gflops,
        comm_bytes: outcome.comm_bytes,
        gather_s: phases.gather_s,
        comm_s: phases.comm_s,
        local_s: phases.local_s,
        remote_s: phases.remote_s,
        efficiency: f64::NAN,
        below_half_efficiency: false,
    })
}

fn ensure_matches_oracle(result: &[f64], oracle: &[f64], config: &str) -> Result<(), BenchError> {
    let gap = max_relative_gap(result, oracle);
    if gap > ORACLE_TOLERANCE {
        return Err(BenchError::OracleMismatch {
            config: config.to_string(),
            gap,
        });
    }
    Ok(())
}

/// Largest absolute difference between the vectors, relative to the largest
/// reference magnitude.
pub fn max_relative_gap(result: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(result.len(), reference.len(), "vector lengths differ");
    let scale = reference.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
    result
        .iter()
        .zip(reference)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
        / scale
}

/// A parsed suite description: one problem, the cross product of run shapes,
/// and optional model inputs.
#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub problem: ProblemSpec,
    pub modes: Vec<Mode>,
    pub ranks: Vec<usize>,
    pub workers: Vec<usize>,
    pub transport: TransportKind,
    pub iterations: usize,
    pub epoch_timeout: Duration,
    /// Turns on the roofline bound column.
    pub bandwidth_gbps: Option<f64>,
    /// Extra right-hand-side traffic in bytes per inner iteration for the
    /// bound column.
    pub kappa: f64,
}

fn parse_usize_list(value: &str) -> Result<Vec<usize>, String> {
    let items: Result<Vec<usize>, _> = value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| format!("'{t}' is not a count"))
        })
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err("expected at least one count".to_string());
    }
    if items.contains(&0) {
        return Err("counts must be at least 1".to_string());
    }
    Ok(items)
}

/// Parses the matrix-source grammar shared by spec files and the CLI:
/// `stencil7 NX NY NZ`, `blockband DIM BLOCK INNER_BAND OUTER_STRIDE
/// TARGET_NNZR`, or `market PATH`.
pub fn parse_matrix(value: &str) -> Result<MatrixSource, String> {
    let tokens: Vec<&str> = value.split_whitespace().collect();
    let usage = "expected 'stencil7 NX NY NZ', \
                 'blockband DIM BLOCK INNER_BAND OUTER_STRIDE TARGET_NNZR', \
                 or 'market PATH'";
    let dim = |t: &str| {
        t.parse::<usize>()
            .map_err(|_| format!("'{t}' is not a size; {usage}"))
    };
    match tokens.as_slice() {
        ["stencil7", nx, ny, nz] => Ok(MatrixSource::Stencil7 {
            nx: dim(nx)?,
            ny: dim(ny)?,
            nz: dim(nz)?,
        }),
        ["blockband", d, b, ib, os, t] => Ok(MatrixSource::BlockBand {
            dim: dim(d)?,
            block: dim(b)?,
            inner_band: dim(ib)?,
            outer_stride: dim(os)?,
            target_nnzr: t
                .parse::<f64>()
                .map_err(|_| format!("'{t}' is not a nonzeros-per-row target; {usage}"))?,
        }),
        ["market", rest @ ..] if !rest.is_empty() => {
            Ok(MatrixSource::MarketFile(rest.join(" ").into()))
        }
        _ => Err(usage.to_string()),
    }
}

/// Parses a right-hand-side rule: `uniform`, `ramp`, or `constant VALUE`.
pub fn parse_rhs(value: &str) -> Result<RhsInit, String> {
    let tokens: Vec<&str> = value.split_whitespace().collect();
    match tokens.as_slice() {
        ["uniform"] => Ok(RhsInit::SeededUniform),
        ["ramp"] => Ok(RhsInit::LinearRamp),
        ["constant", v] => v
            .parse::<f64>()
            .map(RhsInit::Constant)
            .map_err(|_| format!("'{v}' is not a number")),
        _ => Err("expected 'uniform', 'ramp', or 'constant VALUE'".to_string()),
    }
}

/// Parses a transport name: `in-process`, `in-process-on-wait`, `socket`,
/// `delayed-eager BASE_US PER_BYTE_NS`, or `delayed-on-wait BASE_US
/// PER_BYTE_NS` (underscores and case are normalized).
pub fn parse_transport(value: &str) -> Result<TransportKind, String> {
    let canon = value.to_ascii_lowercase().replace('_', "-");
    let tokens: Vec<&str> = canon.split_whitespace().collect();
    let usage = "expected 'in-process', 'in-process-on-wait', 'socket', \
                 'delayed-eager BASE_US PER_BYTE_NS', or 'delayed-on-wait BASE_US PER_BYTE_NS'";
    let num = |t: &str, what: &str| {
        t.parse::<f64>()
            .map_err(|_| format!("'{t}' is not a {what}; {usage}"))
    };
    match tokens.as_slice() {
        ["in-process"] => Ok(TransportKind::InProcess {
            progress: Progress::Eager,
        }),
        ["in-process-on-wait"] => Ok(TransportKind::InProcess {
            progress: Progress::OnWait,
        }),
        ["socket"] => Ok(TransportKind::Socket),
        ["delayed-eager", b, p] => Ok(TransportKind::Delayed {
            progress: Progress::Eager,
            base_latency_us: num(b, "latency in microseconds")?,
            per_byte_ns: num(p, "per-byte cost in nanoseconds")?,
        }),
        ["delayed-on-wait", b, p] => Ok(TransportKind::Delayed {
            progress: Progress::OnWait,
            base_latency_us: num(b, "latency in microseconds")?,
            per_byte_ns: num(p, "per-byte cost in nanoseconds")?,
        }),
        _ => Err(usage.to_string()),
    }
}

/// Parses a key=value suite description.
///
/// `#` starts a comment and blank lines are skipped. Keys: `matrix`
/// (required), `modes`, `ranks`, `workers`, `transport`, `iterations`,
/// `seed`, `rhs`, `bandwidth_gbps`, `kappa`, `timeout_s`. Lists take comma
/// or space separated entries. Every problem is reported at once, each
/// prefixed with its line number.
pub fn parse_bench_spec(text: &str) -> Result<BenchSpec, BenchError> {
    let mut errs: Vec<String> = Vec::new();
    let mut seen: Vec<String> = Vec::new();

    let mut matrix: Option<MatrixSource> = None;
    let mut modes = Mode::ALL.to_vec();
    let mut ranks = vec![1usize];
    let mut workers = vec![1usize];
    let mut transport = TransportKind::InProcess {
        progress: Progress::Eager,
    };
    let mut iterations = 3usize;
    let mut seed = 0u64;
    let mut rhs = RhsInit::SeededUniform;
    let mut bandwidth_gbps: Option<f64> = None;
    let mut kappa = 0.0f64;
    let mut epoch_timeout = DEFAULT_EPOCH_TIMEOUT;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errs.push(format!(
                "line {line_no}: expected KEY = VALUE, got '{line}'"
            ));
            continue;
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        if seen.contains(&key) {
            errs.push(format!("line {line_no}: duplicate key '{key}'"));
            continue;
        }
        seen.push(key.clone());
        let mut fail = |msg: String| errs.push(format!("line {line_no}: {key}: {msg}"));
        match key.as_str() {
            "matrix" => match parse_matrix(value) {
                Ok(m) => matrix = Some(m),
                Err(e) => fail(e),
            },
            "modes" => {
                let parsed: Result<Vec<Mode>, String> = value
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|t| !t.is_empty())
                    .map(Mode::from_str)
                    .collect();
                match parsed {
                    Ok(ms) if !ms.is_empty() => modes = ms,
                    Ok(_) => fail("expected at least one mode".to_string()),
                    Err(e) => fail(e),
                }
            }
            "ranks" => match parse_usize_list(value) {
                Ok(v) => ranks = v,
                Err(e) => fail(e),
            },
            "workers" => match parse_usize_list(value) {
                Ok(v) => workers = v,
                Err(e) => fail(e),
            },
            "transport" => match parse_transport(value) {
                Ok(t) => transport = t,
                Err(e) => fail(e),
            },
            "iterations" => match value.parse::<usize>() {
                Ok(n) if n >= 1 => iterations = n,
                _ => fail(format!("'{value}' is not a positive count")),
            },
            "seed" => match value.parse::<u64>() {
                Ok(s) => seed = s,
                Err(_) => fail(format!("'{value}' is not a seed")),
            },
            "rhs" => match parse_rhs(value) {
                Ok(r) => rhs = r,
                Err(e) => fail(e),
            },
            "bandwidth_gbps" => match value.parse::<f64>() {
                Ok(b) if b > 0.0 && b.is_finite() => bandwidth_gbps = Some(b),
                _ => fail(format!("'{value}' is not a positive bandwidth in GB/s")),
            },
            "kappa" => match value.parse::<f64>() {
                Ok(k) if k >= 0.0 && k.is_finite() => kappa = k,
                _ => fail(format!("'{value}' is not a nonnegative byte count")),
            },
            "timeout_s" => match value.parse::<f64>() {
                Ok(t) if t > 0.0 && t.is_finite() => epoch_timeout = Duration::from_secs_f64(t),
                _ => fail(format!("'{value}' is not a positive number of seconds")),
            },
            _ => fail("unknown key".to_string()),
        }
    }

    let Some(source) = matrix else {
        errs.push("a 'matrix' line is required".to_string());
        return Err(BenchError::Spec(errs));
    };
    if !errs.is_empty() {
        return Err(BenchError::Spec(errs));
    }
    Ok(BenchSpec {
        problem: ProblemSpec::new(source, rhs, seed),
        modes,
        ranks,
        workers,
        transport,
        iterations,
        epoch_timeout,
        bandwidth_gbps,
        kappa,
    })
}

/// Fills the efficiency column and marks, per (matrix, mode, transport,
/// workers) group ordered by rank count, the first run whose efficiency
/// dropped below one half. Efficiency compares against the group's own
/// one-rank run and stays empty without one.
pub fn annotate_efficiency(records: &mut [RunRecord]) {
    type Key = (String, String, String, usize);
    let key = |r: &RunRecord| -> Key {
        (
            r.matrix.clone(),
            r.mode.clone(),
            r.transport.clone(),
            r.workers,
        )
    };
    let mut baseline: HashMap<Key, f64> = HashMap::new();
    for r in records.iter() {
        if r.ranks == 1 {
            baseline.insert(key(r), r.gflops);
        }
    }
    let mut groups: HashMap<Key, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter_mut().enumerate() {
        let k = key(r);
        r.efficiency = match baseline.get(&k) {
            Some(&g1) if g1 > 0.0 => r.gflops / (r.ranks as f64 * g1),
            _ => f64::NAN,
        };
        r.below_half_efficiency = false;
        groups.entry(k).or_default().push(i);
    }
    for idxs in groups.values_mut() {
        idxs.sort_by_key(|&i| records[i].ranks);
        for &i in idxs.iter() {
            if records[i].efficiency.is_finite() && records[i].efficiency < 0.5 {
                records[i].below_half_efficiency = true;
                break;
            }
        }
    }
}

/// Runs the suite's full (mode x ranks x workers) cross product on the one
/// assembled problem. Every result is checked against the iterated serial
/// reference before it is recorded; the first mismatch aborts the suite and
/// names the offending configuration. Records come back with efficiency
/// annotated.
pub fn bench_suite(spec: &BenchSpec) -> Result<Vec<RunRecord>, BenchError> {
    let a = spec.problem.assemble()?;
    let b0 = spec.problem.initial_b(a.n_cols);
    let oracle = sequential_oracle(&spec.problem, spec.iterations)?;
    let name = spec.problem.name();

    let mut records = Vec::new();
    for &mode in &spec.modes {
        for &n_ranks in &spec.ranks {
            for &workers_per_rank in &spec.workers {
                let cfg = ExecConfig {
                    mode,
                    n_ranks,
                    workers_per_rank,
                    transport: spec.transport,
                    iterations: spec.iterations,
                    seed: spec.problem.seed,
                    epoch_timeout: spec.epoch_timeout,
                    debug_transport: false,
                };
                let outcome = run_on_matrix(&cfg, &a, &b0)?;
                let config = format!(
                    "matrix={name} mode={mode} transport={} ranks={n_ranks} workers={workers_per_rank}",
                    cfg.transport
                );
                ensure_matches_oracle(&outcome.result, &oracle, &config)?;
                records.push(make_record(
                    &cfg,
                    &name,
                    &a,
                    &outcome,
                    spec.bandwidth_gbps,
                    spec.kappa,
                )?);
            }
        }
    }
    annotate_efficiency(&mut records);
    Ok(records)
}
