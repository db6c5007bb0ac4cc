//! The `overlap-spmv` command line: single runs, benchmark suites, the
//! bandwidth microbenchmark, performance-model reports, plan inspection,
//! matrix generation, and reordering.
//!
//! Exit codes: 0 on success, 1 when arguments or configuration are invalid,
//! 2 when a valid request fails while running (I/O, a result off the serial
//! reference, a transport failure). Every validation problem in a command
//! line is reported at once.

use crate::bench::{
    bench_suite, make_record, max_relative_gap, parse_bench_spec, parse_matrix, parse_rhs,
    parse_transport, triad_bench, write_csv, BenchError, ORACLE_TOLERANCE,
};
use crate::engine::{
    run_on_matrix, EngineError, ExecConfig, Mode, Progress, TransportKind, DEFAULT_EPOCH_TIMEOUT,
};
use crate::model::{balance_report, BalanceInputs, ModelError};
use crate::partition::{partition_by_nonzeros, PartitionError};
use crate::plan::{build_all_plans, exchange_volume, PlanError};
use crate::sparse::{matrix_bandwidth, permute, rcm_permutation, SparseError};
use crate::workload::{
    sequential_oracle, write_matrix_market, MarketError, MatrixSource, ProblemSpec, RhsInit,
    WorkloadError,
};
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Duration;

/// Environment variable that overrides the epoch timeout (in seconds) for
/// every run the CLI starts, taking precedence over flags and spec files.
pub const TIMEOUT_ENV: &str = "OVERLAP_SPMV_TIMEOUT";

/// A failed invocation, split by whose fault it was.
#[derive(Debug)]
pub enum CliError {
    /// The arguments or configuration were invalid (exit 1).
    Usage(String),
    /// A valid request failed while running (exit 2).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<PartitionError> for CliError {
    fn from(e: PartitionError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<SparseError> for CliError {
    fn from(e: SparseError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<MarketError> for CliError {
    fn from(e: MarketError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<WorkloadError> for CliError {
    fn from(e: WorkloadError) -> Self {
        match e {
            WorkloadError::Params(_) | WorkloadError::NonSquareFeedback { .. } => {
                CliError::Usage(e.to_string())
            }
            WorkloadError::Market(_) | WorkloadError::Sparse(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Spec(_) | BenchError::TooFewRepetitions(_) => {
                CliError::Usage(e.to_string())
            }
            BenchError::Model(m) => m.into(),
            BenchError::Engine(m) => m.into(),
            BenchError::Workload(w) => w.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

/// Runs one invocation (argv without the program name), printing the result
/// to stdout or the failure to stderr, and returns the exit code.
pub fn cli_main(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("{}", e.message());
            e.exit_code()
        }
    }
}

/// The testable core of [`cli_main`]: the text a successful invocation
/// prints, or the classified failure.
pub fn dispatch(args: &[String]) -> Result<String, CliError> {
    let Some(first) = args.first() else {
        return Err(CliError::Usage(top_usage()));
    };
    if matches!(first.as_str(), "--help" | "-h" | "help") {
        return Ok(top_usage());
    }
    let rest = &args[1..];
    match first.as_str() {
        "spmv" => cmd_spmv(rest),
        "bench" => cmd_bench(rest),
        "triad" => cmd_triad(rest),
        "model" => cmd_model(rest),
        "plan" => cmd_plan(rest),
        "gen" => cmd_gen(rest),
        "rcm" => cmd_rcm(rest),
        other => Err(CliError::Usage(format!(
            "unknown subcommand '{other}'\n\n{}",
            top_usage()
        ))),
    }
}

fn top_usage() -> String {
    format!(
        "\
overlap-spmv — distributed sparse matrix-vector multiplication benchmark

usage: overlap-spmv <subcommand> [flags]

subcommands:
  spmv    run one configuration and check it against the serial reference
  bench   run a suite spec's full cross product and emit CSV (or JSON)
  triad   STREAM-style memory-bandwidth microbenchmark
  model   code-balance / roofline report from nonzeros-per-row and kappa
  plan    show per-rank communication plans and exchange volumes
  gen     write a generated matrix to a Matrix Market file
  rcm     reorder a Matrix Market file with reverse Cuthill-McKee
{ENV_HELP}
run 'overlap-spmv <subcommand> --help' for that subcommand's flags\n"
    )
}

const ENV_HELP: &str = "\
environment:
  OVERLAP_SPMV_TIMEOUT   overrides the epoch timeout (seconds) for every run
";

const SOURCE_HELP: &str = "\
matrix sources (one positional form):
  PATH                     Matrix Market coordinate file
  stencil7 NX NY NZ        7-point Laplacian on an NX x NY x NZ grid
                           (or 'stencil7' with flags --nx --ny --nz)
  blockband DIM BLOCK INNER_BAND OUTER_STRIDE TARGET_NNZR
                           banded diagonal blocks plus seeded block fill
                           (or 'blockband' with flags --dim --block
                           --inner-band --outer-stride --nnzr)
";

const SPEC_HELP: &str = "\
spec file format (KEY = VALUE per line, '#' starts a comment):
  matrix           required; same grammar as spmv's SOURCE, e.g. 'stencil7 16 16 16'
  modes            list; default all three:
                   vector-no-overlap, vector-naive-overlap, task-mode
  ranks            list of rank counts, default 1
  workers          list of per-rank worker counts, default 1
  transport        in-process | in-process-on-wait | socket |
                   delayed-eager BASE_US PER_BYTE_NS |
                   delayed-on-wait BASE_US PER_BYTE_NS
  iterations       timed multiplications per run, default 3
  seed             default 0
  rhs              uniform | ramp | constant VALUE   (default uniform)
  bandwidth_gbps   optional; turns on the roofline bound column
  kappa            extra rhs bytes per inner iteration for the bound, default 0
  timeout_s        epoch timeout, default 60
";

struct Flag {
    long: &'static str,
    short: Option<&'static str>,
    metavar: Option<&'static str>,
    help: &'static str,
}

struct Command {
    name: &'static str,
    summary: &'static str,
    usage: &'static str,
    flags: &'static [Flag],
    extra: &'static [&'static str],
}

struct ParsedArgs {
    positionals: Vec<String>,
    values: HashMap<&'static str, String>,
    bools: HashSet<&'static str>,
}

fn help_text(cmd: &Command) -> String {
    let mut lines: Vec<(String, &str)> = Vec::new();
    for f in cmd.flags {
        let mut head = format!("  {}", f.long);
        if let Some(mv) = f.metavar {
            let _ = write!(head, " {mv}");
        }
        if let Some(s) = f.short {
            let _ = write!(head, " ({s})");
        }
        lines.push((head, f.help));
    }
    lines.push(("  --help (-h)".to_string(), "show this help"));
    let col = lines.iter().map(|(h, _)| h.len()).max().unwrap_or(0) + 3;

    let mut s = format!(
        "overlap-spmv {} — {}\n\nusage: {}\n\nflags:\n",
        cmd.name, cmd.summary, cmd.usage
    );
    for (head, help) in &lines {
        let _ = writeln!(s, "{head:col$}{help}");
    }
    for extra in cmd.extra {
        s.push('\n');
        s.push_str(extra);
    }
    s
}

fn parse_flags(args: &[String], cmd: &Command) -> Result<ParsedArgs, CliError> {
    let mut positionals = Vec::new();
    let mut values: HashMap<&'static str, String> = HashMap::new();
    let mut bools: HashSet<&'static str> = HashSet::new();
    let mut unknown: Vec<String> = Vec::new();
    let mut problems: Vec<String> = Vec::new();

    let mut i = 0;
    while i < args.len() {
        let tok = &args[i];
        i += 1;
        if tok == "--help" || tok == "-h" {
            bools.insert("--help");
            continue;
        }
        let (name_part, inline_val) = match tok.split_once('=') {
            Some((n, v)) if n.starts_with('-') => (n, Some(v.to_string())),
            _ => (tok.as_str(), None),
        };
        let is_flag_like =
            name_part.starts_with("--") || cmd.flags.iter().any(|f| f.short == Some(name_part));
        if !is_flag_like {
            positionals.push(tok.clone());
            continue;
        }
        let Some(flag) = cmd
            .flags
            .iter()
            .find(|f| f.long == name_part || f.short == Some(name_part))
        else {
            unknown.push(name_part.to_string());
            continue;
        };
        match flag.metavar {
            None => {
                if inline_val.is_some() {
                    problems.push(format!("{} takes no value", flag.long));
                }
                bools.insert(flag.long);
            }
            Some(mv) => {
                let val = match inline_val {
                    Some(v) => v,
                    None if i < args.len() => {
                        let v = args[i].clone();
                        i += 1;
                        v
                    }
                    None => {
                        problems.push(format!("{} needs a {}", flag.long, mv));
                        continue;
                    }
                };
                if values.insert(flag.long, val).is_some() {
                    problems.push(format!("{} was given more than once", flag.long));
                }
            }
        }
    }
    if !unknown.is_empty() {
        problems.insert(0, format!("unknown flags: {}", unknown.join(", ")));
    }
    if !problems.is_empty() && !bools.contains("--help") {
        return Err(usage_err(cmd, problems));
    }
    Ok(ParsedArgs {
        positionals,
        values,
        bools,
    })
}

fn usage_err(cmd: &Command, problems: Vec<String>) -> CliError {
    CliError::Usage(format!(
        "invalid 'overlap-spmv {}' invocation:\n  {}\nrun 'overlap-spmv {} --help' for usage",
        cmd.name,
        problems.join("\n  "),
        cmd.name
    ))
}

/// Typed access to parsed flag values; every conversion problem is collected
/// so one message can report them all.
struct Vals<'a> {
    parsed: &'a ParsedArgs,
    errs: Vec<String>,
}

impl<'a> Vals<'a> {
    fn new(parsed: &'a ParsedArgs) -> Self {
        Vals {
            parsed,
            errs: Vec::new(),
        }
    }

    fn get<T: FromStr>(&mut self, flag: &'static str, default: T) -> T
    where
        T::Err: std::fmt::Display,
    {
        match self.parsed.values.get(flag) {
            None => default,
            Some(raw) => match raw.parse::<T>() {
                Ok(v) => v,
                Err(e) => {
                    self.errs.push(format!("{flag}: '{raw}': {e}"));
                    default
                }
            },
        }
    }

    fn opt<T: FromStr>(&mut self, flag: &'static str) -> Option<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.parsed.values.get(flag)?;
        match raw.parse::<T>() {
            Ok(v) => Some(v),
            Err(e) => {
                self.errs.push(format!("{flag}: '{raw}': {e}"));
                None
            }
        }
    }

    fn req<T: FromStr>(&mut self, flag: &'static str) -> Option<T>
    where
        T::Err: std::fmt::Display,
    {
        if !self.parsed.values.contains_key(flag) {
            self.errs.push(format!("{flag} is required"));
            return None;
        }
        self.opt(flag)
    }

    fn get_with<T>(
        &mut self,
        flag: &'static str,
        default: T,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> T {
        match self.parsed.values.get(flag) {
            None => default,
            Some(raw) => match parse(raw) {
                Ok(v) => v,
                Err(e) => {
                    self.errs.push(format!("{flag}: {e}"));
                    default
                }
            },
        }
    }

    fn has(&self, flag: &'static str) -> bool {
        self.parsed.bools.contains(flag)
    }

    fn req_str(&mut self, flag: &'static str) -> Option<String> {
        let v = self.parsed.values.get(flag).cloned();
        if v.is_none() {
            self.errs.push(format!("{flag} is required"));
        }
        v
    }

    fn finish(self, cmd: &Command) -> Result<(), CliError> {
        if self.errs.is_empty() {
            Ok(())
        } else {
            Err(usage_err(cmd, self.errs))
        }
    }
}

/// Parses the shared SOURCE grammar: a path, or a generator either fully
/// positional or named by one positional plus dimension flags.
fn parse_source(pos: &[String], v: &mut Vals) -> Option<MatrixSource> {
    let Some(head) = pos.first() else {
        v.errs.push(
            "a matrix source is required: a Matrix Market path, 'stencil7 NX NY NZ', or \
             'blockband DIM BLOCK INNER_BAND OUTER_STRIDE TARGET_NNZR'"
                .to_string(),
        );
        return None;
    };
    match head.as_str() {
        "stencil7" if pos.len() == 1 => {
            let nx = v.req::<usize>("--nx");
            let ny = v.req::<usize>("--ny");
            let nz = v.req::<usize>("--nz");
            Some(MatrixSource::Stencil7 {
                nx: nx?,
                ny: ny?,
                nz: nz?,
            })
        }
        "blockband" if pos.len() == 1 => {
            let dim = v.req::<usize>("--dim");
            let block = v.req::<usize>("--block");
            let inner = v.req::<usize>("--inner-band");
            let outer = v.req::<usize>("--outer-stride");
            let nnzr = v.req::<f64>("--nnzr");
            Some(MatrixSource::BlockBand {
                dim: dim?,
                block: block?,
                inner_band: inner?,
                outer_stride: outer?,
                target_nnzr: nnzr?,
            })
        }
        "stencil7" | "blockband" => match parse_matrix(&pos.join(" ")) {
            Ok(src) => Some(src),
            Err(e) => {
                v.errs.push(e);
                None
            }
        },
        _ if pos.len() == 1 => Some(MatrixSource::MarketFile(head.into())),
        _ => {
            v.errs.push(format!(
                "unexpected arguments after the matrix path: {}",
                pos[1..].join(" ")
            ));
            None
        }
    }
}

fn env_timeout() -> Result<Option<Duration>, CliError> {
    let raw = match std::env::var(TIMEOUT_ENV) {
        Ok(v) => v,
        Err(std::env::VarError::NotPresent) => return Ok(None),
        Err(e) => {
            return Err(CliError::Usage(format!("{TIMEOUT_ENV}: {e}")));
        }
    };
    match raw.trim().parse::<f64>() {
        Ok(secs) if secs > 0.0 && secs.is_finite() => Ok(Some(Duration::from_secs_f64(secs))),
        _ => Err(CliError::Usage(format!(
            "{TIMEOUT_ENV} must be a positive number of seconds, got '{raw}'"
        ))),
    }
}

fn write_file(path: &str, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{path}: {e}")))
}

// ---------------------------------------------------------------- spmv ----

const SPMV_FLAGS: &[Flag] = &[
    Flag { long: "--mode", short: None, metavar: Some("MODE"), help: "vector-no-overlap | vector-naive-overlap | task-mode (default vector-no-overlap)" },
    Flag { long: "--ranks", short: None, metavar: Some("N"), help: "rank count (default 1)" },
    Flag { long: "--workers", short: None, metavar: Some("W"), help: "compute workers per rank (default 1)" },
    Flag { long: "--transport", short: None, metavar: Some("T"), help: "in-process | in-process-on-wait | socket | 'delayed-eager BASE_US PER_BYTE_NS' | 'delayed-on-wait BASE_US PER_BYTE_NS'" },
    Flag { long: "--iterations", short: None, metavar: Some("K"), help: "timed multiplications, result fed back each time (default 3)" },
    Flag { long: "--seed", short: None, metavar: Some("S"), help: "seed for generated matrices and the uniform rhs (default 0)" },
    Flag { long: "--rhs", short: None, metavar: Some("R"), help: "uniform | ramp | 'constant VALUE' (default uniform)" },
    Flag { long: "--timeout-s", short: None, metavar: Some("T"), help: "epoch timeout in seconds (default 60)" },
    Flag { long: "--bandwidth", short: None, metavar: Some("GBPS"), help: "memory bandwidth for the roofline bound line" },
    Flag { long: "--kappa", short: None, metavar: Some("K"), help: "extra rhs bytes per inner iteration for the bound (default 0)" },
    Flag { long: "--debug-transport", short: None, metavar: None, help: "log every message and check transport ordering invariants" },
    Flag { long: "--json", short: None, metavar: None, help: "emit the run record as JSON instead of text" },
    Flag { long: "--nx", short: None, metavar: Some("N"), help: "stencil7 grid size, x" },
    Flag { long: "--ny", short: None, metavar: Some("N"), help: "stencil7 grid size, y" },
    Flag { long: "--nz", short: None, metavar: Some("N"), help: "stencil7 grid size, z" },
    Flag { long: "--dim", short: None, metavar: Some("N"), help: "blockband matrix dimension" },
    Flag { long: "--block", short: None, metavar: Some("N"), help: "blockband block size (must divide --dim)" },
    Flag { long: "--inner-band", short: None, metavar: Some("N"), help: "blockband in-block band half-width" },
    Flag { long: "--outer-stride", short: None, metavar: Some("N"), help: "blockband stride between coupled blocks" },
    Flag { long: "--nnzr", short: None, metavar: Some("X"), help: "blockband target nonzeros per row" },
];

const SPMV_CMD: Command = Command {
    name: "spmv",
    summary: "run one distributed configuration and check it against the serial reference",
    usage: "overlap-spmv spmv SOURCE... [flags]",
    flags: SPMV_FLAGS,
    extra: &[SOURCE_HELP, ENV_HELP],
};

fn cmd_spmv(args: &[String]) -> Result<String, CliError> {
    let parsed = parse_flags(args, &SPMV_CMD)?;
    if parsed.bools.contains("--help") {
        return Ok(help_text(&SPMV_CMD));
    }
    let mut v = Vals::new(&parsed);
    let source = parse_source(&parsed.positionals, &mut v);
    let mode = v.get::<Mode>("--mode", Mode::VectorNoOverlap);
    let n_ranks = v.get::<usize>("--ranks", 1);
    let workers = v.get::<usize>("--workers", 1);
    let transport = v.get_with(
        "--transport",
        TransportKind::InProcess {
            progress: Progress::Eager,
        },
        parse_transport,
    );
    let iterations = v.get::<usize>("--iterations", 3);
    let seed = v.get::<u64>("--seed", 0);
    let rhs = v.get_with("--rhs", RhsInit::SeededUniform, parse_rhs);
    let timeout_s = v.opt::<f64>("--timeout-s");
    let bandwidth = v.opt::<f64>("--bandwidth");
    let kappa = v.get::<f64>("--kappa", 0.0);
    let json = v.has("--json");
    let debug = v.has("--debug-transport");
    v.finish(&SPMV_CMD)?;
    let source = source.expect("finish reported missing source");

    let mut epoch_timeout = DEFAULT_EPOCH_TIMEOUT;
    if let Some(s) = timeout_s {
        if !(s > 0.0 && s.is_finite()) {
            return Err(usage_err(
                &SPMV_CMD,
                vec![format!("--timeout-s must be positive, got {s}")],
            ));
        }
        epoch_timeout = Duration::from_secs_f64(s);
    }
    if let Some(t) = env_timeout()? {
        epoch_timeout = t;
    }

    let problem = ProblemSpec::new(source, rhs, seed);
    let a = problem.assemble()?;
    let b0 = problem.initial_b(a.n_cols);
    let oracle = sequential_oracle(&problem, iterations)?;
    let cfg = ExecConfig {
        mode,
        n_ranks,
        workers_per_rank: workers,
        transport,
        iterations,
        seed,
        epoch_timeout,
        debug_transport: debug,
    };
    let outcome = run_on_matrix(&cfg, &a, &b0)?;

    let gap = max_relative_gap(&outcome.result, &oracle);
    if gap > ORACLE_TOLERANCE {
        return Err(CliError::Runtime(format!(
            "run [matrix={} mode={mode} transport={} ranks={n_ranks} workers={workers}] \
             disagrees with the serial reference: largest relative gap {gap:.3e}",
            problem.name(),
            cfg.transport
        )));
    }
    let record = make_record(&cfg, &problem.name(), &a, &outcome, bandwidth, kappa)?;

    if json {
        let mut s = serde_json::to_string_pretty(&record).expect("plain data serializes");
        s.push('\n');
        return Ok(s);
    }
    let mut s = format!(
        "matrix {}: {} rows, {} nonzeros, {:.2} avg nonzeros/row\n",
        record.matrix, record.n_rows, record.n_nz, outcome.n_nzr
    );
    let _ = writeln!(
        s,
        "mode {}, transport {}, ranks {}, workers {}, iterations {} (+1 warm-up)",
        record.mode, record.transport, record.ranks, record.workers, record.iterations
    );
    let _ = writeln!(
        s,
        "median {:.3e} s, min {:.3e} s -> {:.3} GFlop/s, modeled traffic rate {:.3} GB/s",
        record.median_s, record.min_s, record.gflops, record.eff_gbps_model
    );
    let _ = writeln!(
        s,
        "comm {} bytes/epoch; phase medians: gather {:.3e} s, comm {:.3e} s, local {:.3e} s, remote {:.3e} s",
        record.comm_bytes, record.gather_s, record.comm_s, record.local_s, record.remote_s
    );
    if record.model_bound_gflops.is_finite() {
        let _ = writeln!(
            s,
            "model bound {:.2} GFlop/s ({:.1}% attained)",
            record.model_bound_gflops,
            100.0 * record.gflops / record.model_bound_gflops
        );
    }
    let _ = writeln!(
        s,
        "result matches the serial reference (largest relative gap {gap:.3e})"
    );
    for line in &outcome.transport_log {
        let _ = writeln!(s, "transport: {line}");
    }
    Ok(s)
}

// --------------------------------------------------------------- bench ----

const BENCH_FLAGS: &[Flag] = &[
    Flag {
        long: "--out",
        short: Some("-o"),
        metavar: Some("FILE"),
        help: "write CSV here instead of stdout",
    },
    Flag {
        long: "--json",
        short: None,
        metavar: None,
        help: "JSON mirror: to stdout, or next to --out as FILE with a .json extension",
    },
];

const BENCH_CMD: Command = Command {
    name: "bench",
    summary: "run a suite spec's (modes x ranks x workers) cross product, checking every run",
    usage: "overlap-spmv bench SPEC_FILE [flags]",
    flags: BENCH_FLAGS,
    extra: &[SPEC_HELP, ENV_HELP],
};

fn cmd_bench(args: &[String]) -> Result<String, CliError> {
    let parsed = parse_flags(args, &BENCH_CMD)?;
    if parsed.bools.contains("--help") {
        return Ok(help_text(&BENCH_CMD));
    }
    let mut v = Vals::new(&parsed);
    if parsed.positionals.len() != 1 {
        v.errs.push(format!(
            "exactly one spec file is expected, got {}",
            parsed.positionals.len()
        ));
    }
    let out = parsed.values.get("--out").cloned();
    let json = v.has("--json");
    v.finish(&BENCH_CMD)?;

    let spec_path = &parsed.positionals[0];
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| CliError::Runtime(format!("{spec_path}: {e}")))?;
    let mut spec = parse_bench_spec(&text)?;
    if let Some(t) = env_timeout()? {
        spec.epoch_timeout = t;
    }

    let records = bench_suite(&spec)?;
    let mut csv = Vec::new();
    write_csv(&records, &mut csv).expect("writing to memory cannot fail");
    let csv = String::from_utf8(csv).expect("CSV is ASCII");

    match out {
        None => {
            if json {
                let mut s = crate::bench::records_to_json(&records);
                s.push('\n');
                Ok(s)
            } else {
                Ok(csv)
            }
        }
        Some(path) => {
            write_file(&path, &csv)?;
            let mut s = format!("wrote {} validated runs to {path}\n", records.len());
            if json {
                let jpath = match path.rsplit_once('.') {
                    Some((stem, _)) => format!("{stem}.json"),
                    None => format!("{path}.json"),
                };
                let mut j = crate::bench::records_to_json(&records);
                j.push('\n');
                write_file(&jpath, &j)?;
                let _ = writeln!(s, "wrote the JSON mirror to {jpath}");
            }
            Ok(s)
        }
    }
}

// --------------------------------------------------------------- triad ----

const TRIAD_FLAGS: &[Flag] = &[
    Flag {
        long: "--length",
        short: None,
        metavar: Some("N"),
        help: "elements per array (default 100000000, about 2.4 GB total)",
    },
    Flag {
        long: "--reps",
        short: None,
        metavar: Some("R"),
        help: "timed repetitions, best is reported (default 5, minimum 3)",
    },
    Flag {
        long: "--workers",
        short: None,
        metavar: Some("W"),
        help: "concurrent chunks (default 1)",
    },
    Flag {
        long: "--json",
        short: None,
        metavar: None,
        help: "emit the result as JSON",
    },
];

const TRIAD_CMD: Command = Command {
    name: "triad",
    summary: "a[i] = b[i] + s*c[i] bandwidth microbenchmark with write-allocate correction",
    usage: "overlap-spmv triad [flags]",
    flags: TRIAD_FLAGS,
    extra: &[],
};

fn cmd_triad(args: &[String]) -> Result<String, CliError> {
    let parsed = parse_flags(args, &TRIAD_CMD)?;
    if parsed.bools.contains("--help") {
        return Ok(help_text(&TRIAD_CMD));
    }
    let mut v = Vals::new(&parsed);
    if !parsed.positionals.is_empty() {
        v.errs.push(format!(
            "unexpected arguments: {}",
            parsed.positionals.join(" ")
        ));
    }
    let length = v.get::<usize>("--length", 100_000_000);
    let reps = v.get::<usize>("--reps", 5);
    let workers = v.get::<usize>("--workers", 1);
    let json = v.has("--json");
    v.finish(&TRIAD_CMD)?;

    let r = triad_bench(length, reps, workers)?;
    if json {
        let mut s = serde_json::to_string_pretty(&r).expect("plain data serializes");
        s.push('\n');
        return Ok(s);
    }
    Ok(format!(
        "triad: {} elements x 3 arrays, {} repetitions, {} worker(s)\n\
         best pass {:.4e} s\n\
         raw       {:.2} GB/s (24 bytes per element per pass)\n\
         corrected {:.2} GB/s (x4/3 for write-allocate on the output array)\n",
        r.length, r.repetitions, workers, r.best_s, r.raw_gbps, r.corrected_gbps
    ))
}

// --------------------------------------------------------------- model ----

const MODEL_FLAGS: &[Flag] = &[
    Flag {
        long: "--nnzr",
        short: None,
        metavar: Some("X"),
        help: "average nonzeros per row (required)",
    },
    Flag {
        long: "--kappa",
        short: None,
        metavar: Some("K"),
        help: "extra rhs bytes per inner iteration (default 0)",
    },
    Flag {
        long: "--split",
        short: None,
        metavar: None,
        help: "model the two-pass (local + remote) kernel",
    },
    Flag {
        long: "--bandwidth",
        short: None,
        metavar: Some("GBPS"),
        help: "attainable memory bandwidth; adds the performance bound",
    },
    Flag {
        long: "--measured-gflops",
        short: None,
        metavar: Some("G"),
        help: "a measured rate; adds effective bandwidth and, with --bandwidth, a kappa estimate",
    },
    Flag {
        long: "--json",
        short: None,
        metavar: None,
        help: "emit the report as JSON",
    },
];

const MODEL_CMD: Command = Command {
    name: "model",
    summary: "code balance (bytes/flop) and the performance bound it implies",
    usage: "overlap-spmv model --nnzr X [flags]",
    flags: MODEL_FLAGS,
    extra: &[],
};

fn cmd_model(args: &[String]) -> Result<String, CliError> {
    let parsed = parse_flags(args, &MODEL_CMD)?;
    if parsed.bools.contains("--help") {
        return Ok(help_text(&MODEL_CMD));
    }
    let mut v = Vals::new(&parsed);
    if !parsed.positionals.is_empty() {
        v.errs.push(format!(
            "unexpected arguments: {}",
            parsed.positionals.join(" ")
        ));
    }
    let n_nzr = v.req::<f64>("--nnzr");
    let kappa = v.get::<f64>("--kappa", 0.0);
    let split = v.has("--split");
    let bandwidth = v.opt::<f64>("--bandwidth");
    let measured = v.opt::<f64>("--measured-gflops");
    let json = v.has("--json");
    v.finish(&MODEL_CMD)?;

    let inputs = BalanceInputs {
        n_nzr: n_nzr.expect("finish reported missing --nnzr"),
        kappa,
        split,
    };
    let report = balance_report(inputs, bandwidth, measured)?;
    if json {
        let mut s = serde_json::to_string_pretty(&report).expect("plain data serializes");
        s.push('\n');
        return Ok(s);
    }
    let kernel = if split { "split two-pass" } else { "unsplit" };
    let mut s = format!(
        "code balance        {:.3} bytes/flop ({kernel} kernel, {} nonzeros/row, kappa {})\n",
        report.bytes_per_flop, inputs.n_nzr, inputs.kappa
    );
    if let Some(bound) = report.predicted_max_gflops {
        let _ = writeln!(
            s,
            "performance bound   {:.2} GFlop/s at {} GB/s",
            bound,
            bandwidth.expect("bound implies bandwidth")
        );
    }
    let _ = writeln!(
        s,
        "rhs load count      {:.3} full traversals per multiplication",
        report.b_load_count
    );
    let _ = writeln!(
        s,
        "rhs extra bytes     {:.3} per row",
        report.per_row_extra_bytes
    );
    if let Some(eb) = report.effective_bandwidth {
        let _ = writeln!(
            s,
            "effective bandwidth {:.2} GB/s for the measured {} GFlop/s",
            eb,
            measured.expect("effective bandwidth implies a measurement")
        );
    }
    if let Some(k) = report.kappa_estimate {
        let _ = writeln!(s, "kappa estimate      {k:.3} bytes per inner iteration");
    }
    Ok(s)
}

// ---------------------------------------------------------------- plan ----

const PLAN_FLAGS: &[Flag] = &[
    Flag {
        long: "--ranks",
        short: None,
        metavar: Some("N"),
        help: "rank count (default 2)",
    },
    Flag {
        long: "--seed",
        short: None,
        metavar: Some("S"),
        help: "seed for generated matrices (default 0)",
    },
    Flag {
        long: "--json",
        short: None,
        metavar: None,
        help: "emit per-rank summaries and volumes as JSON",
    },
    Flag {
        long: "--nx",
        short: None,
        metavar: Some("N"),
        help: "stencil7 grid size, x",
    },
    Flag {
        long: "--ny",
        short: None,
        metavar: Some("N"),
        help: "stencil7 grid size, y",
    },
    Flag {
        long: "--nz",
        short: None,
        metavar: Some("N"),
        help: "stencil7 grid size, z",
    },
    Flag {
        long: "--dim",
        short: None,
        metavar: Some("N"),
        help: "blockband matrix dimension",
    },
    Flag {
        long: "--block",
        short: None,
        metavar: Some("N"),
        help: "blockband block size (must divide --dim)",
    },
    Flag {
        long: "--inner-band",
        short: None,
        metavar: Some("N"),
        help: "blockband in-block band half-width",
    },
    Flag {
        long: "--outer-stride",
        short: None,
        metavar: Some("N"),
        help: "blockband stride between coupled blocks",
    },
    Flag {
        long: "--nnzr",
        short: None,
        metavar: Some("X"),
        help: "blockband target nonzeros per row",
    },
];

const PLAN_CMD: Command = Command {
    name: "plan",
    summary: "partition a matrix and report each rank's communication plan",
    usage: "overlap-spmv plan SOURCE... [flags]",
    flags: PLAN_FLAGS,
    extra: &[SOURCE_HELP],
};

fn cmd_plan(args: &[String]) -> Result<String, CliError> {
    let parsed = parse_flags(args, &PLAN_CMD)?;
    if parsed.bools.contains("--help") {
        return Ok(help_text(&PLAN_CMD));
    }
    let mut v = Vals::new(&parsed);
    let source = parse_source(&parsed.positionals, &mut v);
    let n_ranks = v.get::<usize>("--ranks", 2);
    let seed = v.get::<u64>("--seed", 0);
    let json = v.has("--json");
    v.finish(&PLAN_CMD)?;
    let source = source.expect("finish reported missing source");

    let problem = ProblemSpec::new(source, RhsInit::SeededUniform, seed);
    let a = problem.assemble()?;
    let part = partition_by_nonzeros(&a, n_ranks)?;
    let plans = build_all_plans(&a, &part)?;
    let volume = exchange_volume(&plans)?;
    let summaries: Vec<_> = plans.iter().map(|p| p.summary()).collect();

    if json {
        let payload = serde_json::json!({
            "matrix": problem.name(),
            "per_rank": summaries,
            "volume": volume,
        });
        let mut s = serde_json::to_string_pretty(&payload).expect("plain data serializes");
        s.push('\n');
        return Ok(s);
    }

    let mut s = format!(
        "matrix {}: {} rows, {} nonzeros, {} ranks\n\n",
        problem.name(),
        a.n_rows,
        a.n_nz(),
        n_ranks
    );
    let _ = writeln!(
        s,
        "{:>4} {:>9} {:>11} {:>11} {:>8} {:>10} {:>10} {:>5}",
        "rank", "rows", "nnz(local)", "nnz(remote)", "halo", "sent(B)", "recv(B)", "msgs"
    );
    for p in &summaries {
        let _ = writeln!(
            s,
            "{:>4} {:>9} {:>11} {:>11} {:>8} {:>10} {:>10} {:>5}",
            p.rank,
            p.rows,
            p.nnz_local,
            p.nnz_remote,
            p.halo_len,
            p.sent_bytes,
            p.received_bytes,
            p.messages_out
        );
    }
    let raw_refs: usize = summaries.iter().map(|p| p.raw_remote_refs).sum();
    let unique: usize = summaries.iter().map(|p| p.halo_len).sum();
    let _ = writeln!(
        s,
        "\ntotal exchange {} bytes per multiplication",
        volume.total_bytes
    );
    let _ = writeln!(
        s,
        "duplicate-free halos: {raw_refs} raw remote references -> {unique} entries sent"
    );
    Ok(s)
}

// ----------------------------------------------------------------- gen ----

const GEN_FLAGS: &[Flag] = &[
    Flag {
        long: "--out",
        short: Some("-o"),
        metavar: Some("FILE"),
        help: "Matrix Market file to write (required)",
    },
    Flag {
        long: "--seed",
        short: None,
        metavar: Some("S"),
        help: "seed for blockband fill (default 0)",
    },
    Flag {
        long: "--nx",
        short: None,
        metavar: Some("N"),
        help: "stencil7 grid size, x",
    },
    Flag {
        long: "--ny",
        short: None,
        metavar: Some("N"),
        help: "stencil7 grid size, y",
    },
    Flag {
        long: "--nz",
        short: None,
        metavar: Some("N"),
        help: "stencil7 grid size, z",
    },
    Flag {
        long: "--dim",
        short: None,
        metavar: Some("N"),
        help: "blockband matrix dimension",
    },
    Flag {
        long: "--block",
        short: None,
        metavar: Some("N"),
        help: "blockband block size (must divide --dim)",
    },
    Flag {
        long: "--inner-band",
        short: None,
        metavar: Some("N"),
        help: "blockband in-block band half-width",
    },
    Flag {
        long: "--outer-stride",
        short: None,
        metavar: Some("N"),
        help: "blockband stride between coupled blocks",
    },
    Flag {
        long: "--nnzr",
        short: None,
        metavar: Some("X"),
        help: "blockband target nonzeros per row",
    },
];

const GEN_CMD: Command = Command {
    name: "gen",
    summary: "generate a matrix and write it as a Matrix Market file",
    usage: "overlap-spmv gen (stencil7|blockband) [dims...] -o FILE [flags]",
    flags: GEN_FLAGS,
    extra: &[SOURCE_HELP],
};

fn cmd_gen(args: &[String]) -> Result<String, CliError> {
    let parsed = parse_flags(args, &GEN_CMD)?;
    if parsed.bools.contains("--help") {
        return Ok(help_text(&GEN_CMD));
    }
    let mut v = Vals::new(&parsed);
    let source = parse_source(&parsed.positionals, &mut v);
    if let Some(MatrixSource::MarketFile(_)) = source {
        v.errs.push(
            "gen needs a generator ('stencil7' or 'blockband'), not an existing file".to_string(),
        );
    }
    let out = v.req_str("--out");
    let seed = v.get::<u64>("--seed", 0);
    v.finish(&GEN_CMD)?;
    let source = source.expect("finish reported missing source");
    let out = out.expect("finish reported missing --out");

    let problem = ProblemSpec::new(source, RhsInit::SeededUniform, seed);
    let a = problem.assemble()?;
    write_matrix_market(&out, &a)?;
    Ok(format!(
        "wrote {} to {out}: {} rows, {} nonzeros\n",
        problem.name(),
        a.n_rows,
        a.n_nz()
    ))
}

// ----------------------------------------------------------------- rcm ----

const RCM_FLAGS: &[Flag] = &[
    Flag {
        long: "--out",
        short: Some("-o"),
        metavar: Some("FILE"),
        help: "Matrix Market file for the reordered matrix (required)",
    },
    Flag {
        long: "--json",
        short: None,
        metavar: None,
        help: "emit sizes and bandwidths as JSON",
    },
];

const RCM_CMD: Command = Command {
    name: "rcm",
    summary: "symmetrically reorder a Matrix Market file with reverse Cuthill-McKee",
    usage: "overlap-spmv rcm IN_FILE -o OUT_FILE [flags]",
    flags: RCM_FLAGS,
    extra: &[],
};

fn cmd_rcm(args: &[String]) -> Result<String, CliError> {
    let parsed = parse_flags(args, &RCM_CMD)?;
    if parsed.bools.contains("--help") {
        return Ok(help_text(&RCM_CMD));
    }
    let mut v = Vals::new(&parsed);
    if parsed.positionals.len() != 1 {
        v.errs.push(format!(
            "exactly one input file is expected, got {}",
            parsed.positionals.len()
        ));
    }
    let out = v.req_str("--out");
    let json = v.has("--json");
    v.finish(&RCM_CMD)?;
    let out = out.expect("finish reported missing --out");

    let input = &parsed.positionals[0];
    let problem = ProblemSpec::new(
        MatrixSource::MarketFile(input.into()),
        RhsInit::SeededUniform,
        0,
    );
    let a = problem.assemble()?;
    let p = rcm_permutation(&a)?;
    let reordered = permute(&a, &p)?;
    let before = matrix_bandwidth(&a);
    let after = matrix_bandwidth(&reordered);
    write_matrix_market(&out, &reordered)?;

    if json {
        let payload = serde_json::json!({
            "rows": a.n_rows,
            "nnz": a.n_nz(),
            "bandwidth_before": before,
            "bandwidth_after": after,
            "out": out,
        });
        let mut s = serde_json::to_string_pretty(&payload).expect("plain data serializes");
        s.push('\n');
        return Ok(s);
    }
    Ok(format!(
        "rcm: {} rows, {} nonzeros\nbandwidth {before} -> {after}\nwrote the reordered matrix to {out}\n",
        a.n_rows,
        a.n_nz()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::CSV_HEADER;

    fn run(args: &[&str]) -> Result<String, CliError> {
        let owned: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        dispatch(&owned)
    }

    #[test]
    fn no_arguments_print_usage_and_exit_one() {
        match run(&[]) {
            Err(e @ CliError::Usage(_)) => {
                assert_eq!(e.exit_code(), 1);
                assert!(e.message().contains("usage"), "{}", e.message());
                for sub in ["spmv", "bench", "triad", "model", "plan", "gen", "rcm"] {
                    assert!(e.message().contains(sub), "usage must list {sub}");
                }
            }
            other => panic!("expected a usage error, got {other:?}"),
        }
    }

    #[test]
    fn every_subcommand_documents_itself() {
        assert!(run(&["--help"]).unwrap().contains(TIMEOUT_ENV));
        for sub in ["spmv", "bench", "triad", "model", "plan", "gen", "rcm"] {
            let text = run(&[sub, "--help"]).unwrap();
            assert!(text.contains("usage:"), "{sub}: {text}");
            assert!(text.contains("--help"), "{sub} must document --help");
        }
        // --help wins even when the rest of the line is nonsense
        assert!(run(&["model", "--help", "--bogus"]).is_ok());
    }

    #[test]
    fn unknown_flags_are_listed_together() {
        match run(&["triad", "--frobnicate", "--wibble", "3"]) {
            Err(e @ CliError::Usage(_)) => {
                assert!(e.message().contains("--frobnicate"), "{}", e.message());
                assert!(e.message().contains("--wibble"), "{}", e.message());
            }
            other => panic!("expected a usage error, got {other:?}"),
        }
    }

    #[test]
    fn bad_values_are_collected_into_one_report() {
        match run(&[
            "spmv",
            "stencil7",
            "4",
            "4",
            "4",
            "--ranks",
            "zero",
            "--mode",
            "sideways",
            "--iterations",
            "-2",
        ]) {
            Err(e @ CliError::Usage(_)) => {
                let m = e.message();
                assert!(m.contains("--ranks"), "{m}");
                assert!(m.contains("--mode"), "{m}");
                assert!(m.contains("--iterations"), "{m}");
            }
            other => panic!("expected a usage error, got {other:?}"),
        }
    }

    #[test]
    fn model_reports_the_documented_balance_and_bound() {
        let text = run(&[
            "model",
            "--nnzr",
            "15",
            "--kappa",
            "0",
            "--bandwidth",
            "18.1",
        ])
        .unwrap();
        assert!(text.contains("balance"), "{text}");
        assert!(text.contains("6.800 bytes/flop"), "{text}");
        assert!(text.contains("bound"), "{text}");
        assert!(text.contains("2.66 GFlop/s"), "{text}");
    }

    #[test]
    fn model_json_mirror_round_trips() {
        let text = run(&["model", "--nnzr", "6", "--kappa", "2", "--split", "--json"]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["inputs"]["split"], true);
        let expected = 6.0 + 20.0 / 6.0 + 1.0;
        assert!((v["bytes_per_flop"].as_f64().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn gen_then_spmv_round_trip_matches_the_reference() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mtx");
        let path = path.to_str().unwrap();

        let text = run(&[
            "gen", "stencil7", "--nx", "3", "--ny", "3", "--nz", "3", "-o", path,
        ])
        .unwrap();
        assert!(text.contains("27 rows"), "{text}");

        let text = run(&["spmv", path, "--ranks", "2", "--mode", "task"]).unwrap();
        assert!(text.contains("matches the serial reference"), "{text}");
        assert!(text.contains("task-mode"), "{text}");
    }

    #[test]
    fn spmv_json_is_one_run_record() {
        let text = run(&["spmv", "stencil7", "4", "4", "2", "--ranks", "2", "--json"]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["ranks"], 2);
        assert_eq!(v["matrix"], "stencil7-4x4x2");
        assert_eq!(v["mode"], "vector-no-overlap");
        assert!(v["gflops"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn bench_writes_csv_and_a_json_mirror() {
        let dir = tempfile::tempdir().unwrap();
        let spec = dir.path().join("suite.txt");
        std::fs::write(
            &spec,
            "matrix = stencil7 4 4 2\nmodes = vector\nranks = 1, 2\niterations = 1\n",
        )
        .unwrap();
        let out = dir.path().join("runs.csv");

        let text = run(&[
            "bench",
            spec.to_str().unwrap(),
            "-o",
            out.to_str().unwrap(),
            "--json",
        ])
        .unwrap();
        assert!(text.contains("wrote 2 validated runs"), "{text}");

        let csv = std::fs::read_to_string(&out).unwrap();
        assert!(csv.starts_with(CSV_HEADER), "{csv}");
        assert_eq!(csv.lines().count(), 3);

        let json = std::fs::read_to_string(dir.path().join("runs.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 2);
    }

    #[test]
    fn bench_without_an_output_file_prints_the_csv() {
        let dir = tempfile::tempdir().unwrap();
        let spec = dir.path().join("suite.txt");
        std::fs::write(
            &spec,
            "matrix = stencil7 4 4 2\nmodes = task\nranks = 1\niterations = 1\n",
        )
        .unwrap();
        let text = run(&["bench", spec.to_str().unwrap()]).unwrap();
        assert!(text.starts_with(CSV_HEADER), "{text}");
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn bench_spec_problems_exit_with_code_one() {
        let dir = tempfile::tempdir().unwrap();
        let spec = dir.path().join("bad.txt");
        std::fs::write(&spec, "ranks = many\n").unwrap();
        match run(&["bench", spec.to_str().unwrap()]) {
            Err(e @ CliError::Usage(_)) => {
                assert_eq!(e.exit_code(), 1);
                assert!(e.message().contains("line 1"), "{}", e.message());
                assert!(e.message().contains("matrix"), "{}", e.message());
            }
            other => panic!("expected a usage error, got {other:?}"),
        }
    }

    #[test]
    fn a_missing_input_file_is_a_runtime_failure() {
        match run(&["spmv", "/nonexistent/matrix.mtx"]) {
            Err(e @ CliError::Runtime(_)) => assert_eq!(e.exit_code(), 2),
            other => panic!("expected a runtime error, got {other:?}"),
        }
        match run(&[
            "rcm",
            "/nonexistent/matrix.mtx",
            "-o",
            "/tmp/unused-out.mtx",
        ]) {
            Err(e @ CliError::Runtime(_)) => assert_eq!(e.exit_code(), 2),
            other => panic!("expected a runtime error, got {other:?}"),
        }
    }

    #[test]
    fn triad_text_and_json_agree_on_the_correction() {
        let text = run(&["triad", "--length", "20000", "--reps", "3"]).unwrap();
        assert!(text.contains("corrected"), "{text}");

        let text = run(&["triad", "--length", "20000", "--reps", "3", "--json"]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let raw = v["raw_gbps"].as_f64().unwrap();
        let corrected = v["corrected_gbps"].as_f64().unwrap();
        assert_eq!(corrected, raw * (4.0 / 3.0));
    }

    #[test]
    fn plan_reports_every_rank_and_the_total_volume() {
        let text = run(&["plan", "stencil7", "4", "4", "4", "--ranks", "3"]).unwrap();
        assert!(text.contains("total exchange"), "{text}");
        assert!(text.contains("duplicate-free"), "{text}");

        let text = run(&["plan", "stencil7", "4", "4", "4", "--ranks", "3", "--json"]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["per_rank"].as_array().unwrap().len(), 3);
        assert!(v["volume"]["total_bytes"].as_u64().unwrap() > 0);
    }

    #[test]
    fn rcm_round_trips_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.mtx");
        let output = dir.path().join("out.mtx");
        run(&[
            "gen",
            "stencil7",
            "3",
            "4",
            "5",
            "-o",
            input.to_str().unwrap(),
        ])
        .unwrap();

        let text = run(&[
            "rcm",
            input.to_str().unwrap(),
            "-o",
            output.to_str().unwrap(),
            "--json",
        ])
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["rows"], 60);
        assert!(v["bandwidth_after"].as_u64().unwrap() <= v["bandwidth_before"].as_u64().unwrap());

        // the reordered file is itself a valid input
        let text = run(&["spmv", output.to_str().unwrap(), "--ranks", "2"]).unwrap();
        assert!(text.contains("matches the serial reference"), "{text}");
    }

    #[test]
    fn the_timeout_environment_variable_is_validated() {
        std::env::set_var(TIMEOUT_ENV, "45");
        let ok = run(&["spmv", "stencil7", "3", "3", "2", "--iterations", "1"]);
        std::env::set_var(TIMEOUT_ENV, "not-a-number");
        let bad = run(&["spmv", "stencil7", "3", "3", "2", "--iterations", "1"]);
        std::env::remove_var(TIMEOUT_ENV);

        assert!(ok.is_ok(), "{ok:?}");
        match bad {
            Err(e @ CliError::Usage(_)) => {
                assert!(e.message().contains(TIMEOUT_ENV), "{}", e.message())
            }
            other => panic!("expected a usage error, got {other:?}"),
        }
    }

    #[test]
    fn flag_values_support_the_equals_form_and_reject_duplicates() {
        let text = run(&["model", "--nnzr=15", "--bandwidth=18.1"]).unwrap();
        assert!(text.contains("2.66 GFlop/s"), "{text}");

        match run(&["model", "--nnzr", "15", "--nnzr", "7"]) {
            Err(e @ CliError::Usage(_)) => {
                assert!(e.message().contains("more than once"), "{}", e.message())
            }
            other => panic!("expected a usage error, got {other:?}"),
        }
    }
}
