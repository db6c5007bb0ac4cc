//! Distributed execution of repeated sparse matrix-vector multiplications.
//!
//! A run puts one rank on one thread, gives each rank its communication plan
//! and its slice of the vectors, and drives all ranks through lock-stepped
//! epochs over a pluggable [`Transport`]. Three schemes are implemented:
//!
//! * **vector, no overlap** — exchange the halo first, then run the unsplit
//!   kernel over the combined local+halo matrix;
//! * **vector, naive overlap** — issue nonblocking sends, run the local
//!   kernel, then wait and run the remote kernel; whether any overlap really
//!   happens is decided entirely by the transport's progress behavior;
//! * **task mode** — a dedicated communication agent runs the transport while
//!   compute workers gather, compute the local part, and finish the remote
//!   part once the agent signals the halo is in place. Overlap is guaranteed
//!   by construction.
//!
//! Epoch 0 is an untimed warm-up; epochs 1..=N are timed. Each timed epoch
//! is fenced by barriers, and the result of epoch k feeds back as the input
//! of epoch k+1 outside the timed window, matching the serial reference loop.

pub mod debug;
pub mod in_process;
pub mod socket;
pub mod transport;

pub use debug::{DebugState, DebugTransport};
pub use in_process::{in_process_mesh, DelayModel, InProcessTransport, Progress};
pub use socket::{socket_mesh, SocketTransport};
pub use transport::{bytes_to_floats, floats_to_bytes, ReceivedMsg, Transport, TransportError};

use crate::partition::{partition_by_nonzeros, PartitionError};
use crate::plan::{build_all_plans, exchange_volume, CommPlan, PlanError};
use crate::sparse::{
    balanced_row_cuts, spmv_chunked_accumulate, spmv_chunked_into, CsrMatrix, DenseVector,
    SparseError,
};
use crate::workload::{ProblemSpec, WorkloadError};
use serde::Serialize;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};
use thiserror::Error;

/// How long one epoch may block before the deadlock guard trips.
pub const DEFAULT_EPOCH_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("rank {rank} failed during {phase}: {source}")]
    Transport {
        rank: usize,
        phase: &'static str,
        source: TransportError,
    },
    #[error("transport setup failed: {0}")]
    Setup(#[from] TransportError),
    #[error(
        "epoch {epoch} timed out on rank {rank} after {after:?}; last states:\n  {}",
        .states.join("\n  ")
    )]
    EpochTimeout {
        rank: usize,
        epoch: usize,
        after: Duration,
        states: Vec<String>,
    },
    #[error("rank {rank} epoch {epoch}: a cooperating thread failed first")]
    PeerFailure { rank: usize, epoch: usize },
    #[error("a rank thread panicked: {0}")]
    RankPanic(String),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

/// The three execution schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    VectorNoOverlap,
    VectorNaiveOverlap,
    TaskMode,
}

impl Mode {
    pub const ALL: [Mode; 3] = [
        Mode::VectorNoOverlap,
        Mode::VectorNaiveOverlap,
        Mode::TaskMode,
    ];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::VectorNoOverlap => "vector-no-overlap",
            Mode::VectorNaiveOverlap => "vector-naive-overlap",
            Mode::TaskMode => "task-mode",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let canon = s.trim().to_ascii_lowercase().replace('_', "-");
        match canon.as_str() {
            "vector" | "no-overlap" | "vector-no-overlap" => Ok(Mode::VectorNoOverlap),
            "naive" | "naive-overlap" | "vector-naive-overlap" => Ok(Mode::VectorNaiveOverlap),
            "task" | "task-mode" => Ok(Mode::TaskMode),
            _ => Err(format!(
                "unknown mode '{s}'; expected one of vector-no-overlap (vector, no-overlap), \
                 vector-naive-overlap (naive, naive-overlap), task-mode (task)"
            )),
        }
    }
}

/// Which message layer carries the halo exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransportKind {
    /// Shared-memory mailboxes with a chosen progress model and no delay.
    InProcess { progress: Progress },
    /// Real TCP sockets over loopback.
    Socket,
    /// Shared-memory mailboxes with injected delivery cost.
    Delayed {
        progress: Progress,
        base_latency_us: f64,
        per_byte_ns: f64,
    },
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransportKind::InProcess {
                progress: Progress::Eager,
            } => "in-process",
            TransportKind::InProcess {
                progress: Progress::OnWait,
            } => "in-process-on-wait",
            TransportKind::Socket => "socket",
            TransportKind::Delayed {
                progress: Progress::Eager,
                ..
            } => "delayed-eager",
            TransportKind::Delayed {
                progress: Progress::OnWait,
                ..
            } => "delayed-on-wait",
        })
    }
}

/// Everything a benchmark run needs besides the problem itself.
#[derive(Debug, Clone)]
pub struct ExecConfig {
    pub mode: Mode,
    pub n_ranks: usize,
    /// Compute workers per rank. Task mode adds its communication agent on
    /// top of these.
    pub workers_per_rank: usize,
    pub transport: TransportKind,
    /// Timed multiplications; one untimed warm-up runs before them.
    pub iterations: usize,
    pub seed: u64,
    pub epoch_timeout: Duration,
    /// Wrap every endpoint in the logging/asserting debug layer.
    pub debug_transport: bool,
}

impl ExecConfig {
    pub fn new(mode: Mode) -> Self {
        ExecConfig {
            mode,
            n_ranks: 1,
            workers_per_rank: 1,
            transport: TransportKind::InProcess {
                progress: Progress::Eager,
            },
            iterations: 1,
            seed: 0,
            epoch_timeout: DEFAULT_EPOCH_TIMEOUT,
            debug_transport: false,
        }
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<(), EngineError> {
        let mut errs = Vec::new();
        if self.n_ranks == 0 {
            errs.push("rank count must be at least 1".to_string());
        }
        if self.workers_per_rank == 0 {
            errs.push("worker count per rank must be at least 1".to_string());
        }
        if self.iterations == 0 {
            errs.push("iteration count must be at least 1".to_string());
        }
        if self.epoch_timeout.is_zero() {
            errs.push("epoch timeout must be positive".to_string());
        }
        if let TransportKind::Delayed {
            base_latency_us,
            per_byte_ns,
            ..
        } = self.transport
        {
            if !base_latency_us.is_finite() || base_latency_us < 0.0 {
                errs.push(format!(
                    "base latency must be a nonnegative number of microseconds, got {base_latency_us}"
                ));
            }
            if !per_byte_ns.is_finite() || per_byte_ns < 0.0 {
                errs.push(format!(
                    "per-byte cost must be a nonnegative number of nanoseconds, got {per_byte_ns}"
                ));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(EngineError::Config(errs))
        }
    }
}

/// Per-epoch phase breakdown of one rank, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EpochSample {
    /// Barrier to barrier, the rank's view of the epoch makespan.
    pub wall_s: f64,
    /// Copying owned entries into the send staging buffers.
    pub gather_s: f64,
    /// Posting receives, sending, waiting, and scattering the halo.
    pub comm_s: f64,
    /// Kernel pass over owned columns (the whole kernel when unsplit).
    pub local_s: f64,
    /// Kernel pass over halo columns.
    pub remote_s: f64,
}

/// One rank's mutable execution state.
pub struct RankRuntime {
    pub rank: usize,
    pub plan: Arc<CommPlan>,
    /// Input vector in kernel numbering: owned entries, then the halo.
    pub x: Vec<f64>,
    /// This rank's slice of the result.
    pub c: Vec<f64>,
    /// Send staging buffers, one per destination rank.
    pub staging: Vec<Vec<f64>>,
    pub workers: usize,
    pub epoch_timeout: Duration,
    /// One sample per timed epoch, filled by the runners.
    pub samples: Vec<EpochSample>,
}

impl RankRuntime {
    /// Sizes every buffer to the plan and loads the rank's slice of `b`.
    pub fn new(
        plan: Arc<CommPlan>,
        b_global: &[f64],
        workers: usize,
        epoch_timeout: Duration,
    ) -> Self {
        let local_len = plan.local_len();
        let mut x = Vec::with_capacity(local_len + plan.halo_len);
        x.extend_from_slice(&b_global[plan.row_begin..plan.row_end]);
        x.resize(local_len + plan.halo_len, 0.0);
        let c = vec![0.0; local_len];
        let staging = plan.send_to.iter().map(|s| vec![0.0; s.len()]).collect();
        RankRuntime {
            rank: plan.my_rank,
            plan,
            x,
            c,
            staging,
            workers,
            epoch_timeout,
            samples: Vec::new(),
        }
    }

    /// Copies the owned entries each peer needs into its staging buffer.
    fn gather(&mut self) {
        let RankRuntime {
            plan, x, staging, ..
        } = self;
        for (buf, idxs) in staging.iter_mut().zip(&plan.send_to) {
            for (slot, &ix) in buf.iter_mut().zip(idxs) {
                *slot = x[ix];
            }
        }
    }

    /// Places received payloads into the halo section of `x`.
    fn scatter(&mut self, msgs: &[ReceivedMsg]) -> Result<(), TransportError> {
        let local_len = self.plan.local_len();
        for m in msgs {
            let floats = bytes_to_floats(&m.payload)?;
            let expected = self.plan.recv_from[m.from].len();
            if floats.len() != expected {
                return Err(TransportError::Protocol(format!(
                    "rank {} expected {expected} halo values from rank {} but got {}",
                    self.rank,
                    m.from,
                    floats.len()
                )));
            }
            let at = local_len + self.plan.halo_offset[m.from];
            self.x[at..at + floats.len()].copy_from_slice(&floats);
        }
        Ok(())
    }

    /// Feeds the epoch's result back as the next input.
    fn feedback(&mut self) {
        let local_len = self.plan.local_len();
        self.x[..local_len].copy_from_slice(&self.c);
    }
}

fn terr(rank: usize, phase: &'static str) -> impl Fn(TransportError) -> EngineError {
    move |source| EngineError::Transport {
        rank,
        phase,
        source,
    }
}

/// Exchange-then-compute: the halo is fully in place before the one unsplit
/// kernel pass over the combined matrix runs. Bitwise equal to the serial
/// kernel at any rank and worker count, because each row keeps its original
/// entry order.
pub fn run_vector_no_overlap(
    rt: &mut RankRuntime,
    t: &mut dyn Transport,
    iterations: usize,
) -> Result<(), EngineError> {
    run_vector(rt, t, iterations, false)
}

/// Nonblocking sends are issued before the local kernel pass, and the wait
/// sits between the local and remote passes. The transport's progress model
/// decides whether any transfer actually happens during the local pass.
pub fn run_vector_naive_overlap(
    rt: &mut RankRuntime,
    t: &mut dyn Transport,
    iterations: usize,
) -> Result<(), EngineError> {
    run_vector(rt, t, iterations, true)
}

fn run_vector(
    rt: &mut RankRuntime,
    t: &mut dyn Transport,
    iterations: usize,
    split: bool,
) -> Result<(), EngineError> {
    let rank = rt.rank;
    let local_len = rt.plan.local_len();
    rt.samples.clear();
    for epoch in 0..=iterations {
        if epoch >= 2 {
            rt.feedback();
        }
        t.barrier().map_err(terr(rank, "epoch-start barrier"))?;
        let wall0 = Instant::now();
        let mut sample = EpochSample::default();
        let mut comm = Duration::ZERO;

        let t0 = Instant::now();
        for src in 0..t.n_ranks() {
            if !rt.plan.recv_from[src].is_empty() {
                t.post_receive(src, epoch as u32)
                    .map_err(terr(rank, "posting receives"))?;
            }
        }
        comm += t0.elapsed();

        let t0 = Instant::now();
        rt.gather();
        sample.gather_s = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        for dst in 0..t.n_ranks() {
            if !rt.plan.send_to[dst].is_empty() {
                t.send(dst, epoch as u32, &floats_to_bytes(&rt.staging[dst]))
                    .map_err(terr(rank, "sending the halo"))?;
            }
        }
        comm += t0.elapsed();

        if split {
            let t0 = Instant::now();
            spmv_chunked_into(&rt.plan.a_local, &rt.x[..local_len], rt.workers, &mut rt.c)?;
            sample.local_s = t0.elapsed().as_secs_f64();

            let t0 = Instant::now();
            let msgs = t.wait_all().map_err(terr(rank, "waiting for the halo"))?;
            rt.scatter(&msgs)
                .map_err(terr(rank, "scattering the halo"))?;
            comm += t0.elapsed();

            let t0 = Instant::now();
            spmv_chunked_accumulate(&rt.plan.a_remote, &rt.x[local_len..], rt.workers, &mut rt.c)?;
            sample.remote_s = t0.elapsed().as_secs_f64();
        } else {
            let t0 = Instant::now();
            let msgs = t.wait_all().map_err(terr(rank, "waiting for the halo"))?;
            rt.scatter(&msgs)
                .map_err(terr(rank, "scattering the halo"))?;
            comm += t0.elapsed();

            let t0 = Instant::now();
            spmv_chunked_into(&rt.plan.a_combined, &rt.x, rt.workers, &mut rt.c)?;
            sample.local_s = t0.elapsed().as_secs_f64();
        }

        sample.comm_s = comm.as_secs_f64();
        t.barrier().map_err(terr(rank, "epoch-end barrier"))?;
        sample.wall_s = wall0.elapsed().as_secs_f64();
        if epoch > 0 {
            rt.samples.push(sample);
        }
    }
    Ok(())
}

/// Three-phase signals between the communication agent and the workers.
struct Coord {
    state: Mutex<CoordState>,
    /// Workers notify: all staging buffers are filled.
    ready: Condvar,
    /// Agent notifies: every outgoing message is on the wire.
    sent: Condvar,
    /// Agent notifies: the halo is scattered.
    halo: Condvar,
}

struct CoordState {
    buffers_ready: usize,
    sends_posted: bool,
    halo_done: bool,
    failed: bool,
    /// Last reported state per party; slot 0 is the agent, slot 1+w worker w.
    notes: Vec<String>,
}

impl Coord {
    fn new(workers: usize) -> Self {
        Coord {
            state: Mutex::new(CoordState {
                buffers_ready: 0,
                sends_posted: false,
                halo_done: false,
                failed: false,
                notes: vec!["starting".to_string(); workers + 1],
            }),
            ready: Condvar::new(),
            sent: Condvar::new(),
            halo: Condvar::new(),
        }
    }

    fn note(&self, who: usize, what: &str) {
        self.state.lock().unwrap().notes[who] = what.to_string();
    }

    /// Wakes everyone so nobody keeps waiting for a party that has failed.
    fn fail(&self, who: usize, what: &str) {
        let mut st = self.state.lock().unwrap();
        st.failed = true;
        st.notes[who] = what.to_string();
        self.ready.notify_all();
        self.sent.notify_all();
        self.halo.notify_all();
    }

    fn wait(
        &self,
        cv: &Condvar,
        mut done: impl FnMut(&CoordState) -> bool,
        rank: usize,
        epoch: usize,
        timeout: Duration,
    ) -> Result<(), EngineError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.state.lock().unwrap();
        loop {
            if done(&st) {
                return Ok(());
            }
            if st.failed {
                return Err(EngineError::PeerFailure { rank, epoch });
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(EngineError::EpochTimeout {
                    rank,
                    epoch,
                    after: timeout,
                    states: st.notes.clone(),
                });
            }
            st = cv.wait_timeout(st, deadline - now).unwrap().0;
        }
    }
}

/// Forward-order dot products over a row range, writing one output per row.
fn rows_into(a: &CsrMatrix, row_begin: usize, b: &[f64], out: &mut [f64]) {
    for (slot, r) in out.iter_mut().zip(row_begin..) {
        let (cols, vals) = a.row(r);
        let mut acc = 0.0;
        for (&c, &v) in cols.iter().zip(vals) {
            acc += v * b[c as usize];
        }
        *slot = acc;
    }
}

/// Same traversal, accumulating into the outputs.
fn rows_accumulate(a: &CsrMatrix, row_begin: usize, b: &[f64], out: &mut [f64]) {
    for (slot, r) in out.iter_mut().zip(row_begin..) {
        let (cols, vals) = a.row(r);
        let mut acc = 0.0;
        for (&c, &v) in cols.iter().zip(vals) {
            acc += v * b[c as usize];
        }
        *slot += acc;
    }
}

/// One communication agent (the calling thread) plus `rt.workers` compute
/// workers. Workers gather the staging buffers and signal the agent; the
/// agent sends, waits, scatters the halo, and signals back; workers overlap
/// their local kernel pass with the agent's communication and finish with
/// the remote pass. Worker row chunks come from the local block's nonzero
/// balance and are reused for the remote pass, so every row has exactly one
/// writer.
pub fn run_task_mode(
    rt: &mut RankRuntime,
    t: &mut dyn Transport,
    iterations: usize,
) -> Result<(), EngineError> {
    let rank = rt.rank;
    let workers = rt.workers;
    let local_len = rt.plan.local_len();
    let cuts = balanced_row_cuts(&rt.plan.a_local.row_ptr, workers)?;
    let dests: Vec<usize> = (0..rt.plan.n_ranks)
        .filter(|&q| !rt.plan.send_to[q].is_empty())
        .collect();
    // contiguous dest groups, one per worker (possibly empty)
    let dest_groups: Vec<Vec<usize>> = (0..workers)
        .map(|w| dests[w * dests.len() / workers..(w + 1) * dests.len() / workers].to_vec())
        .collect();
    rt.samples.clear();

    for epoch in 0..=iterations {
        if epoch >= 2 {
            rt.feedback();
        }
        t.barrier().map_err(terr(rank, "epoch-start barrier"))?;
        let wall0 = Instant::now();

        let plan: &CommPlan = &rt.plan;
        let timeout = rt.epoch_timeout;
        let staging: Vec<Mutex<Vec<f64>>> = std::mem::take(&mut rt.staging)
            .into_iter()
            .map(Mutex::new)
            .collect();
        let (owned, halo) = rt.x.split_at_mut(local_len);
        let owned: &[f64] = owned;
        let halo_lock = RwLock::new(halo);
        let mut c_chunks: Vec<&mut [f64]> = Vec::with_capacity(workers);
        {
            let mut rest: &mut [f64] = &mut rt.c;
            for w in 0..workers {
                let (head, tail) = rest.split_at_mut(cuts[w + 1] - cuts[w]);
                c_chunks.push(head);
                rest = tail;
            }
        }
        let coord = Coord::new(workers);

        type WorkerTimes = (Duration, Duration, Duration);
        let (agent_result, worker_results): (
            Result<Duration, EngineError>,
            Vec<Result<WorkerTimes, EngineError>>,
        ) = std::thread::scope(|s| {
            let handles: Vec<_> = c_chunks
                .into_iter()
                .enumerate()
                .map(|(w, chunk)| {
                    let coord = &coord;
                    let staging = &staging;
                    let halo_lock = &halo_lock;
                    let my_dests = &dest_groups[w];
                    let row0 = cuts[w];
                    s.spawn(move || -> Result<WorkerTimes, EngineError> {
                        let me = 1 + w;
                        coord.note(me, "gathering send buffers");
                        let t0 = Instant::now();
                        for &q in my_dests {
                            let mut buf = staging[q].lock().unwrap();
                            for (slot, &ix) in buf.iter_mut().zip(&plan.send_to[q]) {
                                *slot = owned[ix];
                            }
                        }
                        let gather_d = t0.elapsed();
                        {
                            let mut st = coord.state.lock().unwrap();
                            st.buffers_ready += 1;
                            st.notes[me] = "waiting for sends to go out".to_string();
                            coord.ready.notify_all();
                        }
                        // Hold the local pass until the agent has put every
                        // message on the wire. The transfers are the epoch's
                        // critical path: on an oversubscribed machine a
                        // compute burst here could otherwise hog the core for
                        // a scheduler quantum while the agent still sits on
                        // unsent buffers, delaying the entire exchange.
                        coord.wait(&coord.sent, |st| st.sends_posted, rank, epoch, timeout)?;
                        coord.note(me, "local kernel pass");

                        let t0 = Instant::now();
                        rows_into(&plan.a_local, row0, owned, chunk);
                        let local_d = t0.elapsed();

                        coord.note(me, "waiting for the halo");
                        coord.wait(&coord.halo, |st| st.halo_done, rank, epoch, timeout)?;

                        coord.note(me, "remote kernel pass");
                        let t0 = Instant::now();
                        {
                            let halo_guard = halo_lock.read().unwrap();
                            rows_accumulate(&plan.a_remote, row0, &halo_guard[..], chunk);
                        }
                        let remote_d = t0.elapsed();
                        coord.note(me, "epoch done");
                        Ok((gather_d, local_d, remote_d))
                    })
                })
                .collect();

            // the calling thread is the communication agent
            let agent = (|| -> Result<Duration, EngineError> {
                let mut comm = Duration::ZERO;
                coord.note(0, "posting receives");
                let t0 = Instant::now();
                for src in 0..t.n_ranks() {
                    if !plan.recv_from[src].is_empty() {
                        t.post_receive(src, epoch as u32)
                            .map_err(terr(rank, "posting receives"))?;
                    }
                }
                comm += t0.elapsed();

                coord.note(0, "waiting for send buffers");
                coord.wait(
                    &coord.ready,
                    |st| st.buffers_ready == workers,
                    rank,
                    epoch,
                    timeout,
                )?;

                coord.note(0, "sending the halo");
                let t0 = Instant::now();
                for &dst in &dests {
                    let buf = staging[dst].lock().unwrap();
                    t.send(dst, epoch as u32, &floats_to_bytes(&buf))
                        .map_err(terr(rank, "sending the halo"))?;
                }
                // Rendezvous before releasing the workers: every rank's
                // messages are on the wire once this returns, so no rank's
                // compute burst can sit in front of another rank's sends on
                // a shared core. This is what makes the overlap guarantee
                // hold no matter how threads and cores line up.
                t.barrier()
                    .map_err(terr(rank, "confirming the exchange started"))?;
                {
                    let mut st = coord.state.lock().unwrap();
                    st.sends_posted = true;
                    coord.sent.notify_all();
                }

                coord.note(0, "waiting for the halo");
                let msgs = t.wait_all().map_err(terr(rank, "waiting for the halo"))?;

                coord.note(0, "scattering the halo");
                {
                    let mut halo_guard = halo_lock.write().unwrap();
                    for m in &msgs {
                        let floats = bytes_to_floats(&m.payload)
                            .map_err(terr(rank, "scattering the halo"))?;
                        let expected = plan.recv_from[m.from].len();
                        if floats.len() != expected {
                            return Err(EngineError::Transport {
                                rank,
                                phase: "scattering the halo",
                                source: TransportError::Protocol(format!(
                                    "rank {rank} expected {expected} halo values from rank {} but got {}",
                                    m.from,
                                    floats.len()
                                )),
                            });
                        }
                        let at = plan.halo_offset[m.from];
                        halo_guard[at..at + floats.len()].copy_from_slice(&floats);
                    }
                }
                comm += t0.elapsed();
                {
                    let mut st = coord.state.lock().unwrap();
                    st.halo_done = true;
                    st.notes[0] = "epoch done".to_string();
                    coord.halo.notify_all();
                }
                Ok(comm)
            })();
            if agent.is_err() {
                coord.fail(0, "failed; aborting the epoch");
            }
            let worker_results: Vec<_> = handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|p| Err(EngineError::RankPanic(panic_message(p))))
                })
                .collect();
            (agent, worker_results)
        });

        rt.staging = staging
            .into_iter()
            .map(|m| m.into_inner().unwrap())
            .collect();

        // surface the most informative error: anything beats PeerFailure
        let mut errors = Vec::new();
        let mut agent_comm = Duration::ZERO;
        match agent_result {
            Ok(d) => agent_comm = d,
            Err(e) => errors.push(e),
        }
        let mut worker_times = Vec::new();
        for r in worker_results {
            match r {
                Ok(t) => worker_times.push(t),
                Err(e) => errors.push(e),
            }
        }
        if !errors.is_empty() {
            let pos = errors
                .iter()
                .position(|e| !matches!(e, EngineError::PeerFailure { .. }))
                .unwrap_or(0);
            return Err(errors.swap_remove(pos));
        }

        let mut sample = EpochSample {
            comm_s: agent_comm.as_secs_f64(),
            ..EpochSample::default()
        };
        for (g, l, r) in worker_times {
            sample.gather_s = sample.gather_s.max(g.as_secs_f64());
            sample.local_s = sample.local_s.max(l.as_secs_f64());
            sample.remote_s = sample.remote_s.max(r.as_secs_f64());
        }
        t.barrier().map_err(terr(rank, "epoch-end barrier"))?;
        sample.wall_s = wall0.elapsed().as_secs_f64();
        if epoch > 0 {
            rt.samples.push(sample);
        }
    }
    Ok(())
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "opaque panic payload".to_string()
    }
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct ExecOutcome {
    /// The gathered result vector after the final timed epoch.
    pub result: DenseVector,
    /// samples[r][k] = rank r's timers for timed epoch k.
    pub per_rank_samples: Vec<Vec<EpochSample>>,
    /// Per timed epoch, the slowest rank's wall time.
    pub epoch_walls: Vec<f64>,
    /// Total bytes exchanged per multiplication, from the plans.
    pub comm_bytes: u64,
    pub n_rows: usize,
    pub n_nz: usize,
    pub n_nzr: f64,
    /// Per-message lines when the debug transport was on.
    pub transport_log: Vec<String>,
}

impl ExecOutcome {
    pub fn median_wall_s(&self) -> f64 {
        median(&self.epoch_walls)
    }

    pub fn min_wall_s(&self) -> f64 {
        self.epoch_walls
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Flop rate of the median epoch: two flops per stored nonzero.
    pub fn gflops(&self) -> f64 {
        2.0 * self.n_nz as f64 / self.median_wall_s() / 1e9
    }

    /// Per-phase medians over epochs of the slowest rank's phase time.
    pub fn phase_medians(&self) -> EpochSample {
        let epochs = self.epoch_walls.len();
        let collect = |f: fn(&EpochSample) -> f64| -> Vec<f64> {
            (0..epochs)
                .map(|k| {
                    self.per_rank_samples
                        .iter()
                        .map(|s| f(&s[k]))
                        .fold(0.0, f64::max)
                })
                .collect()
        };
        EpochSample {
            wall_s: median(&self.epoch_walls),
            gather_s: median(&collect(|s| s.gather_s)),
            comm_s: median(&collect(|s| s.comm_s)),
            local_s: median(&collect(|s| s.local_s)),
            remote_s: median(&collect(|s| s.remote_s)),
        }
    }
}

/// Median of a nonempty slice; the mean of the middle pair when even.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of an empty slice");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

fn make_mesh(cfg: &ExecConfig, plans: &[CommPlan]) -> Result<Vec<Box<dyn Transport>>, EngineError> {
    let boxed = |v: Vec<InProcessTransport>| -> Vec<Box<dyn Transport>> {
        v.into_iter()
            .map(|t| Box::new(t) as Box<dyn Transport>)
            .collect()
    };
    let mesh = match cfg.transport {
        TransportKind::InProcess { progress } => boxed(in_process_mesh(
            cfg.n_ranks,
            progress,
            DelayModel::none(),
            cfg.epoch_timeout,
        )),
        TransportKind::Delayed {
            progress,
            base_latency_us,
            per_byte_ns,
        } => boxed(in_process_mesh(
            cfg.n_ranks,
            progress,
            DelayModel {
                base: Duration::from_secs_f64(base_latency_us * 1e-6),
                per_byte_ns,
            },
            cfg.epoch_timeout,
        )),
        TransportKind::Socket => socket_mesh(plans, cfg.epoch_timeout)?
            .into_iter()
            .map(|t| Box::new(t) as Box<dyn Transport>)
            .collect(),
    };
    Ok(mesh)
}

/// Runs the full distributed benchmark: assembles the problem, partitions by
/// nonzeros, builds every rank's plan and transport endpoint, executes one
/// warm-up epoch plus `cfg.iterations` timed epochs on one thread per rank,
/// and gathers results and timers.
pub fn run_benchmark(cfg: &ExecConfig, problem: &ProblemSpec) -> Result<ExecOutcome, EngineError> {
    cfg.validate()?;
    let a = problem.assemble()?;
    let b0 = problem.initial_b(a.n_cols);
    run_on_matrix(cfg, &a, &b0)
}

/// Same as [`run_benchmark`] but on an already-assembled matrix and start
/// vector.
pub fn run_on_matrix(
    cfg: &ExecConfig,
    a: &CsrMatrix,
    b0: &[f64],
) -> Result<ExecOutcome, EngineError> {
    cfg.validate()?;
    let part = partition_by_nonzeros(a, cfg.n_ranks)?;
    let plans = build_all_plans(a, &part)?;
    let volume = exchange_volume(&plans)?;
    let mesh = make_mesh(cfg, &plans)?;

    let debug_state = cfg.debug_transport.then(DebugState::new);
    let mesh: Vec<Box<dyn Transport>> = match &debug_state {
        Some(state) => mesh
            .into_iter()
            .map(|t| Box::new(DebugTransport::new(t, Arc::clone(state))) as Box<dyn Transport>)
            .collect(),
        None => mesh,
    };

    let mut runtimes: Vec<RankRuntime> = plans
        .into_iter()
        .map(|p| RankRuntime::new(Arc::new(p), b0, cfg.workers_per_rank, cfg.epoch_timeout))
        .collect();

    let mode = cfg.mode;
    let iterations = cfg.iterations;
    let rank_results: Vec<Result<(), EngineError>> = std::thread::scope(|s| {
        let handles: Vec<_> = runtimes
            .iter_mut()
            .zip(mesh)
            .map(|(rt, mut t)| {
                s.spawn(move || match mode {
                    Mode::VectorNoOverlap => run_vector_no_overlap(rt, &mut t, iterations),
                    Mode::VectorNaiveOverlap => run_vector_naive_overlap(rt, &mut t, iterations),
                    Mode::TaskMode => run_task_mode(rt, &mut t, iterations),
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|p| Err(EngineError::RankPanic(panic_message(p))))
            })
            .collect()
    });
    let mut errors: Vec<EngineError> = rank_results.into_iter().filter_map(Result::err).collect();
    if !errors.is_empty() {
        // prefer a root-cause error over knock-on timeouts and peer failures
        let pos = errors
            .iter()
            .position(|e| {
                !matches!(
                    e,
                    EngineError::PeerFailure { .. } | EngineError::EpochTimeout { .. }
                )
            })
            .or_else(|| {
                errors
                    .iter()
                    .position(|e| !matches!(e, EngineError::PeerFailure { .. }))
            })
            .unwrap_or(0);
        return Err(errors.swap_remove(pos));
    }

    let mut result = vec![0.0; a.n_rows];
    for rt in &runtimes {
        result[rt.plan.row_begin..rt.plan.row_end].copy_from_slice(&rt.c);
    }
    let per_rank_samples: Vec<Vec<EpochSample>> =
        runtimes.iter().map(|rt| rt.samples.clone()).collect();
    let epoch_walls: Vec<f64> = (0..iterations)
        .map(|k| {
            per_rank_samples
                .iter()
                .map(|s| s[k].wall_s)
                .fold(0.0, f64::max)
        })
        .collect();

    Ok(ExecOutcome {
        result,
        per_rank_samples,
        epoch_walls,
        comm_bytes: volume.total_bytes,
        n_rows: a.n_rows,
        n_nz: a.n_nz(),
        n_nzr: a.nnzr(),
        transport_log: debug_state.map(|s| s.take_log()).unwrap_or_default(),
    })
}
