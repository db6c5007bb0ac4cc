//! Socket transport: ranks exchange real TCP traffic over loopback.
//!
//! Wire format, little-endian throughout:
//!
//! ```text
//! [u32 source rank][u32 epoch][u32 payload bytes][payload...]
//! ```
//!
//! Two epoch values are reserved: 0xFFFF_FFFF marks the handshake exchanged
//! once per pair before iteration 0 (payload: the 8-byte communication-plan
//! pair checksum), and 0xFFFF_FFFE marks barrier traffic (payload: one byte,
//! 0 = arrive, 1 = release). Each pair shares one TCP stream, established
//! lower-rank-connects-to-higher-rank; a reader thread per stream feeds a
//! channel the blocking calls drain.

use super::transport::{ReceivedMsg, Transport, TransportError};
use crate::plan::CommPlan;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::time::{Duration, Instant};

pub const HANDSHAKE_EPOCH: u32 = 0xFFFF_FFFF;
pub const BARRIER_EPOCH: u32 = 0xFFFF_FFFE;
const BARRIER_ARRIVE: u8 = 0;
const BARRIER_RELEASE: u8 = 1;

#[derive(Debug)]
struct Frame {
    from: u32,
    epoch: u32,
    payload: Vec<u8>,
}

fn write_frame(
    stream: &mut TcpStream,
    from: u32,
    epoch: u32,
    payload: &[u8],
) -> std::io::Result<()> {
    let mut header = [0u8; 12];
    header[0..4].copy_from_slice(&from.to_le_bytes());
    header[4..8].copy_from_slice(&epoch.to_le_bytes());
    header[8..12].copy_from_slice(&(payload.len() as u32).to_le_bytes());
    stream.write_all(&header)?;
    stream.write_all(payload)?;
    stream.flush()
}

/// Fills the first open receive slot the frame satisfies; hands the frame
/// back when nothing wants it yet.
fn claim_slot(
    pending: &[(usize, u32)],
    slots: &mut [Option<ReceivedMsg>],
    frame: Frame,
) -> Option<Frame> {
    for (&(from, epoch), slot) in pending.iter().zip(slots.iter_mut()) {
        if slot.is_none() && frame.from as usize == from && frame.epoch == epoch {
            *slot = Some(ReceivedMsg {
                from: frame.from as usize,
                epoch: frame.epoch,
                payload: frame.payload,
            });
            return None;
        }
    }
    Some(frame)
}

fn read_frame(stream: &mut TcpStream) -> std::io::Result<Frame> {
    let mut header = [0u8; 12];
    stream.read_exact(&mut header)?;
    let from = u32::from_le_bytes(header[0..4].try_into().unwrap());
    let epoch = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let len = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let mut payload = vec![0u8; len as usize];
    stream.read_exact(&mut payload)?;
    Ok(Frame {
        from,
        epoch,
        payload,
    })
}

/// One rank's endpoint of the TCP mesh.
pub struct SocketTransport {
    rank: usize,
    n_ranks: usize,
    /// Write half per peer (`None` on the own-rank slot).
    writers: Vec<Option<TcpStream>>,
    incoming: mpsc::Receiver<Frame>,
    /// Data frames that arrived while something else was awaited.
    stash: Vec<Frame>,
    /// Barrier frames that arrived early: (peer, phase byte).
    barrier_stash: Vec<(usize, u8)>,
    pending: Vec<(usize, u32)>,
    timeout: Duration,
    readers: Vec<std::thread::JoinHandle<()>>,
}

/// Builds a fully connected TCP mesh on loopback and performs the
/// handshake: every pair exchanges rank ids and communication-plan pair
/// checksums, and a mismatch aborts construction. `plans[r]` must be rank
/// r's plan.
// The loop indices are rank identities that name both sides of each pair,
// not mere positions, so indexed loops read better than iterator chains.
#[allow(clippy::needless_range_loop)]
pub fn socket_mesh(
    plans: &[CommPlan],
    timeout: Duration,
) -> Result<Vec<SocketTransport>, TransportError> {
    let n_ranks = plans.len();
    let mut listeners = Vec::with_capacity(n_ranks);
    let mut addrs = Vec::with_capacity(n_ranks);
    for _ in 0..n_ranks {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        addrs.push(listener.local_addr()?);
        listeners.push(listener);
    }

    // streams[r][q] = rank r's stream to rank q
    let mut streams: Vec<Vec<Option<TcpStream>>> = (0..n_ranks)
        .map(|_| (0..n_ranks).map(|_| None).collect())
        .collect();

    // the kernel queues connections, so all connects can be issued before
    // any accept is drained; lower rank dials, higher rank answers
    for lo in 0..n_ranks {
        for hi in lo + 1..n_ranks {
            let mut s = TcpStream::connect(addrs[hi])?;
            s.set_nodelay(true)?;
            let checksum = plans[lo].pair_checksum(hi);
            write_frame(&mut s, lo as u32, HANDSHAKE_EPOCH, &checksum.to_le_bytes())?;
            streams[lo][hi] = Some(s);
        }
    }
    for hi in 0..n_ranks {
        for _ in 0..hi {
            let (mut s, _) = listeners[hi].accept()?;
            s.set_nodelay(true)?;
            let hello = read_frame(&mut s)?;
            if hello.epoch != HANDSHAKE_EPOCH || hello.payload.len() != 8 {
                return Err(TransportError::Protocol(format!(
                    "rank {hi} expected a handshake frame, got epoch {}",
                    hello.epoch
                )));
            }
            let lo = hello.from as usize;
            let claimed = u64::from_le_bytes(hello.payload.as_slice().try_into().unwrap());
            if claimed != plans[hi].pair_checksum(lo) {
                return Err(TransportError::ChecksumMismatch { a: lo, b: hi });
            }
            let reply = plans[hi].pair_checksum(lo);
            write_frame(&mut s, hi as u32, HANDSHAKE_EPOCH, &reply.to_le_bytes())?;
            streams[hi][lo] = Some(s);
        }
    }
    // connectors read the replies
    for lo in 0..n_ranks {
        for hi in lo + 1..n_ranks {
            let s = streams[lo][hi].as_mut().unwrap();
            let reply = read_frame(s)?;
            if reply.epoch != HANDSHAKE_EPOCH || reply.payload.len() != 8 {
                return Err(TransportError::Protocol(format!(
                    "rank {lo} expected a handshake reply, got epoch {}",
                    reply.epoch
                )));
            }
            let claimed = u64::from_le_bytes(reply.payload.as_slice().try_into().unwrap());
            if claimed != plans[lo].pair_checksum(hi) {
                return Err(TransportError::ChecksumMismatch { a: lo, b: hi });
            }
        }
    }

    let mut transports = Vec::with_capacity(n_ranks);
    for (rank, row) in streams.into_iter().enumerate() {
        let (tx, rx) = mpsc::channel();
        let mut writers: Vec<Option<TcpStream>> = Vec::with_capacity(n_ranks);
        let mut readers = Vec::new();
        for stream in row {
            match stream {
                None => writers.push(None),
                Some(s) => {
                    let reader = s.try_clone()?;
                    let tx = tx.clone();
                    readers.push(std::thread::spawn(move || {
                        let mut reader = reader;
                        while let Ok(frame) = read_frame(&mut reader) {
                            if tx.send(frame).is_err() {
                                break;
                            }
                        }
                    }));
                    writers.push(Some(s));
                }
            }
        }
        transports.push(SocketTransport {
            rank,
            n_ranks,
            writers,
            incoming: rx,
            stash: Vec::new(),
            barrier_stash: Vec::new(),
            pending: Vec::new(),
            timeout,
            readers,
        });
    }
    Ok(transports)
}

impl SocketTransport {
    /// Pulls the next frame, routing early barrier frames to their stash.
    fn next_data_frame(&mut self, deadline: Instant) -> Result<Frame, TransportError> {
        loop {
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::Timeout {
                    after: self.timeout,
                    what: format!("network traffic at rank {}", self.rank),
                });
            }
            match self.incoming.recv_timeout(deadline - now) {
                Ok(frame) if frame.epoch == BARRIER_EPOCH => {
                    let phase = frame.payload.first().copied().unwrap_or(u8::MAX);
                    self.barrier_stash.push((frame.from as usize, phase));
                }
                Ok(frame) => return Ok(frame),
                Err(mpsc::RecvTimeoutError::Timeout) => continue,
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    return Err(TransportError::Protocol(format!(
                        "all peer connections to rank {} closed",
                        self.rank
                    )));
                }
            }
        }
    }

    /// Waits for one barrier frame of the given phase from `peer`.
    fn await_barrier_frame(&mut self, peer: usize, phase: u8) -> Result<(), TransportError> {
        if let Some(pos) = self
            .barrier_stash
            .iter()
            .position(|&(p, ph)| p == peer && ph == phase)
        {
            self.barrier_stash.remove(pos);
            return Ok(());
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::Timeout {
                    after: self.timeout,
                    what: format!("barrier frame from rank {peer} at rank {}", self.rank),
                });
            }
            match self.incoming.recv_timeout(deadline - now) {
                Ok(frame) if frame.epoch == BARRIER_EPOCH => {
                    let got_phase = frame.payload.first().copied().unwrap_or(u8::MAX);
                    if frame.from as usize == peer && got_phase == phase {
                        return Ok(());
                    }
                    self.barrier_stash.push((frame.from as usize, got_phase));
                }
                Ok(frame) => self.stash.push(frame),
                Err(mpsc::RecvTimeoutError::Timeout) => continue,
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    return Err(TransportError::Protocol(format!(
                        "all peer connections to rank {} closed",
                        self.rank
                    )));
                }
            }
        }
    }

    fn writer(&mut self, to: usize) -> Result<&mut TcpStream, TransportError> {
        self.writers
            .get_mut(to)
            .and_then(Option::as_mut)
            .ok_or_else(|| {
                TransportError::Protocol(format!("rank {to} is not a peer of this mesh"))
            })
    }
}

impl Transport for SocketTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn n_ranks(&self) -> usize {
        self.n_ranks
    }

    fn post_receive(&mut self, from: usize, epoch: u32) -> Result<(), TransportError> {
        self.pending.push((from, epoch));
        Ok(())
    }

    fn send(&mut self, to: usize, epoch: u32, payload: &[u8]) -> Result<(), TransportError> {
        let rank = self.rank as u32;
        let stream = self.writer(to)?;
        write_frame(stream, rank, epoch, payload)?;
        Ok(())
    }

    fn wait_all(&mut self) -> Result<Vec<ReceivedMsg>, TransportError> {
        let deadline = Instant::now() + self.timeout;
        let pending = std::mem::take(&mut self.pending);
        let mut slots: Vec<Option<ReceivedMsg>> = (0..pending.len()).map(|_| None).collect();
        let mut open = pending.len();
        // serve from the stash first, then drain the channel
        for frame in std::mem::take(&mut self.stash) {
            match claim_slot(&pending, &mut slots, frame) {
                None => open -= 1,
                Some(f) => self.stash.push(f),
            }
        }
        while open > 0 {
            let frame = self.next_data_frame(deadline)?;
            match claim_slot(&pending, &mut slots, frame) {
                None => open -= 1,
                Some(f) => self.stash.push(f),
            }
        }
        Ok(slots.into_iter().map(Option::unwrap).collect())
    }

    fn barrier(&mut self) -> Result<(), TransportError> {
        if self.n_ranks == 1 {
            return Ok(());
        }
        if self.rank == 0 {
            for peer in 1..self.n_ranks {
                self.await_barrier_frame(peer, BARRIER_ARRIVE)?;
            }
            for peer in 1..self.n_ranks {
                self.send(peer, BARRIER_EPOCH, &[BARRIER_RELEASE])?;
            }
        } else {
            self.send(0, BARRIER_EPOCH, &[BARRIER_ARRIVE])?;
            self.await_barrier_frame(0, BARRIER_RELEASE)?;
        }
        Ok(())
    }
}

impl Drop for SocketTransport {
    fn drop(&mut self) {
        for w in self.writers.iter().flatten() {
            let _ = w.shutdown(std::net::Shutdown::Both);
        }
        for handle in self.readers.drain(..) {
            let _ = handle.join();
        }
    }
}
