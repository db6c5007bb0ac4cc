//! Debug wrapper around any transport: logs one line per delivered message
//! and asserts epoch discipline across the whole mesh.
//!
//! Checked invariants:
//! * per (src, dst) pair, data epochs never decrease;
//! * a rank never sends epoch k+1 while one of its own receives for epoch k
//!   is still outstanding.

use super::transport::{ReceivedMsg, Transport, TransportError};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

/// State shared by every wrapped endpoint of one mesh.
pub struct DebugState {
    origin: Instant,
    /// (src, dst, epoch, seq-within-pair) -> enqueue time, µs from origin.
    enqueued: Mutex<HashMap<(usize, usize, u32, u64), u128>>,
    /// Monotone per-pair send counter, keyed by (src, dst).
    sent_count: Mutex<HashMap<(usize, usize), u64>>,
    /// Per-pair count of messages already delivered, keyed by (src, dst).
    delivered_count: Mutex<HashMap<(usize, usize), u64>>,
    /// Highest data epoch seen per (src, dst).
    last_epoch: Mutex<HashMap<(usize, usize), u32>>,
    log: Mutex<Vec<String>>,
}

impl DebugState {
    pub fn new() -> Arc<Self> {
        Arc::new(DebugState {
            origin: Instant::now(),
            enqueued: Mutex::new(HashMap::new()),
            sent_count: Mutex::new(HashMap::new()),
            delivered_count: Mutex::new(HashMap::new()),
            last_epoch: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
        })
    }

    /// Drains the collected log lines in delivery order.
    pub fn take_log(&self) -> Vec<String> {
        std::mem::take(&mut self.log.lock().unwrap())
    }

    fn micros(&self) -> u128 {
        self.origin.elapsed().as_micros()
    }
}

impl Default for DebugState {
    fn default() -> Self {
        DebugState {
            origin: Instant::now(),
            enqueued: Mutex::new(HashMap::new()),
            sent_count: Mutex::new(HashMap::new()),
            delivered_count: Mutex::new(HashMap::new()),
            last_epoch: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
        }
    }
}

/// A transport that forwards to `inner` while recording and checking.
pub struct DebugTransport<T: Transport> {
    inner: T,
    state: Arc<DebugState>,
    /// Receives posted since the last wait_all: (from, epoch).
    outstanding: Vec<(usize, u32)>,
}

impl<T: Transport> DebugTransport<T> {
    pub fn new(inner: T, state: Arc<DebugState>) -> Self {
        DebugTransport {
            inner,
            state,
            outstanding: Vec::new(),
        }
    }

    pub fn into_inner(self) -> T {
        self.inner
    }
}

impl<T: Transport> Transport for DebugTransport<T> {
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    fn n_ranks(&self) -> usize {
        self.inner.n_ranks()
    }

    fn post_receive(&mut self, from: usize, epoch: u32) -> Result<(), TransportError> {
        self.outstanding.push((from, epoch));
        self.inner.post_receive(from, epoch)
    }

    fn send(&mut self, to: usize, epoch: u32, payload: &[u8]) -> Result<(), TransportError> {
        let src = self.inner.rank();
        if let Some(&(_, open_epoch)) = self
            .outstanding
            .iter()
            .find(|&&(_, open_epoch)| epoch > open_epoch)
        {
            return Err(TransportError::EpochViolation(format!(
                "rank {src} sent epoch {epoch} to rank {to} while a receive for \
                 epoch {open_epoch} was still outstanding"
            )));
        }
        {
            let mut last = self.state.last_epoch.lock().unwrap();
            if let Some(&prev) = last.get(&(src, to)) {
                if epoch < prev {
                    return Err(TransportError::EpochViolation(format!(
                        "rank {src} sent epoch {epoch} to rank {to} after \
                         already sending epoch {prev}"
                    )));
                }
            }
            last.insert((src, to), epoch);
        }
        let seq = {
            let mut counts = self.state.sent_count.lock().unwrap();
            let c = counts.entry((src, to)).or_insert(0);
            let seq = *c;
            *c += 1;
            seq
        };
        let now = self.state.micros();
        self.state
            .enqueued
            .lock()
            .unwrap()
            .insert((src, to, epoch, seq), now);
        self.inner.send(to, epoch, payload)
    }

    fn wait_all(&mut self) -> Result<Vec<ReceivedMsg>, TransportError> {
        let msgs = self.inner.wait_all()?;
        let dst = self.inner.rank();
        let deliver = self.state.micros();
        for m in &msgs {
            let seq = {
                let mut counts = self.state.delivered_count.lock().unwrap();
                let c = counts.entry((m.from, dst)).or_insert(0);
                let seq = *c;
                *c += 1;
                seq
            };
            let enqueue = self
                .state
                .enqueued
                .lock()
                .unwrap()
                .remove(&(m.from, dst, m.epoch, seq));
            let enqueue = enqueue
                .map(|t| t.to_string())
                .unwrap_or_else(|| "?".to_string());
            self.state.log.lock().unwrap().push(format!(
                "epoch={} src={} dst={} bytes={} enqueue_us={} deliver_us={}",
                m.epoch,
                m.from,
                dst,
                m.payload.len(),
                enqueue,
                deliver
            ));
        }
        self.outstanding.clear();
        Ok(msgs)
    }

    fn barrier(&mut self) -> Result<(), TransportError> {
        self.inner.barrier()
    }
}
