//! In-process transport: ranks are threads sharing a mailbox mesh.
//!
//! Two knobs make this backend more than a toy. The progress model decides
//! when a transfer's cost is paid — at send time ("eager", modeling an
//! ideal asynchronous library) or only once the receiver blocks in
//! `wait_all` ("on-wait", modeling libraries that move data only while
//! library code is running). The delay model injects a deterministic
//! per-message cost (base latency plus a per-byte rate) so makespan
//! assertions about overlap can be exact rather than hopeful.

use super::transport::{ReceivedMsg, Transport, TransportError};
use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

/// When message data actually moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    /// Transfer completes `delay` after the send call, regardless of what
    /// the receiver is doing.
    Eager,
    /// Transfer starts only when both the send has happened and the
    /// receiver has entered `wait_all`; it completes `delay` later. Time a
    /// receiver spends computing between send and wait is not overlapped.
    OnWait,
}

/// Deterministic per-message delivery cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayModel {
    pub base: Duration,
    pub per_byte_ns: f64,
}

impl DelayModel {
    pub fn none() -> Self {
        DelayModel {
            base: Duration::ZERO,
            per_byte_ns: 0.0,
        }
    }

    fn for_len(&self, bytes: usize) -> Duration {
        self.base + Duration::from_nanos((self.per_byte_ns * bytes as f64) as u64)
    }
}

struct InFlight {
    from: usize,
    epoch: u32,
    payload: Vec<u8>,
    sent_at: Instant,
    delay: Duration,
}

struct Shared {
    mail: Mutex<Vec<VecDeque<InFlight>>>,
    arrived: Condvar,
    barrier: TimeoutBarrier,
}

/// Reusable barrier whose waits give up after a deadline, so one failed rank
/// cannot strand the others forever.
struct TimeoutBarrier {
    state: Mutex<(usize, u64)>, // (currently waiting, generation)
    released: Condvar,
    n: usize,
}

impl TimeoutBarrier {
    fn new(n: usize) -> Self {
        TimeoutBarrier {
            state: Mutex::new((0, 0)),
            released: Condvar::new(),
            n,
        }
    }

    fn wait(&self, timeout: Duration) -> Result<(), TransportError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.state.lock().unwrap();
        st.0 += 1;
        if st.0 == self.n {
            st.0 = 0;
            st.1 += 1;
            self.released.notify_all();
            return Ok(());
        }
        let generation = st.1;
        loop {
            let now = Instant::now();
            if now >= deadline {
                st.0 -= 1;
                return Err(TransportError::Timeout {
                    after: timeout,
                    what: "the rest of the ranks at a barrier".to_string(),
                });
            }
            st = self.released.wait_timeout(st, deadline - now).unwrap().0;
            if st.1 != generation {
                return Ok(());
            }
        }
    }
}

/// One rank's endpoint of the in-process mesh.
pub struct InProcessTransport {
    shared: Arc<Shared>,
    rank: usize,
    n_ranks: usize,
    progress: Progress,
    delay: DelayModel,
    pending: Vec<(usize, u32)>,
    timeout: Duration,
}

/// Builds the full mesh: one transport per rank, all connected.
pub fn in_process_mesh(
    n_ranks: usize,
    progress: Progress,
    delay: DelayModel,
    timeout: Duration,
) -> Vec<InProcessTransport> {
    let shared = Arc::new(Shared {
        mail: Mutex::new((0..n_ranks).map(|_| VecDeque::new()).collect()),
        arrived: Condvar::new(),
        barrier: TimeoutBarrier::new(n_ranks),
    });
    (0..n_ranks)
        .map(|rank| InProcessTransport {
            shared: Arc::clone(&shared),
            rank,
            n_ranks,
            progress,
            delay,
            pending: Vec::new(),
            timeout,
        })
        .collect()
}

impl Transport for InProcessTransport {
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
        let msg = InFlight {
            from: self.rank,
            epoch,
            payload: payload.to_vec(),
            sent_at: Instant::now(),
            delay: self.delay.for_len(payload.len()),
        };
        let mut mail = self.shared.mail.lock().unwrap();
        mail[to].push_back(msg);
        drop(mail);
        self.shared.arrived.notify_all();
        Ok(())
    }

    fn wait_all(&mut self) -> Result<Vec<ReceivedMsg>, TransportError> {
        let entry = Instant::now();
        let deadline = entry + self.timeout;
        let mut out = Vec::with_capacity(self.pending.len());
        for (from, epoch) in std::mem::take(&mut self.pending) {
            let msg = self.take_message(from, epoch, deadline)?;
            // pay the transfer cost per the progress model
            let transfer_start = match self.progress {
                Progress::Eager => msg.sent_at,
                Progress::OnWait => msg.sent_at.max(entry),
            };
            let ready_at = transfer_start + msg.delay;
            let now = Instant::now();
            if ready_at > now {
                if ready_at > deadline {
                    return Err(TransportError::Timeout {
                        after: self.timeout,
                        what: format!(
                            "the injected delivery delay of a message from rank {} at rank {}",
                            msg.from, self.rank
                        ),
                    });
                }
                std::thread::sleep(ready_at - now);
            }
            out.push(ReceivedMsg {
                from: msg.from,
                epoch: msg.epoch,
                payload: msg.payload,
            });
        }
        Ok(out)
    }

    fn barrier(&mut self) -> Result<(), TransportError> {
        self.shared.barrier.wait(self.timeout)
    }
}

impl InProcessTransport {
    /// Removes the next message from `from`; its epoch must match because
    /// per-pair ordering is guaranteed.
    fn take_message(
        &self,
        from: usize,
        epoch: u32,
        deadline: Instant,
    ) -> Result<InFlight, TransportError> {
        let mut mail = self.shared.mail.lock().unwrap();
        loop {
            let inbox = &mut mail[self.rank];
            if let Some(pos) = inbox.iter().position(|m| m.from == from) {
                let msg = inbox.remove(pos).unwrap();
                if msg.epoch != epoch {
                    return Err(TransportError::Protocol(format!(
                        "rank {} expected epoch {epoch} from rank {from} but the next message \
                         in order carries epoch {}",
                        self.rank, msg.epoch
                    )));
                }
                return Ok(msg);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::Timeout {
                    after: self.timeout,
                    what: format!(
                        "message from rank {from} (epoch {epoch}) at rank {}",
                        self.rank
                    ),
                });
            }
            let (guard, _) = self
                .shared
                .arrived
                .wait_timeout(mail, deadline - now)
                .unwrap();
            mail = guard;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::transport::{bytes_to_floats, floats_to_bytes};

    fn mesh(n: usize, progress: Progress, delay: DelayModel) -> Vec<InProcessTransport> {
        in_process_mesh(n, progress, delay, Duration::from_secs(5))
    }

    #[test]
    fn round_trip_between_two_ranks() {
        let mut ts = mesh(2, Progress::Eager, DelayModel::none());
        let mut t1 = ts.pop().unwrap();
        let mut t0 = ts.pop().unwrap();
        std::thread::scope(|s| {
            s.spawn(move || {
                t1.post_receive(0, 1).unwrap();
                t1.send(0, 1, &floats_to_bytes(&[2.5, -1.0])).unwrap();
                let msgs = t1.wait_all().unwrap();
                assert_eq!(bytes_to_floats(&msgs[0].payload).unwrap(), vec![7.0]);
            });
            t0.post_receive(1, 1).unwrap();
            t0.send(1, 1, &floats_to_bytes(&[7.0])).unwrap();
            let msgs = t0.wait_all().unwrap();
            assert_eq!(msgs.len(), 1);
            assert_eq!(msgs[0].from, 1);
            assert_eq!(msgs[0].epoch, 1);
            assert_eq!(bytes_to_floats(&msgs[0].payload).unwrap(), vec![2.5, -1.0]);
        });
    }

    #[test]
    fn per_pair_order_is_preserved() {
        let mut ts = mesh(2, Progress::Eager, DelayModel::none());
        let mut t1 = ts.pop().unwrap();
        let mut t0 = ts.pop().unwrap();
        t0.send(1, 1, b"first").unwrap();
        t0.send(1, 2, b"second").unwrap();
        t1.post_receive(0, 1).unwrap();
        t1.post_receive(0, 2).unwrap();
        let msgs = t1.wait_all().unwrap();
        assert_eq!(msgs[0].payload, b"first");
        assert_eq!(msgs[1].payload, b"second");
    }

    #[test]
    fn epoch_mismatch_is_a_protocol_error() {
        let mut ts = mesh(2, Progress::Eager, DelayModel::none());
        let mut t1 = ts.pop().unwrap();
        let mut t0 = ts.pop().unwrap();
        t0.send(1, 3, b"late").unwrap();
        t1.post_receive(0, 2).unwrap();
        assert!(matches!(t1.wait_all(), Err(TransportError::Protocol(_))));
    }

    #[test]
    fn missing_message_times_out() {
        let mut ts = in_process_mesh(
            2,
            Progress::Eager,
            DelayModel::none(),
            Duration::from_millis(30),
        );
        let mut t0 = ts.remove(0);
        t0.post_receive(1, 1).unwrap();
        match t0.wait_all() {
            Err(TransportError::Timeout { what, .. }) => {
                assert!(what.contains("rank 1"), "{what}");
            }
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    #[test]
    fn eager_delay_overlaps_with_receiver_work() {
        // sender ships at t=0 with a 60 ms delay; the receiver "computes"
        // for 60 ms before waiting, so an eager transfer is already done
        let delay = DelayModel {
            base: Duration::from_millis(60),
            per_byte_ns: 0.0,
        };
        let mut ts = mesh(2, Progress::Eager, delay);
        let mut t1 = ts.pop().unwrap();
        let mut t0 = ts.pop().unwrap();
        std::thread::scope(|s| {
            s.spawn(move || {
                t0.send(1, 1, b"payload").unwrap();
                t0.barrier().unwrap();
            });
            t1.post_receive(0, 1).unwrap();
            std::thread::sleep(Duration::from_millis(60));
            let start = Instant::now();
            t1.wait_all().unwrap();
            let waited = start.elapsed();
            assert!(waited < Duration::from_millis(30), "waited {waited:?}");
            t1.barrier().unwrap();
        });
    }

    #[test]
    fn on_wait_delay_is_paid_inside_wait_all() {
        // same timing as above, but the transfer cannot start until the
        // receiver blocks, so the full 60 ms shows up in wait_all
        let delay = DelayModel {
            base: Duration::from_millis(60),
            per_byte_ns: 0.0,
        };
        let mut ts = mesh(2, Progress::OnWait, delay);
        let mut t1 = ts.pop().unwrap();
        let mut t0 = ts.pop().unwrap();
        std::thread::scope(|s| {
            s.spawn(move || {
                t0.send(1, 1, b"payload").unwrap();
                t0.barrier().unwrap();
            });
            t1.post_receive(0, 1).unwrap();
            std::thread::sleep(Duration::from_millis(60));
            let start = Instant::now();
            t1.wait_all().unwrap();
            let waited = start.elapsed();
            assert!(waited >= Duration::from_millis(55), "waited {waited:?}");
            t1.barrier().unwrap();
        });
    }

    #[test]
    fn per_byte_delay_scales_with_payload() {
        let delay = DelayModel {
            base: Duration::ZERO,
            per_byte_ns: 1000.0, // 1 µs per byte
        };
        assert_eq!(delay.for_len(5000), Duration::from_millis(5));
        assert_eq!(DelayModel::none().for_len(1 << 20), Duration::ZERO);
    }

    #[test]
    fn barrier_synchronizes_all_ranks() {
        let ts = mesh(4, Progress::Eager, DelayModel::none());
        let counter = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|s| {
            for mut t in ts {
                let counter = &counter;
                s.spawn(move || {
                    counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    t.barrier().unwrap();
                    // after the barrier every rank must have incremented
                    assert_eq!(counter.load(std::sync::atomic::Ordering::SeqCst), 4);
                });
            }
        });
    }
}
