//! The message layer the engine runs on.
//!
//! A transport is a reliable duplex channel mesh between ranks with exactly
//! four operations: post a receive (nonblocking), send (nonblocking), wait
//! for all posted receives, and a collective barrier. Payloads are
//! uninterpreted byte sequences; messages between a fixed rank pair arrive
//! in the order they were sent.
//!
//! Where and when bytes actually move is the interesting part: the
//! in-process backend makes transfer progress either "eager" (at send time)
//! or "on-wait" (only once the receiver blocks in [`Transport::wait_all`]),
//! which is precisely the behavioral difference that decides whether naive
//! communication/computation overlap helps at all.

use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("plan checksum mismatch between rank {a} and rank {b}: the ranks were built from different communication plans")]
    ChecksumMismatch { a: usize, b: usize },
    #[error("epoch safety violated: {0}")]
    EpochViolation(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("timed out after {after:?} waiting for {what}")]
    Timeout { after: Duration, what: String },
}

/// A message handed back by [`Transport::wait_all`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedMsg {
    pub from: usize,
    pub epoch: u32,
    pub payload: Vec<u8>,
}

/// Duplex message channel between ranks. One instance per rank; calls that
/// are collective (barrier) must be made by every rank.
pub trait Transport: Send {
    fn rank(&self) -> usize;
    fn n_ranks(&self) -> usize;

    /// Registers the expectation of one message from `from` tagged with
    /// `epoch`. Returns immediately.
    fn post_receive(&mut self, from: usize, epoch: u32) -> Result<(), TransportError>;

    /// Queues one message. Returns immediately; delivery timing is the
    /// backend's business.
    fn send(&mut self, to: usize, epoch: u32, payload: &[u8]) -> Result<(), TransportError>;

    /// Blocks until every posted receive has been fulfilled and returns the
    /// messages in posting order.
    fn wait_all(&mut self) -> Result<Vec<ReceivedMsg>, TransportError>;

    /// Collective synchronization point across all ranks.
    fn barrier(&mut self) -> Result<(), TransportError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn rank(&self) -> usize {
        (**self).rank()
    }
    fn n_ranks(&self) -> usize {
        (**self).n_ranks()
    }
    fn post_receive(&mut self, from: usize, epoch: u32) -> Result<(), TransportError> {
        (**self).post_receive(from, epoch)
    }
    fn send(&mut self, to: usize, epoch: u32, payload: &[u8]) -> Result<(), TransportError> {
        (**self).send(to, epoch, payload)
    }
    fn wait_all(&mut self) -> Result<Vec<ReceivedMsg>, TransportError> {
        (**self).wait_all()
    }
    fn barrier(&mut self) -> Result<(), TransportError> {
        (**self).barrier()
    }
}

/// Serializes a float slice as little-endian bytes for the wire.
pub fn floats_to_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`floats_to_bytes`]; the length must be a multiple of 8.
pub fn bytes_to_floats(bytes: &[u8]) -> Result<Vec<f64>, TransportError> {
    if !bytes.len().is_multiple_of(8) {
        return Err(TransportError::Protocol(format!(
            "payload of {} bytes is not a whole number of 8-byte reals",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_serialization_round_trips_bitwise() {
        let values = vec![0.0, -0.0, 1.5, f64::MIN_POSITIVE, 1e308, -3.25];
        let back = bytes_to_floats(&floats_to_bytes(&values)).unwrap();
        assert_eq!(values.len(), back.len());
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn ragged_payloads_are_rejected() {
        assert!(bytes_to_floats(&[1, 2, 3]).is_err());
        assert!(bytes_to_floats(&[]).unwrap().is_empty());
    }
}
