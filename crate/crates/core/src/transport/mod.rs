//! Message delivery between parties: an in-process simulated network with a
//! bandwidth model, and a TCP backend. Both encrypt every payload with the
//! configured pairwise channel cipher and meter every byte into a
//! [`CostLedger`].

mod cipher;
mod driver;
mod ledger;
mod sim;
mod tcp;
pub mod wire;

pub use cipher::{decrypt_payload, encrypt_payload, ChannelConfig, ChannelKey, Cipher, KeyStore};
pub use driver::{run_local, run_threaded, PartyOutcome};
pub use ledger::{CostLedger, CostPhase, PartyCosts, Traffic, TrafficClass, SERVER};
pub use sim::{SimEndpoint, SimNetwork};
pub use tcp::{TcpEndpoint, TcpNetwork};

use std::io;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocols::{MessageKind, PartyId, ProtocolError, ProtocolMessage, Trace};
use crate::ring::{RingModulus, RingVector};
use wire::FrameHeader;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("unknown peer {0}")]
    UnknownPeer(PartyId),
    #[error("no channel key for {from} -> {to}")]
    MissingKey { from: PartyId, to: PartyId },
    #[error("channel error: {0}")]
    Channel(String),
    #[error("ciphertext failed authentication")]
    Authentication,
    #[error("malformed frame: {0}")]
    Frame(String),
    #[error("transport configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("timed out waiting for messages")]
    Timeout,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

impl From<io::Error> for TransportError {
    fn from(e: io::Error) -> Self {
        TransportError::Io(e.to_string())
    }
}

/// Link model for simulated transfer time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthModel {
    /// Bits per second.
    pub rate: f64,
    /// Fixed per-message latency in seconds.
    pub latency: f64,
}

impl Default for BandwidthModel {
    fn default() -> Self {
        Self { rate: 1e9, latency: 0.0 }
    }
}

impl BandwidthModel {
    pub fn new(rate: f64, latency: f64) -> Result<Self, TransportError> {
        if !(rate > 0.0 && rate.is_finite()) || !(latency >= 0.0) {
            return Err(TransportError::Config(format!("invalid bandwidth model rate={rate} latency={latency}")));
        }
        Ok(Self { rate, latency })
    }

    pub fn transfer_seconds(&self, bits: u64) -> f64 {
        bits as f64 / self.rate + self.latency
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeliveryReceipt {
    pub payload_bits: u64,
    pub ciphertext_bits: u64,
    /// Bandwidth-model time charged to the sender.
    pub sim_seconds: f64,
}

/// One party's attachment to a network.
pub trait Endpoint: Send {
    fn id(&self) -> PartyId;

    fn send(&mut self, msg: &ProtocolMessage) -> Result<DeliveryReceipt, TransportError>;

    /// Waits up to `timeout` for the next message; `Ok(None)` on timeout.
    fn recv(&mut self, timeout: Duration) -> Result<Option<ProtocolMessage>, TransportError>;
}

pub(crate) fn traffic_class(kind: MessageKind) -> TrafficClass {
    if kind.is_broadcast() {
        TrafficClass::Broadcast
    } else {
        TrafficClass::Protocol
    }
}

/// Encrypts a message body for the wire. Returns the sealed bytes and the
/// time spent encrypting.
pub(crate) fn seal(
    msg: &ProtocolMessage,
    config: &ChannelConfig,
    keys: &KeyStore,
    counter: u64,
) -> Result<(FrameHeader, Vec<u8>, f64), TransportError> {
    let header = FrameHeader::of(msg);
    let body = msg.payload.body_bytes();
    let key = match config.cipher {
        Cipher::None => ChannelKey([0; 16]),
        _ => keys.get(msg.from, msg.to).ok_or(TransportError::MissingKey { from: msg.from, to: msg.to })?,
    };
    let t = Instant::now();
    let ct = encrypt_payload(&body, config.cipher, &key, counter, &header.aad());
    Ok((header, ct, t.elapsed().as_secs_f64()))
}

/// Decrypts a received frame back into a message. Returns the message and
/// the time spent decrypting.
pub(crate) fn open(
    header: &FrameHeader,
    ciphertext: &[u8],
    config: &ChannelConfig,
    keys: &KeyStore,
    modulus: RingModulus,
) -> Result<(ProtocolMessage, f64), TransportError> {
    let key = match config.cipher {
        Cipher::None => ChannelKey([0; 16]),
        _ => keys
            .get(header.from, header.to)
            .ok_or(TransportError::MissingKey { from: header.from, to: header.to })?,
    };
    let t = Instant::now();
    let body = decrypt_payload(ciphertext, config.cipher, &key, &header.aad())?;
    let secs = t.elapsed().as_secs_f64();
    let payload = RingVector::from_body_bytes(modulus, &body).map_err(|e| TransportError::Frame(e.to_string()))?;
    let msg = ProtocolMessage {
        kind: header.kind,
        session: header.session,
        round: header.round,
        segment: header.segment,
        from: header.from,
        to: header.to,
        payload,
    };
    Ok((msg, secs))
}

/// Replays a trace against a bandwidth model and cipher without moving any
/// bytes. Transfer time is charged to the sending party, except for
/// transfers from [`SERVER`], which are charged to the receiver.
pub fn simulate_session(trace: &Trace, bandwidth: &BandwidthModel, cipher: Cipher) -> CostLedger {
    let mut ledger = CostLedger::new();
    for r in &trace.records {
        let ct_bits = cipher.ciphertext_len(r.payload_bytes as usize) as u64 * 8;
        // ciphertext is never counted below the logical payload size
        let ct_bits = ct_bits.max(r.payload_bits);
        ledger.record_transfer(r.from, r.to, traffic_class(r.kind), r.payload_bits, ct_bits);
        let payer = if r.from == SERVER { r.to } else { r.from };
        ledger.add_sim_comm(payer, bandwidth.transfer_seconds(ct_bits));
    }
    ledger
}

/// Trace of one non-private distributed SGD step: every party uploads its
/// `params × bits` gradient to a server and downloads the aggregate.
pub fn non_private_trace(n: usize, params: usize, modulus: RingModulus) -> Trace {
    let mut trace = Trace::new(Vec::new());
    let payload = RingVector::zeros(modulus, params);
    for i in 0..n as u32 {
        for (kind, from, to) in [(MessageKind::PartialSum, PartyId(i), SERVER), (MessageKind::Result, SERVER, PartyId(i))] {
            trace.record(&ProtocolMessage {
                kind,
                session: crate::protocols::SessionId([0; 16]),
                round: 0,
                segment: 0,
                from,
                to,
                payload: payload.clone(),
            });
        }
    }
    trace.complete = true;
    trace
}
