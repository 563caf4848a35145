use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::wire::FrameHeader;
use super::{
    open, seal, traffic_class, BandwidthModel, ChannelConfig, CostLedger, CostPhase, DeliveryReceipt, Endpoint,
    KeyStore, TransportError,
};
use crate::protocols::{MessageKind, PartyId, ProtocolMessage, Trace};
use crate::ring::RingModulus;

struct Frame {
    header: FrameHeader,
    ciphertext: Vec<u8>,
}

struct Inner {
    inboxes: Vec<VecDeque<Frame>>,
    ledger: CostLedger,
    trace: Trace,
    /// Flip one payload bit of the next message of this kind (fault hook).
    fault: Option<MessageKind>,
}

struct Shared {
    n: usize,
    modulus: RingModulus,
    config: ChannelConfig,
    keys: KeyStore,
    bandwidth: BandwidthModel,
    state: Mutex<Inner>,
    ready: Condvar,
}

/// In-process network. Per ordered pair delivery is FIFO; there is no global
/// ordering. Cloning yields another handle to the same network.
#[derive(Clone)]
pub struct SimNetwork {
    shared: Arc<Shared>,
}

impl SimNetwork {
    pub fn new(
        n: usize,
        modulus: RingModulus,
        config: ChannelConfig,
        keys: KeyStore,
        bandwidth: BandwidthModel,
    ) -> Result<Self, TransportError> {
        config.validate()?;
        let inner = Inner {
            inboxes: (0..n).map(|_| VecDeque::new()).collect(),
            ledger: CostLedger::new(),
            trace: Trace::default(),
            fault: None,
        };
        Ok(Self {
            shared: Arc::new(Shared {
                n,
                modulus,
                config,
                keys,
                bandwidth,
                state: Mutex::new(inner),
                ready: Condvar::new(),
            }),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.shared.state.lock().expect("network lock poisoned")
    }

    pub fn n(&self) -> usize {
        self.shared.n
    }

    pub fn modulus(&self) -> RingModulus {
        self.shared.modulus
    }

    pub fn config(&self) -> ChannelConfig {
        self.shared.config
    }

    pub fn endpoint(&self, id: PartyId) -> Result<SimEndpoint, TransportError> {
        if id.index() >= self.shared.n {
            return Err(TransportError::UnknownPeer(id));
        }
        Ok(SimEndpoint { net: self.clone(), id, counters: BTreeMap::new() })
    }

    pub fn endpoints(&self) -> Vec<SimEndpoint> {
        (0..self.shared.n as u32).map(|i| self.endpoint(PartyId(i)).expect("in range")).collect()
    }

    /// Arms the fault hook: the next message of `kind` has the low bit of its
    /// first element flipped before encryption.
    pub fn inject_fault(&self, kind: MessageKind) {
        self.lock().fault = Some(kind);
    }

    pub fn ledger(&self) -> CostLedger {
        self.lock().ledger.clone()
    }

    pub fn add_cpu(&self, party: PartyId, phase: CostPhase, seconds: f64) {
        self.lock().ledger.add_cpu(party, phase, seconds);
    }

    /// Trace of every message sent so far, in send order.
    pub fn trace(&self) -> Trace {
        self.lock().trace.clone()
    }

    pub(crate) fn mark_complete(&self) {
        self.lock().trace.complete = true;
    }

    /// Resets ledger and trace, keeping keys and configuration.
    pub fn take_ledger(&self) -> (CostLedger, Trace) {
        let mut inner = self.lock();
        let ledger = std::mem::take(&mut inner.ledger);
        let trace = std::mem::take(&mut inner.trace);
        (ledger, trace)
    }

    pub fn pending(&self) -> usize {
        self.lock().inboxes.iter().map(VecDeque::len).sum()
    }
}

pub struct SimEndpoint {
    net: SimNetwork,
    id: PartyId,
    counters: BTreeMap<PartyId, u64>,
}

impl SimEndpoint {
    /// Non-blocking receive.
    pub fn try_recv(&mut self) -> Result<Option<ProtocolMessage>, TransportError> {
        let frame = self.net.lock().inboxes[self.id.index()].pop_front();
        frame.map(|f| self.open_frame(f)).transpose()
    }

    fn open_frame(&self, frame: Frame) -> Result<ProtocolMessage, TransportError> {
        let s = &self.net.shared;
        let (msg, secs) = open(&frame.header, &frame.ciphertext, &s.config, &s.keys, s.modulus)?;
        self.net.add_cpu(self.id, CostPhase::Decrypt, secs);
        Ok(msg)
    }
}

impl Endpoint for SimEndpoint {
    fn id(&self) -> PartyId {
        self.id
    }

    fn send(&mut self, msg: &ProtocolMessage) -> Result<DeliveryReceipt, TransportError> {
        let s = &self.net.shared;
        if msg.from != self.id {
            return Err(TransportError::Channel(format!("{} cannot send as {}", self.id, msg.from)));
        }
        if msg.to.index() >= s.n || msg.to == self.id {
            return Err(TransportError::UnknownPeer(msg.to));
        }
        let mut msg = std::borrow::Cow::Borrowed(msg);
        {
            let mut inner = self.net.lock();
            if inner.fault == Some(msg.kind) && !msg.payload.is_empty() {
                inner.fault = None;
                let mut values = msg.payload.values().to_vec();
                values[0] ^= 1;
                let tampered = crate::ring::RingVector::from_values(msg.payload.modulus(), values).expect("same range");
                msg.to_mut().payload = tampered;
            }
        }
        let counter = self.counters.entry(msg.to).or_insert(0);
        let (header, ciphertext, enc_secs) = seal(&msg, &s.config, &s.keys, *counter)?;
        *counter += 1;

        let payload_bits = msg.payload.payload_bits();
        let ciphertext_bits = (ciphertext.len() as u64 * 8).max(payload_bits);
        let sim_seconds = s.bandwidth.transfer_seconds(ciphertext_bits);
        {
            let mut inner = self.net.lock();
            inner.ledger.add_cpu(self.id, CostPhase::Encrypt, enc_secs);
            inner.ledger.add_sim_comm(self.id, sim_seconds);
            inner.ledger.record_transfer(msg.from, msg.to, traffic_class(msg.kind), payload_bits, ciphertext_bits);
            inner.trace.record(&msg);
            inner.inboxes[msg.to.index()].push_back(Frame { header, ciphertext });
        }
        s.ready.notify_all();
        Ok(DeliveryReceipt { payload_bits, ciphertext_bits, sim_seconds })
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<ProtocolMessage>, TransportError> {
        let deadline = Instant::now() + timeout;
        let mut inner = self.net.lock();
        loop {
            if let Some(frame) = inner.inboxes[self.id.index()].pop_front() {
                drop(inner);
                return self.open_frame(frame).map(Some);
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            inner = self.net.shared.ready.wait_timeout(inner, deadline - now).expect("network lock poisoned").0;
        }
    }
}
