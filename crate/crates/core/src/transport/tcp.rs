use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::wire::{self, FrameHeader};
use super::{
    open, seal, traffic_class, BandwidthModel, ChannelConfig, CostLedger, CostPhase, DeliveryReceipt, Endpoint,
    KeyStore, TransportError,
};
use crate::protocols::{PartyId, ProtocolMessage};
use crate::ring::RingModulus;

type Inbound = Result<(FrameHeader, Vec<u8>), TransportError>;

struct Shared {
    modulus: RingModulus,
    config: ChannelConfig,
    keys: KeyStore,
    bandwidth: BandwidthModel,
    ledger: Mutex<CostLedger>,
}

/// Loopback TCP network: one listener per party and one stream per ordered
/// pair, opened on first use. A single stream per pair gives per-pair FIFO.
pub struct TcpNetwork {
    shared: Arc<Shared>,
}

impl TcpNetwork {
    /// Binds `n` listeners on 127.0.0.1 and returns one endpoint per party.
    pub fn bind(
        n: usize,
        modulus: RingModulus,
        config: ChannelConfig,
        keys: KeyStore,
        bandwidth: BandwidthModel,
    ) -> Result<(TcpNetwork, Vec<TcpEndpoint>), TransportError> {
        config.validate()?;
        if config.simulation {
            return Err(TransportError::Config("TCP backend needs a non-simulation channel config".into()));
        }
        let shared = Arc::new(Shared { modulus, config, keys, bandwidth, ledger: Mutex::new(CostLedger::new()) });
        let mut listeners = Vec::with_capacity(n);
        for _ in 0..n {
            let l = TcpListener::bind("127.0.0.1:0")?;
            l.set_nonblocking(true)?;
            listeners.push(l);
        }
        let addrs: Vec<SocketAddr> = listeners.iter().map(|l| l.local_addr()).collect::<Result<_, _>>()?;
        let endpoints = listeners
            .into_iter()
            .enumerate()
            .map(|(i, listener)| {
                let (tx, rx) = mpsc::channel();
                let shutdown = Arc::new(AtomicBool::new(false));
                let flag = shutdown.clone();
                thread::spawn(move || accept_loop(listener, tx, flag));
                TcpEndpoint {
                    id: PartyId(i as u32),
                    shared: shared.clone(),
                    addrs: addrs.clone(),
                    streams: BTreeMap::new(),
                    counters: BTreeMap::new(),
                    inbox: rx,
                    shutdown,
                }
            })
            .collect();
        Ok((TcpNetwork { shared }, endpoints))
    }

    pub fn ledger(&self) -> CostLedger {
        self.shared.ledger.lock().expect("ledger lock poisoned").clone()
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Inbound>, shutdown: Arc<AtomicBool>) {
    while !shutdown.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let tx = tx.clone();
                thread::spawn(move || read_loop(stream, tx));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(1)),
            Err(e) => {
                let _ = tx.send(Err(e.into()));
                return;
            }
        }
    }
}

fn read_loop(stream: TcpStream, tx: Sender<Inbound>) {
    if stream.set_nonblocking(false).is_err() {
        return;
    }
    let mut reader = BufReader::new(stream);
    loop {
        match wire::read_frame(&mut reader) {
            Ok(Some(frame)) => {
                if tx.send(Ok(frame)).is_err() {
                    return;
                }
            }
            Ok(None) => return,
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        }
    }
}

pub struct TcpEndpoint {
    id: PartyId,
    shared: Arc<Shared>,
    addrs: Vec<SocketAddr>,
    streams: BTreeMap<PartyId, BufWriter<TcpStream>>,
    counters: BTreeMap<PartyId, u64>,
    inbox: Receiver<Inbound>,
    shutdown: Arc<AtomicBool>,
}

impl TcpEndpoint {
    fn ledger(&self) -> std::sync::MutexGuard<'_, CostLedger> {
        self.shared.ledger.lock().expect("ledger lock poisoned")
    }

    fn stream(&mut self, to: PartyId) -> Result<&mut BufWriter<TcpStream>, TransportError> {
        if !self.streams.contains_key(&to) {
            let addr = *self.addrs.get(to.index()).ok_or(TransportError::UnknownPeer(to))?;
            let s = TcpStream::connect(addr)?;
            s.set_nodelay(true)?;
            self.streams.insert(to, BufWriter::new(s));
        }
        Ok(self.streams.get_mut(&to).expect("inserted"))
    }
}

impl Endpoint for TcpEndpoint {
    fn id(&self) -> PartyId {
        self.id
    }

    fn send(&mut self, msg: &ProtocolMessage) -> Result<DeliveryReceipt, TransportError> {
        if msg.from != self.id {
            return Err(TransportError::Channel(format!("{} cannot send as {}", self.id, msg.from)));
        }
        if msg.to.index() >= self.addrs.len() || msg.to == self.id {
            return Err(TransportError::UnknownPeer(msg.to));
        }
        let counter = *self.counters.get(&msg.to).unwrap_or(&0);
        let (header, ciphertext, enc_secs) = seal(msg, &self.shared.config, &self.shared.keys, counter)?;
        self.counters.insert(msg.to, counter + 1);

        let t = Instant::now();
        let stream = self.stream(msg.to)?;
        wire::write_frame(stream, &header, &ciphertext)?;
        stream.flush()?;
        let wall = t.elapsed().as_secs_f64();

        let payload_bits = msg.payload.payload_bits();
        let ciphertext_bits = (ciphertext.len() as u64 * 8).max(payload_bits);
        let sim_seconds = self.shared.bandwidth.transfer_seconds(ciphertext_bits);
        let mut ledger = self.ledger();
        ledger.add_cpu(self.id, CostPhase::Encrypt, enc_secs);
        ledger.add_cpu(self.id, CostPhase::Communicate, wall);
        ledger.add_sim_comm(self.id, sim_seconds);
        ledger.record_transfer(msg.from, msg.to, traffic_class(msg.kind), payload_bits, ciphertext_bits);
        Ok(DeliveryReceipt { payload_bits, ciphertext_bits, sim_seconds })
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<ProtocolMessage>, TransportError> {
        let (header, ciphertext) = match self.inbox.recv_timeout(timeout) {
            Ok(frame) => frame?,
            Err(RecvTimeoutError::Timeout) => return Ok(None),
            Err(RecvTimeoutError::Disconnected) => return Err(TransportError::Io("listener stopped".into())),
        };
        if header.to != self.id {
            return Err(TransportError::Frame(format!("frame for {} delivered to {}", header.to, self.id)));
        }
        let s = &self.shared;
        let (msg, secs) = open(&header, &ciphertext, &s.config, &s.keys, s.modulus)?;
        self.ledger().add_cpu(self.id, CostPhase::Decrypt, secs);
        Ok(Some(msg))
    }
}

impl Drop for TcpEndpoint {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        for s in self.streams.values_mut() {
            let _ = s.flush();
        }
    }
}
