use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::protocols::PartyId;

/// Per-party cost columns. The first five mirror a per-iteration runtime
/// breakdown; simulated transfer time is kept in its own column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostPhase {
    Train,
    Encrypt,
    Add,
    Decrypt,
    Communicate,
}

impl CostPhase {
    pub const ALL: [CostPhase; 5] =
        [CostPhase::Train, CostPhase::Encrypt, CostPhase::Add, CostPhase::Decrypt, CostPhase::Communicate];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CostPhase::Train => "train",
            CostPhase::Encrypt => "encrypt",
            CostPhase::Add => "add",
            CostPhase::Decrypt => "decrypt",
            CostPhase::Communicate => "communicate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficClass {
    /// Messages whose volume the protocol cost formulas count.
    Protocol,
    /// Result broadcasts, model distribution and other control traffic.
    Broadcast,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartyCosts {
    /// Measured wall-clock seconds per [`CostPhase`].
    pub cpu_seconds: [f64; 5],
    /// Bandwidth-model transfer time. Never mixed with measured time.
    pub sim_comm_seconds: f64,
    pub modexp: u64,
    pub mulmod: u64,
    /// Gradient components clipped to the codec headroom before encoding.
    pub clipped: u64,
}

impl PartyCosts {
    pub fn seconds(&self, phase: CostPhase) -> f64 {
        self.cpu_seconds[phase.slot()]
    }

    pub fn cpu_total(&self) -> f64 {
        self.cpu_seconds.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traffic {
    pub payload_bits: u64,
    pub ciphertext_bits: u64,
    pub messages: u64,
}

impl Traffic {
    fn absorb(&mut self, other: &Traffic) {
        self.payload_bits += other.payload_bits;
        self.ciphertext_bits += other.ciphertext_bits;
        self.messages += other.messages;
    }
}

/// Byte and time accounting per party and per ordered pair. Only ever grows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    parties: BTreeMap<PartyId, PartyCosts>,
    traffic: BTreeMap<(PartyId, PartyId, TrafficClass), Traffic>,
}

/// Pseudo-party standing for a central server in non-private baselines.
pub const SERVER: PartyId = PartyId(u32::MAX);

fn party_label(p: PartyId) -> String {
    if p == SERVER {
        "server".to_string()
    } else {
        p.0.to_string()
    }
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn party_mut(&mut self, p: PartyId) -> &mut PartyCosts {
        self.parties.entry(p).or_default()
    }

    pub fn add_cpu(&mut self, p: PartyId, phase: CostPhase, seconds: f64) {
        self.party_mut(p).cpu_seconds[phase.slot()] += seconds.max(0.0);
    }

    pub fn add_sim_comm(&mut self, p: PartyId, seconds: f64) {
        self.party_mut(p).sim_comm_seconds += seconds.max(0.0);
    }

    pub fn add_ops(&mut self, p: PartyId, modexp: u64, mulmod: u64) {
        let c = self.party_mut(p);
        c.modexp += modexp;
        c.mulmod += mulmod;
    }

    pub fn add_clipped(&mut self, p: PartyId, count: u64) {
        self.party_mut(p).clipped += count;
    }

    /// Records one transfer. Ciphertext smaller than payload is a caller bug.
    pub fn record_transfer(&mut self, from: PartyId, to: PartyId, class: TrafficClass, payload_bits: u64, ciphertext_bits: u64) {
        debug_assert!(ciphertext_bits >= payload_bits, "ciphertext shorter than payload");
        let t = self.traffic.entry((from, to, class)).or_default();
        t.payload_bits += payload_bits;
        t.ciphertext_bits += ciphertext_bits.max(payload_bits);
        t.messages += 1;
        self.party_mut(from);
        self.party_mut(to);
    }

    pub fn merge(&mut self, other: &CostLedger) {
        for (p, c) in &other.parties {
            let mine = self.party_mut(*p);
            for (a, b) in mine.cpu_seconds.iter_mut().zip(c.cpu_seconds) {
                *a += b;
            }
            mine.sim_comm_seconds += c.sim_comm_seconds;
            mine.modexp += c.modexp;
            mine.mulmod += c.mulmod;
            mine.clipped += c.clipped;
        }
        for (k, t) in &other.traffic {
            self.traffic.entry(*k).or_default().absorb(t);
        }
    }

    pub fn parties(&self) -> impl Iterator<Item = (PartyId, &PartyCosts)> {
        self.parties.iter().map(|(p, c)| (*p, c))
    }

    pub fn party(&self, p: PartyId) -> PartyCosts {
        self.parties.get(&p).copied().unwrap_or_default()
    }

    pub fn pair(&self, from: PartyId, to: PartyId, class: TrafficClass) -> Traffic {
        self.traffic.get(&(from, to, class)).copied().unwrap_or_default()
    }

    pub fn traffic(&self) -> impl Iterator<Item = ((PartyId, PartyId, TrafficClass), &Traffic)> {
        self.traffic.iter().map(|(k, t)| (*k, t))
    }

    pub fn class_traffic(&self, class: TrafficClass) -> Traffic {
        let mut out = Traffic::default();
        for t in self.traffic.iter().filter(|((_, _, c), _)| *c == class).map(|(_, t)| t) {
            out.absorb(t);
        }
        out
    }

    pub fn total_traffic(&self) -> Traffic {
        let mut out = Traffic::default();
        for t in self.traffic.values() {
            out.absorb(t);
        }
        out
    }

    /// Traffic sent by one party, all classes.
    pub fn sent_by(&self, p: PartyId) -> Traffic {
        let mut out = Traffic::default();
        for t in self.traffic.iter().filter(|((f, _, _), _)| *f == p).map(|(_, t)| t) {
            out.absorb(t);
        }
        out
    }

    pub fn cpu_total(&self, phase: CostPhase) -> f64 {
        self.parties.values().map(|c| c.seconds(phase)).sum()
    }

    pub fn sim_comm_total(&self) -> f64 {
        self.parties.values().map(|c| c.sim_comm_seconds).sum()
    }

    pub fn clipped_total(&self) -> u64 {
        self.parties.values().map(|c| c.clipped).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.traffic.is_empty() && self.parties.values().all(|c| *c == PartyCosts::default())
    }

    /// Per-party costs, one row per party, timings in milliseconds.
    pub fn party_csv(&self) -> String {
        let mut out = String::from(
            "party,train_ms,encrypt_ms,add_ms,decrypt_ms,communicate_ms,sim_comm_ms,sent_payload_bits,sent_ciphertext_bits,sent_messages,modexp,mulmod,clipped\n",
        );
        for (p, c) in &self.parties {
            let sent = self.sent_by(*p);
            let _ = write!(out, "{}", party_label(*p));
            for phase in CostPhase::ALL {
                let _ = write!(out, ",{:.6}", c.seconds(phase) * 1e3);
            }
            let _ = writeln!(
                out,
                ",{:.6},{},{},{},{},{},{}",
                c.sim_comm_seconds * 1e3,
                sent.payload_bits,
                sent.ciphertext_bits,
                sent.messages,
                c.modexp,
                c.mulmod,
                c.clipped
            );
        }
        out
    }

    /// Per-pair traffic. Contains no timings, so it is byte-stable across runs.
    pub fn traffic_csv(&self) -> String {
        let mut out = String::from("from,to,class,payload_bits,ciphertext_bits,messages\n");
        for ((f, t, class), tr) in &self.traffic {
            let class = match class {
                TrafficClass::Protocol => "protocol",
                TrafficClass::Broadcast => "broadcast",
            };
            let _ = writeln!(
                out,
                "{},{},{class},{},{},{}",
                party_label(*f),
                party_label(*t),
                tr.payload_bits,
                tr.ciphertext_bits,
                tr.messages
            );
        }
        out
    }
}
