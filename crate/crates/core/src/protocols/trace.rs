use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{MessageKind, PartyId, ProtocolMessage};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub kind: MessageKind,
    pub from: PartyId,
    pub to: PartyId,
    pub round: u32,
    pub segment: u32,
    pub payload_bits: u64,
    /// Serialized element bytes, the unit the channel cipher sees.
    pub payload_bytes: u64,
}

/// Ordered record of every message a session emitted.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    /// Physical visiting order per ring segment, as sampled for the session.
    pub segment_orders: Vec<Vec<PartyId>>,
    pub complete: bool,
    #[serde(with = "hex_digest")]
    digest: [u8; 32],
}

mod hex_digest {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(s).map_err(serde::de::Error::custom)?;
        v.try_into().map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))
    }
}

impl Trace {
    pub fn new(segment_orders: Vec<Vec<PartyId>>) -> Self {
        Self { segment_orders, ..Default::default() }
    }

    pub fn record(&mut self, msg: &ProtocolMessage) {
        self.records.push(TraceRecord {
            kind: msg.kind,
            from: msg.from,
            to: msg.to,
            round: msg.round,
            segment: msg.segment,
            payload_bits: msg.payload.payload_bits(),
            payload_bytes: (msg.payload.len() * msg.payload.modulus().byte_width()) as u64,
        });
        // chained hash over the full message contents
        let mut h = Sha256::new();
        h.update(self.digest);
        h.update([msg.kind.code()]);
        h.update(msg.session.0);
        h.update(msg.round.to_le_bytes());
        h.update(msg.segment.to_le_bytes());
        h.update(msg.from.0.to_le_bytes());
        h.update(msg.to.0.to_le_bytes());
        h.update(msg.payload.to_bytes());
        self.digest = h.finalize().into();
    }

    /// Hash chain over every recorded message, payloads included.
    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, kind: MessageKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    pub fn protocol_bits(&self) -> u64 {
        self.records.iter().filter(|r| !r.kind.is_broadcast()).map(|r| r.payload_bits).sum()
    }

    pub fn broadcast_bits(&self) -> u64 {
        self.records.iter().filter(|r| r.kind.is_broadcast()).map(|r| r.payload_bits).sum()
    }

    /// `kind,from,to,round,segment,payload_bits` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,from,to,round,segment,payload_bits\n");
        for r in &self.records {
            writeln!(out, "{},{},{},{},{},{}", r.kind, r.from.0, r.to.0, r.round, r.segment, r.payload_bits)
                .expect("write to string");
        }
        out
    }
}
