//! Secure-sum protocols as transport-agnostic state machines.
//!
//! Three protocols are provided:
//!
//! * **Ring**: the master masks its input with a uniform `r`, the masked
//!   partial sum travels once around the parties, and the master removes `r`.
//! * **Segmented**: every party splits its input into `k` additive segments
//!   and one ring pass runs per segment, each with its own random visiting
//!   order. Two colluding neighbours no longer see a whole input.
//! * **Urabe**: three phases. In distribution every non-collector party
//!   splits its input into additive shares, keeps one and sends the rest to
//!   higher-indexed parties. In merging each party adds its kept share to the
//!   shares it received and forwards the merged value to the collector. In
//!   collection the collector adds its own input and broadcasts the sum. A
//!   window parameter `k` caps the number of share recipients per party.
//!
//! Parties are addressed by physical [`PartyId`]. The protocol roles are
//! assigned by logical position relative to the session's distributor, so
//! rotating the distributor rotates the collector role without changing the
//! state machines.

mod party;
mod runner;
mod trace;

pub use party::{ring_sum_init, ring_sum_step, Phase, PartyState};
pub use runner::{
    expected_message_bits, expected_message_count, message_bits, run_in_memory, segmented_sum_run,
    urabe_round, urabe_round_bounded, urabe_split, Execution,
};
pub use trace::{Trace, TraceRecord};
pub(crate) use runner::{check_states as runner_check, finish as runner_finish};

use std::fmt;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ring::{RingError, RingModulus, RingVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("invalid protocol parameter: {0}")]
    Parameter(String),
    #[error("party {party} cannot {action}: {reason}")]
    Role { party: PartyId, action: &'static str, reason: String },
    #[error("protocol violation at party {party}: {reason}")]
    Violation { party: PartyId, reason: String },
    #[error("incomplete round at party {party}: missing {kind} from party {missing}")]
    Incomplete { party: PartyId, kind: MessageKind, missing: PartyId },
    #[error("session is not complete")]
    SessionIncomplete,
    #[error(transparent)]
    Ring(#[from] RingError),
}

/// Index of a party within a session, `0..n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartyId(pub u32);

impl PartyId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    PartialSum,
    Share,
    MergedShare,
    Result,
    LossSum,
    Control,
}

impl MessageKind {
    pub fn code(self) -> u8 {
        match self {
            MessageKind::PartialSum => 1,
            MessageKind::Share => 2,
            MessageKind::MergedShare => 3,
            MessageKind::Result => 4,
            MessageKind::LossSum => 5,
            MessageKind::Control => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => MessageKind::PartialSum,
            2 => MessageKind::Share,
            3 => MessageKind::MergedShare,
            4 => MessageKind::Result,
            5 => MessageKind::LossSum,
            6 => MessageKind::Control,
            _ => return None,
        })
    }

    /// Result distribution and control traffic, as opposed to the protocol
    /// messages whose volume the share-count formulas describe.
    pub fn is_broadcast(self) -> bool {
        matches!(self, MessageKind::Result | MessageKind::LossSum | MessageKind::Control)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::PartialSum => "PARTIAL_SUM",
            MessageKind::Share => "SHARE",
            MessageKind::MergedShare => "MERGED_SHARE",
            MessageKind::Result => "RESULT",
            MessageKind::LossSum => "LOSS_SUM",
            MessageKind::Control => "CONTROL",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Opaque 16-byte session token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionId(pub [u8; 16]);

impl SessionId {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut id = [0u8; 16];
        rng.fill_bytes(&mut id);
        SessionId(id)
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub kind: MessageKind,
    pub session: SessionId,
    pub round: u32,
    pub segment: u32,
    pub from: PartyId,
    pub to: PartyId,
    pub payload: RingVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Ring,
    Segmented,
    Urabe,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Ring => "ring",
            Protocol::Segmented => "segmented",
            Protocol::Urabe => "urabe",
        })
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ring" => Ok(Protocol::Ring),
            "segmented" => Ok(Protocol::Segmented),
            "urabe" => Ok(Protocol::Urabe),
            other => Err(format!("unknown protocol '{other}'")),
        }
    }
}

/// Public parameters of one secure-sum execution, known to every party.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SumSession {
    pub id: SessionId,
    pub n: usize,
    pub modulus: RingModulus,
    pub vector_len: usize,
    pub protocol: Protocol,
    pub k: Option<usize>,
    /// Physical party acting as master / collector (logical p_0).
    pub distributor: PartyId,
    pub round: u32,
    /// Kind used for the final broadcast.
    pub result_kind: MessageKind,
    /// Logical visiting order per ring segment. Always starts at 0.
    orders: Vec<Vec<usize>>,
}

impl SumSession {
    fn base(n: usize, modulus: RingModulus, vector_len: usize, protocol: Protocol) -> Result<Self, ProtocolError> {
        if n < 3 {
            return Err(ProtocolError::Parameter(format!("secure sum needs at least 3 parties, got {n}")));
        }
        if n > u32::MAX as usize {
            return Err(ProtocolError::Parameter("too many parties".into()));
        }
        Ok(Self {
            id: SessionId([0; 16]),
            n,
            modulus,
            vector_len,
            protocol,
            k: None,
            distributor: PartyId(0),
            round: 0,
            result_kind: MessageKind::Result,
            orders: Vec::new(),
        })
    }

    pub fn ring(n: usize, modulus: RingModulus, vector_len: usize) -> Result<Self, ProtocolError> {
        let mut s = Self::base(n, modulus, vector_len, Protocol::Ring)?;
        s.orders = vec![(0..n).collect()];
        Ok(s)
    }

    /// Segmented ring protocol with `k ≥ 2` segments. Each segment's visiting
    /// order is a uniform permutation of the non-master parties drawn from
    /// `rng`; the master stays first so it can mask and unmask.
    pub fn segmented<R: RngCore + ?Sized>(
        n: usize,
        modulus: RingModulus,
        vector_len: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self, ProtocolError> {
        if k < 2 {
            return Err(ProtocolError::Parameter(format!("segmented protocol needs k >= 2, got {k}")));
        }
        if k > u32::MAX as usize {
            return Err(ProtocolError::Parameter("too many segments".into()));
        }
        let mut s = Self::base(n, modulus, vector_len, Protocol::Segmented)?;
        s.k = Some(k);
        s.orders = (0..k)
            .map(|_| {
                let mut rest: Vec<usize> = (1..n).collect();
                rest.shuffle(rng);
                std::iter::once(0).chain(rest).collect()
            })
            .collect();
        Ok(s)
    }

    /// Full Urabe protocol (`k = n − 1`).
    pub fn urabe(n: usize, modulus: RingModulus, vector_len: usize) -> Result<Self, ProtocolError> {
        let mut s = Self::base(n, modulus, vector_len, Protocol::Urabe)?;
        s.k = Some(n - 1);
        Ok(s)
    }

    /// Urabe protocol where each party sends shares to at most `k` parties.
    /// `k = n − 1` is the full protocol.
    pub fn urabe_bounded(n: usize, modulus: RingModulus, vector_len: usize, k: usize) -> Result<Self, ProtocolError> {
        let mut s = Self::base(n, modulus, vector_len, Protocol::Urabe)?;
        if k < 1 || k > n - 1 {
            return Err(ProtocolError::Parameter(format!("urabe k must be in 1..={}, got {k}", n - 1)));
        }
        s.k = Some(k);
        Ok(s)
    }

    pub fn with_id(mut self, id: SessionId) -> Self {
        self.id = id;
        self
    }

    pub fn with_round(mut self, round: u32) -> Self {
        self.round = round;
        self
    }

    pub fn with_result_kind(mut self, kind: MessageKind) -> Self {
        self.result_kind = kind;
        self
    }

    pub fn with_distributor(mut self, distributor: PartyId) -> Result<Self, ProtocolError> {
        if distributor.index() >= self.n {
            return Err(ProtocolError::Parameter(format!("distributor {distributor} outside 0..{}", self.n)));
        }
        self.distributor = distributor;
        Ok(self)
    }

    /// Round-robin distributor rotation for the given iteration.
    pub fn rotated(self, iteration: u64) -> Self {
        let d = (iteration % self.n as u64) as u32;
        Self { distributor: PartyId(d), ..self }
    }

    /// Ring-segment visiting orders in logical indices (empty for Urabe).
    pub fn segment_orders(&self) -> &[Vec<usize>] {
        &self.orders
    }

    /// Segment orders mapped to physical party ids.
    pub fn physical_orders(&self) -> Vec<Vec<PartyId>> {
        self.orders.iter().map(|o| o.iter().map(|&j| self.physical(j)).collect()).collect()
    }

    pub fn segments(&self) -> usize {
        match self.protocol {
            Protocol::Ring | Protocol::Urabe => 1,
            Protocol::Segmented => self.orders.len(),
        }
    }

    pub fn logical(&self, p: PartyId) -> usize {
        (p.index() + self.n - self.distributor.index()) % self.n
    }

    pub fn physical(&self, logical: usize) -> PartyId {
        PartyId(((logical + self.distributor.index()) % self.n) as u32)
    }

    pub fn collector(&self) -> PartyId {
        self.distributor
    }

    fn window(&self) -> usize {
        self.k.unwrap_or(self.n - 1)
    }

    /// Logical recipients of logical party `i`'s Urabe shares.
    pub(crate) fn share_recipients(&self, i: usize) -> std::ops::RangeInclusive<usize> {
        debug_assert!(i >= 1 && i < self.n);
        let last = (i + self.window()).min(self.n - 1);
        (i + 1)..=last
    }

    /// Logical senders of Urabe shares to logical party `j`.
    pub(crate) fn share_senders(&self, j: usize) -> std::ops::Range<usize> {
        debug_assert!(j >= 1 && j < self.n);
        let first = j.saturating_sub(self.window()).max(1);
        first..j
    }

    /// Number of additive shares logical party `i` splits its input into.
    pub fn share_count(&self, i: usize) -> usize {
        self.share_recipients(i).count() + 1
    }
}
