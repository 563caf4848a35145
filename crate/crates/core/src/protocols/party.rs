use std::collections::{BTreeMap, BTreeSet};

use super::{MessageKind, PartyId, Protocol, ProtocolError, ProtocolMessage, SumSession};
use crate::ring::RingVector;
use crate::rng::RandomSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Start,
    /// Ring non-master: waiting to forward partial sums.
    AwaitingPartial,
    /// Ring master: waiting for the partial sums to come back around.
    AwaitingFinal,
    /// Urabe non-collector: waiting for shares from lower-indexed parties.
    AwaitingShares,
    /// Urabe collector: waiting for merged shares.
    AwaitingMerged,
    AwaitingResult,
    Done,
}

type Key = (MessageKind, u32, PartyId);

/// One party's view of a secure-sum session.
///
/// Purely reactive: [`start`](Self::start) and [`handle`](Self::handle)
/// consume input and return the messages to send. Messages that arrive
/// before the party is ready for them are buffered and processed once the
/// phase they belong to is reached.
#[derive(Clone, Debug)]
pub struct PartyState {
    id: PartyId,
    session: SumSession,
    input: RingVector,
    rng: RandomSource,
    phase: Phase,
    buffer: BTreeMap<Key, ProtocolMessage>,
    seen: BTreeSet<Key>,
    /// Master masks, one per segment.
    masks: Vec<RingVector>,
    /// Own input split into additive segments (ring protocols).
    segments: Vec<RingVector>,
    forwarded: Vec<bool>,
    finals: Vec<Option<RingVector>>,
    /// Urabe: s_i^i, the share that never leaves the party.
    kept: Option<RingVector>,
    result: Option<RingVector>,
}

pub(crate) fn split_additive(x: &RingVector, count: usize, rng: &mut RandomSource) -> Vec<RingVector> {
    debug_assert!(count >= 1);
    let m = x.modulus();
    let mut shares: Vec<RingVector> = (0..count - 1).map(|_| RingVector::random(m, x.len(), rng)).collect();
    let mut last = x.clone();
    for s in &shares {
        last.sub_assign(s).expect("same shape");
    }
    shares.push(last);
    shares
}

impl PartyState {
    pub fn new(id: PartyId, session: SumSession, input: RingVector, rng: RandomSource) -> Result<Self, ProtocolError> {
        if id.index() >= session.n {
            return Err(ProtocolError::Parameter(format!("party {id} outside 0..{}", session.n)));
        }
        if input.modulus() != session.modulus {
            return Err(crate::ring::RingError::ModulusMismatch {
                left: session.modulus.bits(),
                right: input.modulus().bits(),
            }
            .into());
        }
        if input.len() != session.vector_len {
            return Err(crate::ring::RingError::LengthMismatch { left: session.vector_len, right: input.len() }.into());
        }
        let segs = session.segments();
        Ok(Self {
            id,
            session,
            input,
            rng,
            phase: Phase::Start,
            buffer: BTreeMap::new(),
            seen: BTreeSet::new(),
            masks: Vec::new(),
            segments: Vec::new(),
            forwarded: vec![false; segs],
            finals: vec![None; segs],
            kept: None,
            result: None,
        })
    }

    /// Fixes the master's masks instead of drawing them at start. Replay and
    /// test hook; one mask per segment.
    pub fn with_masks(mut self, masks: Vec<RingVector>) -> Result<Self, ProtocolError> {
        if !self.is_master() || self.session.protocol == Protocol::Urabe {
            return Err(self.role_err("take masks", "only the ring master masks its input"));
        }
        if masks.len() != self.session.segments() {
            return Err(ProtocolError::Parameter(format!(
                "expected {} masks, got {}",
                self.session.segments(),
                masks.len()
            )));
        }
        for m in &masks {
            if m.modulus() != self.session.modulus || m.len() != self.session.vector_len {
                return Err(ProtocolError::Parameter("mask shape differs from session".into()));
            }
        }
        self.masks = masks;
        Ok(self)
    }

    pub fn id(&self) -> PartyId {
        self.id
    }

    pub fn session(&self) -> &SumSession {
        &self.session
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn result(&self) -> Option<&RingVector> {
        self.result.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    /// Master masks (ring protocols). Exposed for collusion demonstrations.
    pub fn masks(&self) -> &[RingVector] {
        &self.masks
    }

    fn logical(&self) -> usize {
        self.session.logical(self.id)
    }

    fn is_master(&self) -> bool {
        self.logical() == 0
    }

    fn role_err(&self, action: &'static str, reason: impl Into<String>) -> ProtocolError {
        ProtocolError::Role { party: self.id, action, reason: reason.into() }
    }

    fn violation(&self, reason: impl Into<String>) -> ProtocolError {
        ProtocolError::Violation { party: self.id, reason: reason.into() }
    }

    fn message(&self, kind: MessageKind, segment: usize, to: PartyId, payload: RingVector) -> ProtocolMessage {
        ProtocolMessage {
            kind,
            session: self.session.id,
            round: self.session.round,
            segment: segment as u32,
            from: self.id,
            to,
            payload,
        }
    }

    fn broadcast(&self, payload: &RingVector) -> Vec<ProtocolMessage> {
        (1..self.session.n)
            .map(|j| self.message(self.session.result_kind, 0, self.session.physical(j), payload.clone()))
            .collect()
    }

    /// Kicks off the party's part of the protocol.
    pub fn start(&mut self) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        if self.phase != Phase::Start {
            return Err(self.role_err("start", "already started"));
        }
        let mut out = match self.session.protocol {
            Protocol::Ring | Protocol::Segmented => self.start_ring(),
            Protocol::Urabe => self.start_urabe(),
        };
        out.extend(self.progress()?);
        Ok(out)
    }

    fn start_ring(&mut self) -> Vec<ProtocolMessage> {
        let segs = self.session.segments();
        self.segments = if segs == 1 {
            vec![self.input.clone()]
        } else {
            split_additive(&self.input, segs, &mut self.rng)
        };
        if !self.is_master() {
            self.phase = Phase::AwaitingPartial;
            return Vec::new();
        }
        if self.masks.is_empty() {
            let (m, len) = (self.session.modulus, self.session.vector_len);
            self.masks = (0..segs).map(|_| RingVector::random(m, len, &mut self.rng)).collect();
        }
        self.phase = Phase::AwaitingFinal;
        (0..segs)
            .map(|s| {
                let payload = self.segments[s].add(&self.masks[s]).expect("same shape");
                let next = self.session.physical(self.session.segment_orders()[s][1]);
                self.message(MessageKind::PartialSum, s, next, payload)
            })
            .collect()
    }

    fn start_urabe(&mut self) -> Vec<ProtocolMessage> {
        let i = self.logical();
        if i == 0 {
            self.phase = Phase::AwaitingMerged;
            return Vec::new();
        }
        let count = self.session.share_count(i);
        let mut shares = split_additive(&self.input, count, &mut self.rng).into_iter();
        self.kept = shares.next();
        self.phase = Phase::AwaitingShares;
        self.session
            .share_recipients(i)
            .zip(shares)
            .map(|(j, share)| self.message(MessageKind::Share, 0, self.session.physical(j), share))
            .collect()
    }

    /// Accepts one incoming message and returns whatever it unblocks.
    pub fn handle(&mut self, msg: ProtocolMessage) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        self.validate(&msg)?;
        let key = (msg.kind, msg.segment, msg.from);
        if !self.seen.insert(key) {
            return Err(self.violation(format!("duplicate {} segment {} from {}", msg.kind, msg.segment, msg.from)));
        }
        self.buffer.insert(key, msg);
        self.progress()
    }

    fn validate(&self, msg: &ProtocolMessage) -> Result<(), ProtocolError> {
        let s = &self.session;
        if msg.to != self.id {
            return Err(self.violation(format!("message addressed to {}", msg.to)));
        }
        if msg.session != s.id || msg.round != s.round {
            return Err(self.violation(format!("message for session {} round {}", msg.session, msg.round)));
        }
        if msg.from.index() >= s.n || msg.from == self.id {
            return Err(self.violation(format!("invalid sender {}", msg.from)));
        }
        if msg.payload.modulus() != s.modulus || msg.payload.len() != s.vector_len {
            return Err(self.violation("payload shape differs from session"));
        }
        let from = s.logical(msg.from);
        let me = self.logical();
        let ok = match (s.protocol, msg.kind) {
            (_, k) if k == s.result_kind => from == 0 && me != 0 && msg.segment == 0,
            (Protocol::Ring | Protocol::Segmented, MessageKind::PartialSum) => {
                let seg = msg.segment as usize;
                seg < s.segments() && {
                    let order = &s.segment_orders()[seg];
                    let pos = order.iter().position(|&j| j == me).expect("order covers all parties");
                    let pred = if pos == 0 { order[order.len() - 1] } else { order[pos - 1] };
                    pred == from
                }
            }
            (Protocol::Urabe, MessageKind::Share) => {
                me != 0 && msg.segment == 0 && s.share_senders(me).contains(&from)
            }
            (Protocol::Urabe, MessageKind::MergedShare) => me == 0 && msg.segment == 0,
            _ => false,
        };
        if !ok {
            return Err(self.violation(format!("unexpected {} from {} (segment {})", msg.kind, msg.from, msg.segment)));
        }
        Ok(())
    }

    fn take(&mut self, kind: MessageKind, segment: usize, from: PartyId) -> Option<RingVector> {
        self.buffer.remove(&(kind, segment as u32, from)).map(|m| m.payload)
    }

    fn has(&self, kind: MessageKind, segment: usize, from: PartyId) -> bool {
        self.buffer.contains_key(&(kind, segment as u32, from))
    }

    fn progress(&mut self) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        let mut out = Vec::new();
        loop {
            let before = (self.phase, self.buffer.len());
            match self.phase {
                Phase::Start | Phase::Done => {}
                Phase::AwaitingPartial => self.forward_partials(&mut out),
                Phase::AwaitingFinal => self.collect_finals(&mut out),
                Phase::AwaitingShares => self.merge_shares(&mut out),
                Phase::AwaitingMerged => self.collect_merged(&mut out),
                Phase::AwaitingResult => {
                    let collector = self.session.collector();
                    if let Some(y) = self.take(self.session.result_kind, 0, collector) {
                        self.result = Some(y);
                        self.phase = Phase::Done;
                    }
                }
            }
            if (self.phase, self.buffer.len()) == before {
                break;
            }
        }
        if self.phase == Phase::Done && !self.buffer.is_empty() {
            let (kind, _, from) = *self.buffer.keys().next().expect("non-empty");
            return Err(self.violation(format!("stray {kind} from {from} after completion")));
        }
        Ok(out)
    }

    fn forward_partials(&mut self, out: &mut Vec<ProtocolMessage>) {
        let me = self.logical();
        for s in 0..self.session.segments() {
            if self.forwarded[s] {
                continue;
            }
            let order = &self.session.segment_orders()[s];
            let pos = order.iter().position(|&j| j == me).expect("order covers all parties");
            let pred = self.session.physical(order[pos - 1]);
            let next = self.session.physical(order[(pos + 1) % order.len()]);
            if let Some(mut partial) = self.take(MessageKind::PartialSum, s, pred) {
                partial.add_assign(&self.segments[s]).expect("validated shape");
                out.push(self.message(MessageKind::PartialSum, s, next, partial));
                self.forwarded[s] = true;
            }
        }
        if self.forwarded.iter().all(|&f| f) {
            self.phase = Phase::AwaitingResult;
        }
    }

    fn collect_finals(&mut self, out: &mut Vec<ProtocolMessage>) {
        for s in 0..self.session.segments() {
            if self.finals[s].is_some() {
                continue;
            }
            let order = &self.session.segment_orders()[s];
            let last = self.session.physical(order[order.len() - 1]);
            self.finals[s] = self.take(MessageKind::PartialSum, s, last);
        }
        if self.finals.iter().all(Option::is_some) {
            let mut y = RingVector::zeros(self.session.modulus, self.session.vector_len);
            for (fin, mask) in self.finals.iter().zip(&self.masks) {
                y.add_assign(fin.as_ref().expect("checked")).expect("same shape");
                y.sub_assign(mask).expect("same shape");
            }
            out.extend(self.broadcast(&y));
            self.result = Some(y);
            self.phase = Phase::Done;
        }
    }

    fn merge_shares(&mut self, out: &mut Vec<ProtocolMessage>) {
        let me = self.logical();
        let senders: Vec<PartyId> = self.session.share_senders(me).map(|j| self.session.physical(j)).collect();
        if !senders.iter().all(|&p| self.has(MessageKind::Share, 0, p)) {
            return;
        }
        let mut merged = self.kept.clone().expect("kept share set at start");
        for p in senders {
            let share = self.take(MessageKind::Share, 0, p).expect("checked");
            merged.add_assign(&share).expect("validated shape");
        }
        out.push(self.message(MessageKind::MergedShare, 0, self.session.collector(), merged));
        self.phase = Phase::AwaitingResult;
    }

    fn collect_merged(&mut self, out: &mut Vec<ProtocolMessage>) {
        let others: Vec<PartyId> = (1..self.session.n).map(|j| self.session.physical(j)).collect();
        if !others.iter().all(|&p| self.has(MessageKind::MergedShare, 0, p)) {
            return;
        }
        let mut y = self.input.clone();
        for p in others {
            let merged = self.take(MessageKind::MergedShare, 0, p).expect("checked");
            y.add_assign(&merged).expect("validated shape");
        }
        out.extend(self.broadcast(&y));
        self.result = Some(y);
        self.phase = Phase::Done;
    }

    /// Names the first message this party is still waiting for, as the error
    /// a driver reports when the round can make no further progress.
    pub fn stall_error(&self) -> Option<ProtocolError> {
        let s = &self.session;
        let me = self.logical();
        let missing = |kind: MessageKind, from: PartyId| ProtocolError::Incomplete { party: self.id, kind, missing: from };
        match self.phase {
            Phase::Done => None,
            Phase::Start => Some(self.role_err("finish", "never started")),
            Phase::AwaitingPartial => (0..s.segments()).find(|&seg| !self.forwarded[seg]).map(|seg| {
                let order = &s.segment_orders()[seg];
                let pos = order.iter().position(|&j| j == me).expect("order covers all parties");
                missing(MessageKind::PartialSum, s.physical(order[pos - 1]))
            }),
            Phase::AwaitingFinal => (0..s.segments()).find(|&seg| self.finals[seg].is_none()).map(|seg| {
                let order = &s.segment_orders()[seg];
                missing(MessageKind::PartialSum, s.physical(order[order.len() - 1]))
            }),
            Phase::AwaitingShares => s
                .share_senders(me)
                .map(|j| s.physical(j))
                .find(|&p| !self.has(MessageKind::Share, 0, p))
                .map(|p| missing(MessageKind::Share, p)),
            Phase::AwaitingMerged => (1..s.n)
                .map(|j| s.physical(j))
                .find(|&p| !self.has(MessageKind::MergedShare, 0, p))
                .map(|p| missing(MessageKind::MergedShare, p)),
            Phase::AwaitingResult => Some(missing(s.result_kind, s.collector())),
        }
    }
}

/// Master's first move in the ring protocol: mask x_0 and send it on.
pub fn ring_sum_init(state: &mut PartyState) -> Result<Vec<ProtocolMessage>, ProtocolError> {
    if state.session.protocol != Protocol::Ring {
        return Err(state.role_err("run ring_sum_init", format!("session runs {}", state.session.protocol)));
    }
    if !state.is_master() {
        return Err(state.role_err("run ring_sum_init", "not the master"));
    }
    state.start()
}

/// Processes one ring-protocol message.
pub fn ring_sum_step(state: &mut PartyState, msg: ProtocolMessage) -> Result<Vec<ProtocolMessage>, ProtocolError> {
    if state.session.protocol != Protocol::Ring {
        return Err(state.role_err("run ring_sum_step", format!("session runs {}", state.session.protocol)));
    }
    if state.phase == Phase::Start && !state.is_master() {
        // non-masters have nothing to send before the first partial arrives
        state.start()?;
    }
    state.handle(msg)
}
