use std::collections::VecDeque;

use super::party::split_additive;
use super::{PartyState, Protocol, ProtocolError, ProtocolMessage, SumSession, Trace};
use crate::ring::RingVector;
use crate::rng::RandomSource;

/// Outcome of driving a full session to completion.
#[derive(Clone, Debug)]
pub struct Execution {
    /// Result seen by each physical party, indexed by party id.
    pub results: Vec<RingVector>,
    pub trace: Trace,
    pub messages: Vec<ProtocolMessage>,
}

impl Execution {
    pub fn result(&self) -> &RingVector {
        &self.results[0]
    }
}

pub(crate) fn check_states(states: &[PartyState]) -> Result<(), ProtocolError> {
    let Some(first) = states.first() else {
        return Err(ProtocolError::Parameter("no parties".into()));
    };
    let session = first.session();
    if states.len() != session.n {
        return Err(ProtocolError::Parameter(format!("{} states for {} parties", states.len(), session.n)));
    }
    for (i, s) in states.iter().enumerate() {
        if s.id().index() != i {
            return Err(ProtocolError::Parameter(format!("state {i} belongs to {}", s.id())));
        }
        if s.session() != session {
            return Err(ProtocolError::Parameter(format!("party {} runs a different session", s.id())));
        }
    }
    Ok(())
}

pub(crate) fn finish(states: &[PartyState]) -> Result<Vec<RingVector>, ProtocolError> {
    if let Some(err) = states.iter().find_map(|s| s.stall_error()) {
        return Err(err);
    }
    Ok(states.iter().map(|s| s.result().expect("done").clone()).collect())
}

/// Drives all parties with a single FIFO queue. Deterministic: parties start
/// in index order and messages are delivered in emission order.
pub fn run_in_memory(states: &mut [PartyState]) -> Result<Execution, ProtocolError> {
    check_states(states)?;
    let mut trace = Trace::new(states[0].session().physical_orders());
    let mut messages = Vec::new();
    let mut queue = VecDeque::new();
    for s in states.iter_mut() {
        queue.extend(s.start()?);
    }
    while let Some(msg) = queue.pop_front() {
        trace.record(&msg);
        messages.push(msg.clone());
        let to = msg.to.index();
        queue.extend(states[to].handle(msg)?);
    }
    let results = finish(states)?;
    trace.complete = true;
    Ok(Execution { results, trace, messages })
}

fn collector_result(states: &mut [PartyState]) -> Result<RingVector, ProtocolError> {
    let exec = run_in_memory(states)?;
    let collector = states[0].session().collector().index();
    Ok(exec.results[collector].clone())
}

/// Runs a segmented session to completion and returns the sum.
pub fn segmented_sum_run(states: &mut [PartyState]) -> Result<RingVector, ProtocolError> {
    check_states(states)?;
    if states[0].session().protocol != Protocol::Segmented {
        return Err(ProtocolError::Parameter("segmented_sum_run needs a segmented session".into()));
    }
    collector_result(states)
}

/// Splits `x` into `share_count` additive shares mod l. All but the last are
/// uniform; the last makes the shares sum to `x`.
pub fn urabe_split(x: &RingVector, share_count: usize, rng: &mut RandomSource) -> Result<Vec<RingVector>, ProtocolError> {
    if share_count < 1 {
        return Err(ProtocolError::Parameter("share_count must be at least 1".into()));
    }
    Ok(split_additive(x, share_count, rng))
}

/// Runs a Urabe session (distribution, merging, collection) and returns the
/// collector's result.
pub fn urabe_round(states: &mut [PartyState]) -> Result<RingVector, ProtocolError> {
    check_states(states)?;
    if states[0].session().protocol != Protocol::Urabe {
        return Err(ProtocolError::Parameter("urabe_round needs a urabe session".into()));
    }
    collector_result(states)
}

/// Urabe round with at most `k` share recipients per party, `1 ≤ k ≤ n − 2`.
pub fn urabe_round_bounded(states: &mut [PartyState], k: usize) -> Result<RingVector, ProtocolError> {
    check_states(states)?;
    let session = states[0].session();
    let n = session.n;
    if k < 1 || k > n - 2 {
        return Err(ProtocolError::Parameter(format!("bounded k must be in 1..={}, got {k}", n - 2)));
    }
    if session.protocol != Protocol::Urabe || session.k != Some(k) {
        return Err(ProtocolError::Parameter(format!("session is not a urabe session with k = {k}")));
    }
    collector_result(states)
}

/// Payload bits of every non-broadcast message in a completed trace.
pub fn message_bits(trace: &Trace) -> Result<u64, ProtocolError> {
    if !trace.complete {
        return Err(ProtocolError::SessionIncomplete);
    }
    Ok(trace.protocol_bits())
}

/// Closed-form `(protocol messages, broadcast messages)` for a session.
pub fn expected_message_count(session: &SumSession) -> (usize, usize) {
    let n = session.n;
    let protocol = match session.protocol {
        Protocol::Ring => n,
        Protocol::Segmented => n * session.segments(),
        // shares plus one merged share per non-collector
        Protocol::Urabe => (1..n).map(|i| session.share_count(i)).sum(),
    };
    (protocol, n - 1)
}

/// Closed-form payload bits excluding the final broadcast.
pub fn expected_message_bits(session: &SumSession) -> u64 {
    let per_msg = session.vector_len as u64 * session.modulus.bits() as u64;
    expected_message_count(session).0 as u64 * per_msg
}
