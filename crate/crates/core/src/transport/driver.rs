use std::thread;
use std::time::{Duration, Instant};

use super::{CostPhase, Endpoint, SimNetwork, TransportError};
use crate::protocols::{Execution, PartyState, ProtocolMessage};
use crate::ring::RingVector;

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64())
}

/// Runs a session over a simulated network on the calling thread.
///
/// Deterministic: parties start in index order, then inboxes are drained
/// round-robin by party index until the network is quiet. Protocol compute
/// time is ledgered under [`CostPhase::Add`].
pub fn run_local(states: &mut [PartyState], net: &SimNetwork) -> Result<Execution, TransportError> {
    crate::protocols::runner_check(states)?;
    if states.len() != net.n() {
        return Err(TransportError::Config(format!("{} parties on a {}-party network", states.len(), net.n())));
    }
    let mut endpoints = net.endpoints();
    let mut messages: Vec<ProtocolMessage> = Vec::new();

    let mut send_all = |from: usize, out: Vec<ProtocolMessage>, eps: &mut Vec<super::SimEndpoint>| {
        for m in out {
            eps[from].send(&m)?;
            messages.push(m);
        }
        Ok::<_, TransportError>(())
    };

    for i in 0..states.len() {
        let (out, secs) = timed(|| states[i].start());
        net.add_cpu(states[i].id(), CostPhase::Add, secs);
        send_all(i, out?, &mut endpoints)?;
    }
    loop {
        let mut delivered = false;
        for i in 0..states.len() {
            while let Some(msg) = endpoints[i].try_recv()? {
                delivered = true;
                let (out, secs) = timed(|| states[i].handle(msg));
                net.add_cpu(states[i].id(), CostPhase::Add, secs);
                send_all(i, out?, &mut endpoints)?;
            }
        }
        if !delivered {
            break;
        }
    }
    let results = crate::protocols::runner_finish(states)?;
    net.mark_complete();
    let mut trace = net.trace();
    trace.segment_orders = states[0].session().physical_orders();
    Ok(Execution { results, trace, messages })
}

/// Per-party outcome of a threaded run.
#[derive(Clone, Debug)]
pub struct PartyOutcome {
    pub result: RingVector,
    /// Time spent inside the protocol state machine.
    pub compute_seconds: f64,
}

/// Runs every party on its own thread over arbitrary endpoints. A party that
/// receives nothing for `idle_timeout` aborts with the message it is missing.
pub fn run_threaded<E: Endpoint>(
    states: Vec<PartyState>,
    endpoints: Vec<E>,
    idle_timeout: Duration,
) -> Result<Vec<PartyOutcome>, TransportError> {
    crate::protocols::runner_check(&states)?;
    if endpoints.len() != states.len() || endpoints.iter().zip(&states).any(|(e, s)| e.id() != s.id()) {
        return Err(TransportError::Config("endpoints do not match party states".into()));
    }
    let results: Vec<Result<PartyOutcome, TransportError>> = thread::scope(|scope| {
        let handles: Vec<_> = states
            .into_iter()
            .zip(endpoints)
            .map(|(mut state, mut ep)| {
                scope.spawn(move || {
                    let mut compute = 0.0;
                    let (out, secs) = timed(|| state.start());
                    compute += secs;
                    for m in out? {
                        ep.send(&m)?;
                    }
                    while !state.is_done() {
                        let Some(msg) = ep.recv(idle_timeout)? else {
                            return Err(state.stall_error().map(TransportError::from).unwrap_or(TransportError::Timeout));
                        };
                        let (out, secs) = timed(|| state.handle(msg));
                        compute += secs;
                        for m in out? {
                            ep.send(&m)?;
                        }
                    }
                    Ok(PartyOutcome { result: state.result().expect("done").clone(), compute_seconds: compute })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("party thread panicked")).collect()
    });
    results.into_iter().collect()
}
