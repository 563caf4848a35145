use std::time::Duration;

use proptest::prelude::*;
use sua_core::protocols::{
    expected_message_bits, message_bits, run_in_memory, MessageKind, PartyId, PartyState, SessionId, SumSession,
};
use sua_core::ring::{RingModulus, RingVector};
use sua_core::rng::RandomSource;
use sua_core::transport::{run_local, run_threaded, BandwidthModel, ChannelConfig, Cipher, KeyStore, SimNetwork, TcpNetwork};
use sua_core::verify::{random_sum_instance, Variant};

fn states(session: &SumSession, inputs: &[RingVector], seed: u64) -> Vec<PartyState> {
    let mut rng = RandomSource::seeded(seed);
    inputs
        .iter()
        .enumerate()
        .map(|(i, v)| PartyState::new(PartyId(i as u32), session.clone(), v.clone(), rng.child(i as u64)).unwrap())
        .collect()
}

fn plain_sum(m: RingModulus, inputs: &[RingVector]) -> RingVector {
    let mut acc = RingVector::zeros(m, inputs[0].len());
    for v in inputs {
        acc.add_assign(v).unwrap();
    }
    acc
}

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![
        Just(Variant::Ring),
        (2usize..6).prop_map(Variant::Segmented),
        Just(Variant::UrabeFull),
        Just(Variant::UrabeBounded),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn every_party_learns_the_plain_sum(v in variant(), n in 3usize..9, len in 1usize..20, bits in 1u32..=64, seed: u64) {
        let m = RingModulus::new(bits).unwrap();
        let mut rng = RandomSource::seeded(seed);
        let (results, plain) = random_sum_instance(v, n, len, m, &mut rng, None).unwrap();
        prop_assert_eq!(results.len(), n);
        for r in results {
            prop_assert_eq!(&r, &plain);
        }
    }

    #[test]
    fn runs_are_deterministic(v in variant(), n in 3usize..7, seed: u64) {
        let m = RingModulus::new(32).unwrap();
        let run = || {
            let mut rng = RandomSource::seeded(seed);
            let session = v.session(n, m, 3, &mut rng).with_id(SessionId::random(&mut rng));
            let inputs: Vec<_> = (0..n).map(|_| RingVector::random(m, 3, &mut rng)).collect();
            let mut s = states(&session, &inputs, seed);
            run_in_memory(&mut s).unwrap().trace.digest_hex()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn protocol_bits_match_closed_form(v in variant(), n in 3usize..12, len in 1usize..8) {
        let m = RingModulus::new(32).unwrap();
        let mut rng = RandomSource::seeded(1);
        let session = v.session(n, m, len, &mut rng);
        let inputs: Vec<_> = (0..n).map(|_| RingVector::random(m, len, &mut rng)).collect();
        let mut s = states(&session, &inputs, 2);
        let exec = run_in_memory(&mut s).unwrap();
        prop_assert_eq!(message_bits(&exec.trace).unwrap(), expected_message_bits(&session));
        prop_assert_eq!(exec.trace.count(MessageKind::Result), n - 1);
    }
}

#[test]
fn urabe_payload_is_half_the_pairs() {
    let m = RingModulus::new(32).unwrap();
    for n in 3..=20usize {
        for len in [1usize, 64] {
            let session = SumSession::urabe(n, m, len).unwrap();
            let mut rng = RandomSource::seeded(n as u64);
            let inputs: Vec<_> = (0..n).map(|_| RingVector::random(m, len, &mut rng)).collect();
            let mut s = states(&session, &inputs, 0);
            let exec = run_in_memory(&mut s).unwrap();
            assert_eq!(message_bits(&exec.trace).unwrap(), (n * (n - 1) / 2 * 32 * len) as u64);
            assert_eq!(exec.trace.broadcast_bits(), ((n - 1) * 32 * len) as u64);
        }
    }
}

#[test]
fn bounded_urabe_sends_fewer_shares() {
    let m = RingModulus::new(32).unwrap();
    let n = 8;
    let full = expected_message_bits(&SumSession::urabe(n, m, 1).unwrap());
    let mut last = 0;
    for k in 1..=n - 2 {
        let session = SumSession::urabe_bounded(n, m, 1, k).unwrap();
        let bits = expected_message_bits(&session);
        assert!(bits >= last && bits <= full, "k={k}");
        last = bits;
        for i in 1..n {
            assert!(session.share_count(i) <= k + 1);
        }
        let inputs: Vec<_> = (0..n as u64).map(|i| RingVector::from_values(m, vec![i * 1000]).unwrap()).collect();
        let mut s = states(&session, &inputs, k as u64);
        assert_eq!(run_in_memory(&mut s).unwrap().results[0].values(), &[28_000]);
    }
    // a window of n − 1 is the full protocol
    assert_eq!(expected_message_bits(&SumSession::urabe_bounded(n, m, 1, n - 1).unwrap()), full);
    assert!(SumSession::urabe_bounded(n, m, 1, n).is_err());
    assert!(SumSession::urabe_bounded(n, m, 1, 0).is_err());
}

#[test]
fn rejects_too_few_parties() {
    let m = RingModulus::new(32).unwrap();
    assert!(SumSession::ring(2, m, 1).is_err());
    assert!(SumSession::urabe(2, m, 1).is_err());
}

#[test]
fn segmented_orders_are_permutations() {
    let m = RingModulus::new(32).unwrap();
    let mut rng = RandomSource::seeded(5);
    let s = SumSession::segmented(7, m, 10, 4, &mut rng).unwrap();
    assert_eq!(s.segments(), 4);
    for order in s.physical_orders() {
        let mut ids: Vec<u32> = order.iter().map(|p| p.0).collect();
        ids.sort();
        assert_eq!(ids, (0..7).collect::<Vec<_>>());
    }
}

fn sim(n: usize, m: RingModulus, cipher: Cipher) -> SimNetwork {
    let keys = KeyStore::generate(n, &mut RandomSource::seeded(77));
    SimNetwork::new(n, m, ChannelConfig::simulated(cipher), keys, BandwidthModel::default()).unwrap()
}

#[test]
fn sim_network_matches_in_memory_for_every_cipher() {
    let m = RingModulus::new(32).unwrap();
    for cipher in [Cipher::None, Cipher::Aes128Ecb, Cipher::Aes128Aead] {
        for v in Variant::ALL {
            let a = random_sum_instance(v, 6, 9, m, &mut RandomSource::seeded(3), None).unwrap();
            let net = sim(6, m, cipher);
            let b = random_sum_instance(v, 6, 9, m, &mut RandomSource::seeded(3), Some(&net)).unwrap();
            assert_eq!(a, b, "{cipher:?} {}", v.name());
            let ledger = net.ledger();
            assert!(ledger.total_traffic().ciphertext_bits >= ledger.total_traffic().payload_bits);
        }
    }
}

#[test]
fn tcp_matches_sim() {
    let m = RingModulus::new(32).unwrap();
    let n = 4;
    let mut rng = RandomSource::seeded(21);
    for session in [
        SumSession::ring(n, m, 5).unwrap(),
        SumSession::segmented(n, m, 5, 2, &mut rng).unwrap(),
        SumSession::urabe(n, m, 5).unwrap(),
        SumSession::urabe_bounded(n, m, 5, 1).unwrap(),
    ] {
        let inputs: Vec<_> = (0..n).map(|_| RingVector::random(m, 5, &mut rng)).collect();
        let keys = KeyStore::generate(n, &mut rng);
        let (net, endpoints) =
            TcpNetwork::bind(n, m, ChannelConfig::real(Cipher::Aes128Aead), keys, BandwidthModel::default()).unwrap();
        let outcomes = run_threaded(states(&session, &inputs, 9), endpoints, Duration::from_secs(10)).unwrap();
        let want = plain_sum(m, &inputs);
        for o in &outcomes {
            assert_eq!(o.result, want);
        }
        let sim_net = sim(n, m, Cipher::Aes128Aead);
        let mut s = states(&session, &inputs, 9);
        run_local(&mut s, &sim_net).unwrap();
        assert_eq!(net.ledger().total_traffic().payload_bits, sim_net.ledger().total_traffic().payload_bits);
    }
}

#[test]
fn corrupted_message_breaks_the_sum() {
    let m = RingModulus::new(32).unwrap();
    for (v, kind) in [(Variant::Ring, MessageKind::PartialSum), (Variant::UrabeFull, MessageKind::MergedShare)] {
        let net = sim(5, m, Cipher::Aes128Aead);
        net.inject_fault(kind);
        let (results, plain) = random_sum_instance(v, 5, 4, m, &mut RandomSource::seeded(8), Some(&net)).unwrap();
        assert!(results.iter().any(|r| r != &plain), "{}", v.name());
    }
}

#[test]
fn mismatched_sessions_fail_instead_of_hanging() {
    let m = RingModulus::new(32).unwrap();
    let mut rng = RandomSource::seeded(4);
    let inputs: Vec<_> = (0..3).map(|_| RingVector::random(m, 2, &mut rng)).collect();
    let a = SumSession::urabe(3, m, 2).unwrap().with_id(SessionId::random(&mut rng));
    let b = a.clone().with_id(SessionId::random(&mut rng));
    let mut s = states(&a, &inputs, 1);
    s[2] = PartyState::new(PartyId(2), b, inputs[2].clone(), rng.child(2)).unwrap();
    assert!(run_in_memory(&mut s).is_err());
}

#[test]
fn stalled_party_times_out() {
    let m = RingModulus::new(32).unwrap();
    let n = 3;
    let mut rng = RandomSource::seeded(6);
    let session = SumSession::ring(n, m, 1).unwrap();
    let inputs: Vec<_> = (0..n).map(|_| RingVector::random(m, 1, &mut rng)).collect();
    let keys = KeyStore::generate(n, &mut rng);
    let (_net, endpoints) =
        TcpNetwork::bind(n, m, ChannelConfig::real(Cipher::Aes128Aead), keys, BandwidthModel::default()).unwrap();
    // the ring never closes when one party runs a different session
    let mut s = states(&session, &inputs, 0);
    let other = session.clone().with_id(SessionId::random(&mut rng));
    s[1] = PartyState::new(PartyId(1), other, inputs[1].clone(), rng.child(1)).unwrap();
    assert!(run_threaded(s, endpoints, Duration::from_millis(300)).is_err());
}
