//! Self-check suite: every check compares an implementation against an
//! independent oracle and reports pass/fail.

use rand::Rng;
use serde::Serialize;

use crate::costmodel::{self, SchemeParams};
use crate::federation::{run_federation, AggregatorMode, FederationConfig};
use crate::neuralnet::{Activation, Architecture, Batch, Head, Model, Target};
use crate::paillier::{dec, dec_textbook, enc, keygen, KeyMode};
use crate::protocols::{
    expected_message_bits, message_bits, run_in_memory, MessageKind, PartyId, PartyState, Protocol, SessionId,
    SumSession,
};
use crate::ring::{FixedPointCodec, RingModulus, RingVector};
use crate::rng::RandomSource;
use crate::transport::{run_local, BandwidthModel, ChannelConfig, Cipher, KeyStore, SimNetwork};

#[derive(Clone, Copy, Debug)]
#[derive(Default)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Fewer instances; finishes in seconds.
    pub quick: bool,
    /// Corrupts one share in the first sum instance. The sum check must fail.
    pub inject_fault: bool,
}


#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Protocol variants exercised by the sum checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Ring,
    Segmented(usize),
    UrabeFull,
    /// Urabe with a window of `n − 2` (the widest proper bound).
    UrabeBounded,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Ring, Variant::Segmented(2), Variant::Segmented(5), Variant::UrabeFull, Variant::UrabeBounded];

    pub fn session(self, n: usize, m: RingModulus, len: usize, rng: &mut RandomSource) -> SumSession {
        match self {
            Variant::Ring => SumSession::ring(n, m, len),
            Variant::Segmented(k) => SumSession::segmented(n, m, len, k, rng),
            Variant::UrabeFull => SumSession::urabe(n, m, len),
            Variant::UrabeBounded => SumSession::urabe_bounded(n, m, len, (n - 2).max(1)),
        }
        .expect("valid parameters")
    }

    pub fn name(self) -> String {
        match self {
            Variant::Ring => "ring".into(),
            Variant::Segmented(k) => format!("segmented_k{k}"),
            Variant::UrabeFull => "urabe".into(),
            Variant::UrabeBounded => "urabe_bounded".into(),
        }
    }
}

/// One random secure-sum instance: returns (secure result per party, plain sum).
pub fn random_sum_instance(
    variant: Variant,
    n: usize,
    len: usize,
    modulus: RingModulus,
    rng: &mut RandomSource,
    net: Option<&SimNetwork>,
) -> Result<(Vec<RingVector>, RingVector), String> {
    let session = variant.session(n, modulus, len, rng).with_id(SessionId::random(rng));
    let inputs: Vec<RingVector> = (0..n).map(|_| RingVector::random(modulus, len, rng)).collect();
    let mut plain = RingVector::zeros(modulus, len);
    for v in &inputs {
        plain.add_assign(v).map_err(|e| e.to_string())?;
    }
    let mut states = inputs
        .into_iter()
        .enumerate()
        .map(|(i, v)| PartyState::new(PartyId(i as u32), session.clone(), v, rng.child(i as u64)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let results = match net {
        Some(net) => run_local(&mut states, net).map_err(|e| e.to_string())?.results,
        None => run_in_memory(&mut states).map_err(|e| e.to_string())?.results,
    };
    Ok((results, plain))
}

/// Norm-wise relative error between backprop and central differences:
/// `‖g − ĝ‖ / max(‖g‖ + ‖ĝ‖, 1e-12)`.
pub fn finite_difference_error(model: &Model, batch: &Batch, h: f64) -> f64 {
    let g = model.backward(batch).expect("valid batch").values;
    let mut probe = model.clone();
    let base = model.flatten();
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (i, &gi) in g.iter().enumerate() {
        let mut w = base.clone();
        w[i] = base[i] + h;
        probe.unflatten(&w).expect("same length");
        let up = probe.loss_sum(batch).expect("valid batch");
        w[i] = base[i] - h;
        probe.unflatten(&w).expect("same length");
        let down = probe.loss_sum(batch).expect("valid batch");
        let fd = (up - down) / (2.0 * h);
        diff += (gi - fd).powi(2);
        norm += gi * gi + fd * fd;
    }
    diff.sqrt() / norm.sqrt().max(1e-12)
}

/// A random small network and batch for gradient checks.
pub fn random_net(head: Head, rng: &mut RandomSource) -> (Model, Batch) {
    let layers = vec![rng.gen_range(2..5), rng.gen_range(2..6), rng.gen_range(2..4)];
    let activation = [Activation::Relu, Activation::Sigmoid, Activation::Tanh][rng.gen_range(0..3)];
    let arch = Architecture { layers: layers.clone(), activation, head };
    let model = Model::init(arch, rng.gen()).expect("valid architecture");
    let rows = rng.gen_range(1..5);
    let inputs = (0..rows * layers[0]).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let targets = match head {
        Head::SoftmaxCrossEntropy => Target::Labels((0..rows).map(|_| rng.gen_range(0..layers[2])).collect()),
        Head::LinearMse => Target::Values((0..rows * layers[2]).map(|_| rng.gen_range(-1.0..1.0)).collect()),
    };
    (model, Batch::new(layers[0], inputs, targets).expect("consistent shapes"))
}

fn check(name: &'static str, outcome: Result<String, String>) -> CheckResult {
    match outcome {
        Ok(detail) => CheckResult { name, passed: true, detail },
        Err(detail) => CheckResult { name, passed: false, detail },
    }
}

fn sum_equivalence(cfg: &VerifyConfig) -> Result<String, String> {
    let m = RingModulus::new(32).expect("valid");
    let mut rng = RandomSource::seeded(cfg.seed).child(10);
    let per_variant = if cfg.quick { 40 } else { 1000 };
    let keys = KeyStore::generate(10, &mut rng);
    for variant in Variant::ALL {
        for inst in 0..per_variant {
            let n = rng.gen_range(3..=10);
            let len = if rng.gen_bool(0.5) { 1 } else { 64 };
            let faulty = cfg.inject_fault && inst == 0;
            let net = if faulty {
                let net = SimNetwork::new(
                    n,
                    m,
                    ChannelConfig::simulated(Cipher::Aes128Aead),
                    keys.clone(),
                    BandwidthModel::default(),
                )
                .map_err(|e| e.to_string())?;
                let kind = match variant {
                    Variant::Ring | Variant::Segmented(_) => MessageKind::PartialSum,
                    Variant::UrabeFull | Variant::UrabeBounded => MessageKind::MergedShare,
                };
                net.inject_fault(kind);
                Some(net)
            } else {
                None
            };
            let (results, plain) = random_sum_instance(variant, n, len, m, &mut rng, net.as_ref())?;
            if let Some(bad) = results.iter().position(|r| r != &plain) {
                return Err(format!("{} n={n} len={len}: party {bad} got a wrong sum", variant.name()));
            }
        }
    }
    Ok(format!("{} instances per protocol", per_variant))
}

fn codec_roundtrip(cfg: &VerifyConfig) -> Result<String, String> {
    let mut rng = RandomSource::seeded(cfg.seed).child(11);
    let codec = FixedPointCodec::default();
    let bound = codec.magnitude_bound();
    let count = if cfg.quick { 2_000 } else { 100_000 };
    for _ in 0..count {
        let x = rng.gen_range(-bound..=bound);
        let e = codec.encode(x).map_err(|e| e.to_string())?;
        let err = (codec.decode(e) - x).abs();
        if err > codec.resolution() {
            return Err(format!("decode(encode({x})) off by {err}"));
        }
    }
    // sums of encodings decode to the real sum up to n rounding errors
    let n = 3;
    for _ in 0..count / 10 {
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound / n as f64..bound / n as f64)).collect();
        let mut acc = RingVector::zeros(codec.modulus, 1);
        for &x in &xs {
            acc.add_assign(&codec.encode_vector(&[x]).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        }
        let err = (codec.decode_vector(&acc)[0] - xs.iter().sum::<f64>()).abs();
        if err > n as f64 * codec.resolution() {
            return Err(format!("sum of {xs:?} decoded off by {err}"));
        }
    }
    Ok(format!("{count} round trips"))
}

fn gradient_checks(cfg: &VerifyConfig) -> Result<String, String> {
    let mut rng = RandomSource::seeded(cfg.seed).child(12);
    let nets = if cfg.quick { 10 } else { 50 };
    let mut worst: f64 = 0.0;
    for head in [Head::SoftmaxCrossEntropy, Head::LinearMse] {
        for _ in 0..nets {
            let (model, batch) = random_net(head, &mut rng);
            let err = finite_difference_error(&model, &batch, 1e-5);
            worst = worst.max(err);
            if err >= 1e-4 {
                return Err(format!("{head:?} {:?}: relative error {err:e}", model.layer_sizes()));
            }
        }
    }
    Ok(format!("worst relative error {worst:.2e}"))
}

fn cross_scheme(cfg: &VerifyConfig) -> Result<String, String> {
    let base = FederationConfig {
        n: 3,
        batch: 6,
        max_iterations: if cfg.quick { 2 } else { 5 },
        architecture: Architecture { layers: vec![4, 6, 3], ..Default::default() },
        paillier_bits: 256,
        seed: cfg.seed,
        ..Default::default()
    };
    let mut weights = Vec::new();
    for mode in [AggregatorMode::Sua, AggregatorMode::Paillier, AggregatorMode::Plaintext] {
        let r = run_federation(FederationConfig { aggregator: mode, ..base.clone() }).map_err(|e| e.to_string())?;
        weights.push((mode, r.model.to_checkpoint_bytes()));
    }
    for (mode, w) in &weights[1..] {
        if w != &weights[0].1 {
            return Err(format!("{mode} weights differ from sua"));
        }
    }
    Ok("sua, paillier and plaintext agree bit-exactly".into())
}

fn urabe_accounting(cfg: &VerifyConfig) -> Result<String, String> {
    let m = RingModulus::new(32).expect("valid");
    let mut rng = RandomSource::seeded(cfg.seed).child(13);
    let top = if cfg.quick { 10 } else { 20 };
    for n in 3..=top {
        let len = 4;
        let session = SumSession::urabe(n, m, len).map_err(|e| e.to_string())?;
        let mut states = (0..n)
            .map(|i| {
                PartyState::new(PartyId(i as u32), session.clone(), RingVector::random(m, len, &mut rng), rng.child(i as u64))
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let exec = run_in_memory(&mut states).map_err(|e| e.to_string())?;
        let bits = message_bits(&exec.trace).map_err(|e| e.to_string())?;
        let want = (n * (n - 1) / 2 * 32 * len) as u64;
        if bits != want || bits != expected_message_bits(&session) {
            return Err(format!("n={n}: {bits} payload bits, expected {want}"));
        }
    }
    Ok(format!("n = 3..={top}"))
}

fn cost_factors(_: &VerifyConfig) -> Result<String, String> {
    let p = SchemeParams::default();
    let lwe = costmodel::factor_lwe(&p).map_err(|e| e.to_string())?;
    let hres = costmodel::factor_hres(&p).map_err(|e| e.to_string())?;
    let sua = costmodel::factor_sua(&p).map_err(|e| e.to_string())?;
    if (lwe - 3.07).abs() > 0.01 || (hres - 6.0).abs() > 0.001 || sua != 2.25 {
        return Err(format!("factors lwe={lwe} hres={hres} sua={sua}"));
    }
    if costmodel::baseline_bits(&p) != 3_500_352 {
        return Err("baseline size".into());
    }
    Ok(format!("lwe={lwe:.4} hres={hres:.7} sua={sua}"))
}

fn paillier_roundtrip(cfg: &VerifyConfig) -> Result<String, String> {
    let mut rng = RandomSource::seeded(cfg.seed).child(14);
    let kp = keygen(256, KeyMode::Test, &mut rng).map_err(|e| e.to_string())?;
    for _ in 0..if cfg.quick { 10 } else { 100 } {
        let m = num_bigint::RandBigInt::gen_biguint_below(&mut rng, kp.public.n());
        let c = enc(&m, &kp.public, &mut rng).map_err(|e| e.to_string())?;
        let (a, b) = (dec(&c, &kp).map_err(|e| e.to_string())?, dec_textbook(&c, &kp).map_err(|e| e.to_string())?);
        if a != m || b != m {
            return Err("decryption mismatch".into());
        }
    }
    Ok("crt and textbook decryption agree".into())
}

/// Runs every check in a fixed order.
pub fn run_suite(cfg: &VerifyConfig) -> Vec<CheckResult> {
    vec![
        check("sum_equivalence", sum_equivalence(cfg)),
        check("codec_roundtrip", codec_roundtrip(cfg)),
        check("gradient_check", gradient_checks(cfg)),
        check("cross_scheme_equivalence", cross_scheme(cfg)),
        check("urabe_accounting", urabe_accounting(cfg)),
        check("cost_factors", cost_factors(cfg)),
        check("paillier_roundtrip", paillier_roundtrip(cfg)),
    ]
}

/// The protocol family a variant belongs to.
pub fn variant_protocol(v: Variant) -> Protocol {
    match v {
        Variant::Ring => Protocol::Ring,
        Variant::Segmented(_) => Protocol::Segmented,
        Variant::UrabeFull | Variant::UrabeBounded => Protocol::Urabe,
    }
}
