//! Per-iteration runtime measurements of the aggregation schemes.
//!
//! Phase columns follow the published table's convention: milliseconds
//! summed over all parties, with server-side work in its own column. The
//! per-party figure is the party phases divided by `n`.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{self, Scheme};
use crate::federation::AggregatorMode;
use crate::neuralnet::{gaussian_blobs, Architecture, Batch, Model, NnError};
use crate::paillier::{
    add_vectors, decrypt_vector, encrypt_vector, encrypt_vector_par, keygen, KeyMode, PackingLayout, PaillierError,
    PaillierKeypair,
};
use crate::protocols::{PartyId, PartyState, ProtocolError, SessionId, SumSession};
use crate::ring::{FixedPointCodec, RingError, RingModulus, RingVector};
use crate::rng::RandomSource;
use crate::transport::{
    non_private_trace, run_local, simulate_session, BandwidthModel, ChannelConfig, Cipher, CostPhase, KeyStore,
    SimNetwork, TransportError,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    Config(String),
    #[error("{scheme} produced a wrong aggregate")]
    WrongSum { scheme: AggregatorMode },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Ring(#[from] RingError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n: usize,
    pub architecture: Architecture,
    /// Global batch |B|, split evenly.
    pub batch: usize,
    pub modulus_bits: u32,
    pub frac_bits: u32,
    pub paillier_bits: u32,
    pub pad: u32,
    pub cipher: Cipher,
    pub reps: usize,
    pub seed: u64,
    pub bandwidth: BandwidthModel,
    /// Largest accepted coefficient of variation of the per-party time.
    pub max_cv: f64,
    pub schemes: Vec<AggregatorMode>,
    /// Worker threads for Paillier encryption; 1 keeps everything on the
    /// calling thread.
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n: 10,
            architecture: Architecture::default(),
            batch: 50,
            modulus_bits: 32,
            frac_bits: 16,
            paillier_bits: 1024,
            pad: 15,
            cipher: Cipher::Aes128Ecb,
            reps: 5,
            seed: 0,
            bandwidth: BandwidthModel::default(),
            max_cv: 0.2,
            schemes: vec![AggregatorMode::Sua, AggregatorMode::Paillier, AggregatorMode::Plaintext],
            threads: 1,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.n < 3 {
            return Err(BenchError::Config(format!("need at least 3 parties, got {}", self.n)));
        }
        if self.reps == 0 || self.threads == 0 {
            return Err(BenchError::Config("reps and threads must be positive".into()));
        }
        if self.batch < self.n {
            return Err(BenchError::Config(format!("batch {} smaller than party count {}", self.batch, self.n)));
        }
        self.architecture.validate()?;
        FixedPointCodec::new(RingModulus::new(self.modulus_bits)?, self.frac_bits)?;
        Ok(())
    }
}

/// Milliseconds per phase, summed over parties.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PhaseTimes {
    pub train: f64,
    pub encrypt: f64,
    pub add: f64,
    pub decrypt: f64,
    pub communicate: f64,
    pub server: f64,
}

impl PhaseTimes {
    fn fields(&self) -> [f64; 6] {
        [self.train, self.encrypt, self.add, self.decrypt, self.communicate, self.server]
    }

    fn from_fields(f: [f64; 6]) -> Self {
        Self { train: f[0], encrypt: f[1], add: f[2], decrypt: f[3], communicate: f[4], server: f[5] }
    }

    pub fn party_total(&self) -> f64 {
        self.train + self.encrypt + self.add + self.decrypt + self.communicate
    }

    pub fn per_party(&self, n: usize) -> f64 {
        self.party_total() / n as f64
    }

    /// Encode, encrypt, party-side aggregation, decrypt and decode per party.
    pub fn crypto_per_party(&self, n: usize) -> f64 {
        (self.encrypt + self.add + self.decrypt) / n as f64
    }

    pub fn total(&self) -> f64 {
        self.party_total() + self.server
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Measured,
    Published,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub scheme: String,
    pub source: Source,
    /// Repetition index; `None` marks the median row.
    pub rep: Option<usize>,
    pub times: PhaseTimes,
    pub per_party_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub n: usize,
    pub params: usize,
    pub rows: Vec<BenchRow>,
    /// Schemes whose per-party time varied more than allowed, with the
    /// observed coefficient of variation.
    pub unstable: Vec<(AggregatorMode, f64)>,
}

pub const CSV_HEADER: &str =
    "scheme,source,rep,train_ms,encrypt_ms,add_ms,decrypt_ms,communicate_ms,per_party_ms,server_ms,total_ms";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

impl BenchReport {
    pub fn median(&self, scheme: AggregatorMode) -> Option<&BenchRow> {
        let name = scheme.to_string();
        self.rows.iter().find(|r| r.source == Source::Measured && r.rep.is_none() && r.scheme == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let t = &r.times;
            out.push_str(&format!(
                "{},measured,{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
                r.scheme,
                r.rep.map(|i| i.to_string()).unwrap_or_else(|| "median".into()),
                t.train,
                t.encrypt,
                t.add,
                t.decrypt,
                t.communicate,
                r.per_party_ms,
                t.server,
                r.total_ms
            ));
        }
        for p in &costmodel::PUBLISHED_RUNTIMES {
            out.push_str(&format!(
                "{},published,,{:.1},{},{},{},{:.1},{:.1},{},{:.1}\n",
                p.scheme.as_str(),
                p.train,
                opt(p.encrypt),
                opt(p.add),
                opt(p.decrypt),
                p.communicate,
                p.per_party,
                opt(p.server),
                p.total
            ));
        }
        out
    }
}

/// Inputs shared by every repetition.
struct Workload {
    model: Model,
    batches: Vec<Batch>,
    codec: FixedPointCodec,
    encoded: Vec<RingVector>,
    plain_sum: RingVector,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl Workload {
    fn new(cfg: &BenchConfig) -> Result<Self, BenchError> {
        let model = Model::init(cfg.architecture.clone(), cfg.seed)?;
        let dim = cfg.architecture.layers[0];
        let classes = *cfg.architecture.layers.last().expect("validated");
        let mut rng = RandomSource::seeded(cfg.seed).child(1);
        let data = gaussian_blobs(cfg.batch, dim, classes, 1.0, 1.0, &mut rng)?;
        let (q, r) = (cfg.batch / cfg.n, cfg.batch % cfg.n);
        let mut batches = Vec::with_capacity(cfg.n);
        let mut off = 0;
        for i in 0..cfg.n {
            let s = q + usize::from(i < r);
            batches.push(data.slice(off..off + s));
            off += s;
        }
        let codec = FixedPointCodec::new(RingModulus::new(cfg.modulus_bits)?, cfg.frac_bits)?;
        let bound = codec.magnitude_bound() / cfg.n as f64;
        let mut encoded = Vec::with_capacity(cfg.n);
        for b in &batches {
            let g = model.backward(b)?;
            let clipped: Vec<f64> = g.values.iter().map(|x| x.clamp(-bound, bound)).collect();
            encoded.push(codec.encode_vector(&clipped)?);
        }
        let mut plain_sum = RingVector::zeros(codec.modulus, model.parameter_count());
        for v in &encoded {
            plain_sum.add_assign(v)?;
        }
        Ok(Self { model, batches, codec, encoded, plain_sum })
    }

    fn train(&self) -> Result<f64, BenchError> {
        let mut total = 0.0;
        for b in &self.batches {
            let t = Instant::now();
            std::hint::black_box(self.model.backward(b)?);
            total += ms(t);
        }
        Ok(total)
    }

    fn clip_encode(&self, i: usize, n: usize) -> Result<(RingVector, f64), BenchError> {
        let bound = self.codec.magnitude_bound() / n as f64;
        let g = self.model.backward(&self.batches[i])?;
        let t = Instant::now();
        let clipped: Vec<f64> = g.values.iter().map(|x| x.clamp(-bound, bound)).collect();
        let v = self.codec.encode_vector(&clipped)?;
        Ok((v, ms(t)))
    }
}

fn measure_sua(cfg: &BenchConfig, w: &Workload, keys: &KeyStore, rep: usize) -> Result<PhaseTimes, BenchError> {
    let n = cfg.n;
    let modulus = w.codec.modulus;
    let mut times = PhaseTimes { train: w.train()?, ..Default::default() };
    let mut rng = RandomSource::seeded(cfg.seed).child(100 + rep as u64);
    let session = SumSession::urabe(n, modulus, w.model.parameter_count())?
        .with_id(SessionId::random(&mut rng))
        .with_round(rep as u32)
        .rotated(rep as u64);
    let mut states = Vec::with_capacity(n);
    for i in 0..n {
        let (v, enc_ms) = w.clip_encode(i, n)?;
        times.encrypt += enc_ms;
        states.push(PartyState::new(PartyId(i as u32), session.clone(), v, rng.child(i as u64 + 1))?);
    }
    let net = SimNetwork::new(n, modulus, ChannelConfig::simulated(cfg.cipher), keys.clone(), cfg.bandwidth)?;
    let exec = run_local(&mut states, &net)?;
    let ledger = net.ledger();
    for (_, c) in ledger.parties() {
        times.encrypt += c.seconds(CostPhase::Encrypt) * 1e3;
        times.add += c.seconds(CostPhase::Add) * 1e3;
        times.decrypt += c.seconds(CostPhase::Decrypt) * 1e3;
        times.communicate += c.sim_comm_seconds * 1e3;
    }
    for r in &exec.results {
        let t = Instant::now();
        std::hint::black_box(w.codec.decode_vector(r));
        times.decrypt += ms(t);
        if r != &w.plain_sum {
            return Err(BenchError::WrongSum { scheme: AggregatorMode::Sua });
        }
    }
    Ok(times)
}

struct PaillierSetup {
    kp: PaillierKeypair,
    layout: PackingLayout,
    /// Encryption of the other parties' combined input, standing in for
    /// their individual uploads.
    others: Vec<crate::paillier::Ciphertext>,
}

impl PaillierSetup {
    fn new(cfg: &BenchConfig, w: &Workload) -> Result<Self, BenchError> {
        let mut rng = RandomSource::seeded(cfg.seed).child(3);
        let mode = if cfg.paillier_bits >= 1024 { KeyMode::Benchmark } else { KeyMode::Test };
        let kp = keygen(cfg.paillier_bits, mode, &mut rng)?;
        let layout = PackingLayout::new(cfg.modulus_bits, cfg.pad, kp.public.bits())?;
        layout.check_headroom(cfg.n)?;
        let mut rest = RingVector::zeros(w.codec.modulus, w.model.parameter_count());
        for v in &w.encoded[1..] {
            rest.add_assign(v)?;
        }
        let others = encrypt_vector_par(rest.values(), &layout, &kp.public, &mut rng)?;
        Ok(Self { kp, layout, others })
    }
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads <= 1 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn measure_paillier(cfg: &BenchConfig, w: &Workload, s: &PaillierSetup, rep: usize) -> Result<PhaseTimes, BenchError> {
    let n = cfg.n as f64;
    let pk = &s.kp.public;
    let mut rng = RandomSource::seeded(cfg.seed).child(200 + rep as u64);
    let mut times = PhaseTimes { train: w.train()?, ..Default::default() };

    // every party does the same work; party 0 is timed and stands for all
    let (v, enc_ms) = w.clip_encode(0, cfg.n)?;
    let t = Instant::now();
    let cts = with_threads(cfg.threads, || {
        if cfg.threads <= 1 {
            encrypt_vector(v.values(), &s.layout, pk, &mut rng)
        } else {
            encrypt_vector_par(v.values(), &s.layout, pk, &mut rng)
        }
    })?;
    times.encrypt = (enc_ms + ms(t)) * n;

    let t = Instant::now();
    let summed = add_vectors(&[cts.clone(), s.others.clone()], pk)?;
    // the server folds in n − 1 vectors; one fold is timed
    times.server = ms(t) * (n - 1.0);

    let t = Instant::now();
    let values = decrypt_vector(&summed, v.len(), &s.layout, &s.kp)?;
    let sum = RingVector::from_values(w.codec.modulus, values)?;
    std::hint::black_box(w.codec.decode_vector(&sum));
    times.decrypt = ms(t) * n;
    if sum != w.plain_sum {
        return Err(BenchError::WrongSum { scheme: AggregatorMode::Paillier });
    }
    let ct_bits = pk.ciphertext_bytes() as u64 * 8 * cts.len() as u64;
    times.communicate = cfg.bandwidth.transfer_seconds(2 * ct_bits) * 1e3 * n;
    Ok(times)
}

fn measure_plaintext(cfg: &BenchConfig, w: &Workload) -> Result<PhaseTimes, BenchError> {
    let mut times = PhaseTimes { train: w.train()?, ..Default::default() };
    let grads: Vec<Vec<f64>> = w.batches.iter().map(|b| w.model.backward(b).map(|g| g.values)).collect::<Result<_, _>>()?;
    let t = Instant::now();
    let mut sum = vec![0.0; w.model.parameter_count()];
    for g in &grads {
        for (s, x) in sum.iter_mut().zip(g) {
            *s += x;
        }
    }
    std::hint::black_box(&sum);
    times.server = ms(t);
    let trace = non_private_trace(cfg.n, w.model.parameter_count(), w.codec.modulus);
    let ledger = simulate_session(&trace, &cfg.bandwidth, Cipher::None);
    times.communicate = ledger.sim_comm_total() * 1e3;
    Ok(times)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

fn coefficient_of_variation(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    if mean == 0.0 {
        0.0
    } else {
        var.sqrt() / mean
    }
}

/// Runs `cfg.reps` repetitions of every configured scheme on the calling
/// thread and appends a median row per scheme.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let w = Workload::new(cfg)?;
    let mut rows = Vec::new();
    let mut unstable = Vec::new();
    for &scheme in &cfg.schemes {
        let keys = KeyStore::generate(cfg.n, &mut RandomSource::seeded(cfg.seed).child(2));
        let setup = match scheme {
            AggregatorMode::Paillier => Some(PaillierSetup::new(cfg, &w)?),
            _ => None,
        };
        let mut reps = Vec::with_capacity(cfg.reps);
        for rep in 0..cfg.reps {
            let t = match scheme {
                AggregatorMode::Sua => measure_sua(cfg, &w, &keys, rep)?,
                AggregatorMode::Paillier => measure_paillier(cfg, &w, setup.as_ref().expect("set up"), rep)?,
                AggregatorMode::Plaintext => measure_plaintext(cfg, &w)?,
            };
            reps.push(t);
        }
        let per_party: Vec<f64> = reps.iter().map(|t| t.per_party(cfg.n)).collect();
        let cv = coefficient_of_variation(&per_party);
        if cv > cfg.max_cv {
            unstable.push((scheme, cv));
        }
        let med = PhaseTimes::from_fields(std::array::from_fn(|k| median(reps.iter().map(|t| t.fields()[k]).collect())));
        for (i, t) in reps.into_iter().enumerate().map(|(i, t)| (Some(i), t)).chain([(None, med)]) {
            rows.push(BenchRow {
                scheme: scheme.to_string(),
                source: Source::Measured,
                rep: i,
                per_party_ms: t.per_party(cfg.n),
                total_ms: t.total(),
                times: t,
            });
        }
    }
    Ok(BenchReport { n: cfg.n, params: cfg.architecture.parameter_count(), rows, unstable })
}

/// Published scheme the measured one is compared against.
pub fn published_counterpart(scheme: AggregatorMode) -> Scheme {
    match scheme {
        AggregatorMode::Sua => Scheme::Sua,
        AggregatorMode::Paillier => Scheme::Lwe,
        AggregatorMode::Plaintext => Scheme::NonPrivate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BenchConfig {
        BenchConfig {
            n: 3,
            architecture: Architecture { layers: vec![6, 5, 3], ..Default::default() },
            batch: 6,
            paillier_bits: 256,
            reps: 2,
            max_cv: f64::INFINITY,
            ..Default::default()
        }
    }

    #[test]
    fn report_shape() {
        let r = run_bench(&tiny()).unwrap();
        // reps raw rows plus one median row per scheme
        assert_eq!(r.rows.len(), 3 * 3);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 9 + 4);
        assert!(csv.lines().any(|l| l.starts_with("sua,published,,1.5,118.200,69.900")));
        let plain = r.median(AggregatorMode::Plaintext).unwrap();
        assert_eq!(plain.times.encrypt, 0.0);
        assert_eq!(plain.times.decrypt, 0.0);
    }

    #[test]
    fn plaintext_communication_matches_model() {
        let cfg = BenchConfig { schemes: vec![AggregatorMode::Plaintext], reps: 1, ..tiny() };
        let r = run_bench(&cfg).unwrap();
        let expected = 2.0 * (cfg.architecture.parameter_count() * 32) as f64 / 1e9 * 3.0 * 1e3;
        assert!((r.median(AggregatorMode::Plaintext).unwrap().times.communicate - expected).abs() < 1e-9);
    }

    #[test]
    fn statistics() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(coefficient_of_variation(&[2.0, 2.0, 2.0]), 0.0);
        assert!(coefficient_of_variation(&[1.0, 3.0]) > 0.7);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(run_bench(&BenchConfig { reps: 0, ..tiny() }).is_err());
        assert!(run_bench(&BenchConfig { n: 2, ..tiny() }).is_err());
    }
}
