//! The federated training loop.
//!
//! One distributor creates the initial model and broadcasts it. Every round,
//! each party computes the summed gradient of its local batch, clips it to
//! the codec headroom, encodes it into `Z_{2^b}`, and the parties aggregate
//! the encoded gradients with the configured mechanism. Every party decodes
//! the same ring sum and applies `W ← Ŵ − η·Σ`, so all models stay
//! bit-identical. Termination uses a second secure sum over the local losses.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuralnet::{gaussian_blobs, load_raw_images, Architecture, Batch, Model, NnError};
use crate::paillier::{keygen, paillier_aggregate, KeyMode, PaillierError, PaillierKeypair};
use crate::protocols::{
    MessageKind, PartyId, PartyState, Protocol, ProtocolError, ProtocolMessage, SessionId, SumSession, Trace,
};
use crate::ring::{FixedPointCodec, RingError, RingModulus, RingVector};
use crate::rng::RandomSource;
use crate::transport::{
    run_local, BandwidthModel, ChannelConfig, Cipher, CostLedger, CostPhase, KeyStore, SimNetwork, TrafficClass,
    TransportError,
};

// child stream indices of the run seed
const STREAM_DATA: u64 = 1;
const STREAM_KEYS: u64 = 2;
const STREAM_PAILLIER: u64 = 3;
const STREAM_ROUNDS: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("invalid federation config: {0}")]
    Config(String),
    #[error("round {round}: gradient component {index} = {value} cannot be encoded")]
    Overflow { round: u64, index: usize, value: f64 },
    #[error("round {round}: local loss {value} cannot be encoded")]
    LossOverflow { round: u64, value: f64 },
    #[error("round {round}: party models diverged")]
    Inconsistent { round: u64 },
    #[error("round {round}: {source}")]
    Round { round: u64, source: Box<FederationError> },
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

impl FederationError {
    /// Round index of a failed round, if known.
    pub fn round(&self) -> Option<u64> {
        match self {
            FederationError::Overflow { round, .. }
            | FederationError::LossOverflow { round, .. }
            | FederationError::Inconsistent { round }
            | FederationError::Round { round, .. } => Some(*round),
            _ => None,
        }
    }
}

/// How the encoded gradients are summed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorMode {
    /// Secure sum over encrypted pairwise channels.
    #[default]
    Sua,
    /// Packed Paillier encryption summed by a key-less aggregator.
    Paillier,
    /// Direct sum in the ring. No privacy; reference only.
    Plaintext,
}

impl std::str::FromStr for AggregatorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sua" => Ok(AggregatorMode::Sua),
            "paillier" => Ok(AggregatorMode::Paillier),
            "plaintext" => Ok(AggregatorMode::Plaintext),
            other => Err(format!("unknown aggregator '{other}'")),
        }
    }
}

impl std::fmt::Display for AggregatorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AggregatorMode::Sua => "sua",
            AggregatorMode::Paillier => "paillier",
            AggregatorMode::Plaintext => "plaintext",
        })
    }
}

/// Where the training samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Gaussian blobs shaped to the architecture's input and output layers.
    Blobs { separation: f64, spread: f64 },
    /// Raw 28×28 image file, see [`crate::neuralnet::load_raw_images`].
    RawImages { path: PathBuf },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Blobs { separation: 1.0, spread: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub n: usize,
    pub protocol: Protocol,
    /// Segment count (segmented) or share window (urabe). `None` picks 2
    /// segments or the full `n − 1` window.
    pub k: Option<usize>,
    pub cipher: Cipher,
    pub modulus_bits: u32,
    pub frac_bits: u32,
    pub eta: f64,
    /// Global batch size |B|.
    pub batch: usize,
    /// Per-party batch sizes |B_i|; must sum to `batch`. Defaults to an
    /// even split with the remainder on the lowest-indexed parties.
    pub batch_sizes: Option<Vec<usize>>,
    /// Local batches per party; round `t` uses local batch `t mod local_batches`.
    pub local_batches: usize,
    pub max_iterations: usize,
    /// Stop once successive global losses differ by less than this. 0 disables.
    pub loss_epsilon: f64,
    pub aggregator: AggregatorMode,
    pub architecture: Architecture,
    pub data: DataSpec,
    pub seed: u64,
    pub paillier_bits: u32,
    pub paillier_pad: u32,
    pub bandwidth: BandwidthModel,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            n: 3,
            protocol: Protocol::Urabe,
            k: None,
            cipher: Cipher::Aes128Aead,
            modulus_bits: 32,
            frac_bits: 16,
            eta: 0.1,
            batch: 50,
            batch_sizes: None,
            local_batches: 1,
            max_iterations: 20,
            loss_epsilon: 0.0,
            aggregator: AggregatorMode::Sua,
            architecture: Architecture::default(),
            data: DataSpec::default(),
            seed: 0,
            paillier_bits: 1024,
            paillier_pad: 15,
            bandwidth: BandwidthModel::default(),
        }
    }
}

impl FederationConfig {
    pub fn from_json(text: &str) -> Result<Self, FederationError> {
        serde_json::from_str(text).map_err(|e| FederationError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn codec(&self) -> Result<FixedPointCodec, FederationError> {
        let m = RingModulus::new(self.modulus_bits)?;
        Ok(FixedPointCodec::new(m, self.frac_bits)?)
    }

    /// |B_i| for every party.
    pub fn party_batch_sizes(&self) -> Result<Vec<usize>, FederationError> {
        match &self.batch_sizes {
            Some(sizes) => {
                if sizes.len() != self.n {
                    return Err(FederationError::Config(format!("{} batch sizes for {} parties", sizes.len(), self.n)));
                }
                let total: usize = sizes.iter().sum();
                if total != self.batch {
                    return Err(FederationError::Config(format!(
                        "party batch sizes sum to {total}, global batch is {}",
                        self.batch
                    )));
                }
                Ok(sizes.clone())
            }
            None => {
                let (q, r) = (self.batch / self.n, self.batch % self.n);
                Ok((0..self.n).map(|i| q + usize::from(i < r)).collect())
            }
        }
    }

    pub fn validate(&self) -> Result<(), FederationError> {
        let err = |m: String| Err(FederationError::Config(m));
        if self.n < 3 {
            return err(format!("need at least 3 parties, got {}", self.n));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return err(format!("learning rate {} must be finite and non-negative", self.eta));
        }
        if self.batch == 0 || self.local_batches == 0 {
            return err("batch size and local batch count must be positive".into());
        }
        if !(self.loss_epsilon >= 0.0) {
            return err("loss_epsilon must be non-negative".into());
        }
        self.codec()?;
        self.architecture.validate()?;
        self.party_batch_sizes()?;
        self.session_template(0)?;
        if let DataSpec::RawImages { .. } = self.data {
            if self.architecture.layers[0] != 784 || *self.architecture.layers.last().expect("validated") != 10 {
                return err("raw image data needs a 784-input, 10-output architecture".into());
            }
        }
        if self.aggregator == AggregatorMode::Paillier && self.n as u128 >= 1u128 << self.paillier_pad.min(64) {
            return err(format!("{} parties overflow {} padding bits", self.n, self.paillier_pad));
        }
        ChannelConfig::simulated(self.cipher).validate()?;
        Ok(())
    }

    /// Protocol session for an aggregation of the given length, before
    /// rotation and round tagging.
    fn session_template(&self, len: usize) -> Result<SumSession, FederationError> {
        let m = RingModulus::new(self.modulus_bits)?;
        let mut rng = RandomSource::seeded(self.seed);
        self.session(len, m, &mut rng)
    }

    fn session(&self, len: usize, m: RingModulus, rng: &mut RandomSource) -> Result<SumSession, FederationError> {
        Ok(match (self.protocol, self.k) {
            (Protocol::Ring, _) => SumSession::ring(self.n, m, len)?,
            (Protocol::Segmented, k) => SumSession::segmented(self.n, m, len, k.unwrap_or(2), rng)?,
            (Protocol::Urabe, None) => SumSession::urabe(self.n, m, len)?,
            (Protocol::Urabe, Some(k)) => SumSession::urabe_bounded(self.n, m, len, k)?,
        })
    }
}

/// Result of one aggregation.
#[derive(Clone, Debug)]
pub struct Aggregate {
    pub sum: RingVector,
    pub ledger: CostLedger,
    /// Protocol trace; `None` for the plaintext and Paillier mechanisms.
    pub trace: Option<Trace>,
    pub messages: Vec<ProtocolMessage>,
}

/// Aggregation mechanism bound to one configuration and its key material.
pub struct Aggregator {
    mode: AggregatorMode,
    config: FederationConfig,
    keys: KeyStore,
    paillier: Option<PaillierKeypair>,
    root: RandomSource,
}

impl Aggregator {
    pub fn new(config: &FederationConfig) -> Result<Self, FederationError> {
        let mut root = RandomSource::seeded(config.seed);
        let keys = KeyStore::generate(config.n, &mut root.child(STREAM_KEYS));
        let paillier = match config.aggregator {
            AggregatorMode::Paillier => {
                let bits = config.paillier_bits;
                let mode = if bits >= 1024 {
                    KeyMode::Benchmark
                } else if bits >= 512 {
                    KeyMode::Standard
                } else {
                    KeyMode::Test
                };
                Some(keygen(bits, mode, &mut root.child(STREAM_PAILLIER))?)
            }
            _ => None,
        };
        Ok(Self { mode: config.aggregator, config: config.clone(), keys, paillier, root })
    }

    pub fn mode(&self) -> AggregatorMode {
        self.mode
    }

    /// Sums `inputs` (one per party) for aggregation number `index`.
    pub fn aggregate(
        &mut self,
        inputs: &[RingVector],
        index: u64,
        result_kind: MessageKind,
    ) -> Result<Aggregate, FederationError> {
        let n = self.config.n;
        if inputs.len() != n {
            return Err(FederationError::Config(format!("{} inputs for {n} parties", inputs.len())));
        }
        let modulus = inputs[0].modulus();
        let len = inputs[0].len();
        let mut rng = self.root.child(STREAM_ROUNDS + index);
        match self.mode {
            AggregatorMode::Plaintext => {
                let mut sum = RingVector::zeros(modulus, len);
                let mut ledger = CostLedger::new();
                let t = Instant::now();
                for v in inputs {
                    sum.add_assign(v)?;
                }
                let secs = t.elapsed().as_secs_f64() / n as f64;
                for i in 0..n {
                    ledger.add_cpu(PartyId(i as u32), CostPhase::Add, secs);
                }
                Ok(Aggregate { sum, ledger, trace: None, messages: Vec::new() })
            }
            AggregatorMode::Paillier => {
                let kp = self.paillier.as_ref().expect("paillier mode has a key");
                let (sum, report) =
                    paillier_aggregate(inputs, kp, self.config.paillier_pad, &mut rng, &self.config.bandwidth)?;
                Ok(Aggregate { sum, ledger: report.ledger, trace: None, messages: Vec::new() })
            }
            AggregatorMode::Sua => {
                let session = self
                    .config
                    .session(len, modulus, &mut rng)?
                    .with_id(SessionId::random(&mut rng))
                    .with_round(index as u32)
                    .with_result_kind(result_kind)
                    .rotated(index);
                let mut states = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        PartyState::new(PartyId(i as u32), session.clone(), v.clone(), rng.child(i as u64 + 1))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let net = SimNetwork::new(
                    n,
                    modulus,
                    ChannelConfig::simulated(self.config.cipher),
                    self.keys.clone(),
                    self.config.bandwidth,
                )?;
                let exec = run_local(&mut states, &net)?;
                let sum = exec.results[0].clone();
                if exec.results.iter().any(|r| r != &sum) {
                    return Err(ProtocolError::Violation {
                        party: session.collector(),
                        reason: "parties disagree on the sum".into(),
                    }
                    .into());
                }
                Ok(Aggregate { sum, ledger: net.ledger(), trace: Some(exec.trace), messages: exec.messages })
            }
        }
    }
}

/// Creates the initial model at the first distributor and sends it to every
/// other party. Returns one model per party and records `n − 1` model-sized
/// transfers in `ledger`.
pub fn broadcast_init(config: &FederationConfig, ledger: &mut CostLedger) -> Result<Vec<Model>, FederationError> {
    let model = Model::init(config.architecture.clone(), config.seed)?;
    // the learning rate travels with the weights
    let mut bytes = model.to_checkpoint_bytes();
    bytes.extend_from_slice(&config.eta.to_le_bytes());
    let bits = bytes.len() as u64 * 8;
    let ct_bits = config.cipher.ciphertext_len(bytes.len()) as u64 * 8;
    let origin = PartyId(0);
    let mut models = vec![model];
    for i in 1..config.n {
        let to = PartyId(i as u32);
        ledger.record_transfer(origin, to, TrafficClass::Broadcast, bits, ct_bits);
        ledger.add_sim_comm(origin, config.bandwidth.transfer_seconds(ct_bits));
        let received = Model::from_checkpoint_bytes(&bytes[..bytes.len() - 8])?;
        models.push(received);
    }
    Ok(models)
}

/// Local data of every party: `data[i][t]` is party `i`'s local batch `t`.
pub type Partition = Vec<Vec<Batch>>;

/// Builds the horizontal partition described by the config. Global batch
/// `t` is a contiguous block of `|B|` samples; party `i` owns the `|B_i|`
/// rows at its offset inside every block.
pub fn partition(config: &FederationConfig) -> Result<Partition, FederationError> {
    let sizes = config.party_batch_sizes()?;
    let total = config.batch * config.local_batches;
    let all = match &config.data {
        DataSpec::Blobs { separation, spread } => {
            let dim = config.architecture.layers[0];
            let classes = *config.architecture.layers.last().expect("validated");
            let mut rng = RandomSource::seeded(config.seed).child(STREAM_DATA);
            gaussian_blobs(total, dim, classes, *separation, *spread, &mut rng)?
        }
        DataSpec::RawImages { path } => {
            let b = load_raw_images(path)?;
            if b.len() < total {
                return Err(FederationError::Config(format!("{} images, need {total}", b.len())));
            }
            b.slice(0..total)
        }
    };
    let mut parts: Partition = vec![Vec::with_capacity(config.local_batches); config.n];
    for t in 0..config.local_batches {
        let mut off = t * config.batch;
        for (i, &s) in sizes.iter().enumerate() {
            parts[i].push(if s == 0 { Batch::empty(all.input_dim()) } else { all.slice(off..off + s) });
            off += s;
        }
    }
    Ok(parts)
}

/// Union of every party's local batch `t`.
pub fn union_batch(data: &Partition, t: usize) -> Result<Batch, FederationError> {
    let parts: Vec<Batch> = data.iter().map(|d| d[t % d.len()].clone()).filter(|b| !b.is_empty()).collect();
    Ok(Batch::concat(&parts)?)
}

/// One completed aggregation round.
#[derive(Clone, Debug)]
pub struct GlobalRound {
    pub iteration: u64,
    /// Decoded aggregate gradient Σ_i G_i.
    pub gradient_sum: Vec<f64>,
    pub ring_sum: RingVector,
    pub clipped: u64,
    pub trace_digest: Option<String>,
    pub ledger: CostLedger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub iteration: u64,
    pub global_loss: f64,
    pub clipped: u64,
    pub trace_digest: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LossConverged,
    MaxIterations,
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub model: Model,
    pub ledger: CostLedger,
    pub rounds: Vec<RoundRecord>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub stop: StopReason,
}

impl RunReport {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iteration,global_loss,clipped,trace_digest\n");
        for r in &self.rounds {
            out.push_str(&format!(
                "{},{:.12},{},{}\n",
                r.iteration,
                r.global_loss,
                r.clipped,
                r.trace_digest.as_deref().unwrap_or("")
            ));
        }
        out
    }

    /// JSON summary without timing fields.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "iterations": self.rounds.len(),
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "stop": self.stop,
            "clipped": self.ledger.clipped_total(),
            "trace_digests": self.rounds.iter().filter_map(|r| r.trace_digest.clone()).collect::<Vec<_>>(),
            "payload_bits": self.ledger.total_traffic().payload_bits,
            "messages": self.ledger.total_traffic().messages,
        })
    }
}

/// A federation in progress: the party models, their private data and the
/// aggregation mechanism.
pub struct Federation {
    config: FederationConfig,
    codec: FixedPointCodec,
    models: Vec<Model>,
    data: Partition,
    aggregator: Aggregator,
    ledger: CostLedger,
    iteration: u64,
    aggregations: u64,
}

impl Federation {
    pub fn new(config: FederationConfig) -> Result<Self, FederationError> {
        config.validate()?;
        let data = partition(&config)?;
        Self::with_data(config, data)
    }

    pub fn with_data(config: FederationConfig, data: Partition) -> Result<Self, FederationError> {
        config.validate()?;
        if data.len() != config.n || data.iter().any(|d| d.is_empty()) {
            return Err(FederationError::Config("need at least one local batch for every party".into()));
        }
        let codec = config.codec()?;
        let mut ledger = CostLedger::new();
        let models = broadcast_init(&config, &mut ledger)?;
        let aggregator = Aggregator::new(&config)?;
        Ok(Self { config, codec, models, data, aggregator, ledger, iteration: 0, aggregations: 0 })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn models(&self) -> &[Model] {
        &self.models
    }

    pub fn data(&self) -> &Partition {
        &self.data
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    fn local_batch(&self, i: usize) -> &Batch {
        let d = &self.data[i];
        &d[self.iteration as usize % d.len()]
    }

    /// Largest per-party magnitude whose n-fold sum still encodes, on the
    /// codec grid.
    pub fn clip_bound(&self) -> f64 {
        let scale = 2f64.powi(self.codec.frac_bits as i32);
        (self.codec.magnitude_bound() * scale / self.config.n as f64).floor() / scale
    }

    fn next_aggregation(&mut self) -> u64 {
        let a = self.aggregations;
        self.aggregations += 1;
        a
    }

    /// One training round: local gradients, aggregation, identical update.
    pub fn federated_step(&mut self) -> Result<GlobalRound, FederationError> {
        let round = self.iteration;
        let wrap = |e: FederationError| match e {
            FederationError::Overflow { .. } => e,
            other => FederationError::Round { round, source: Box::new(other) },
        };
        let bound = self.clip_bound();
        let mut encoded = Vec::with_capacity(self.config.n);
        let mut clipped_total = 0;
        for i in 0..self.config.n {
            let party = PartyId(i as u32);
            let t = Instant::now();
            let g = self.models[i].backward(self.local_batch(i)).map_err(|e| wrap(e.into()))?;
            self.ledger.add_cpu(party, CostPhase::Train, t.elapsed().as_secs_f64());

            let t = Instant::now();
            let mut clipped = 0u64;
            let values: Vec<f64> = g
                .values
                .iter()
                .map(|&x| {
                    if x.abs() > bound {
                        clipped += 1;
                        x.clamp(-bound, bound)
                    } else {
                        x
                    }
                })
                .collect();
            let v = self.codec.encode_vector(&values).map_err(|e| match e {
                RingError::Overflow { value, index, .. } => {
                    FederationError::Overflow { round, index: index.unwrap_or(0), value }
                }
                other => wrap(other.into()),
            })?;
            self.ledger.add_cpu(party, CostPhase::Encrypt, t.elapsed().as_secs_f64());
            self.ledger.add_clipped(party, clipped);
            clipped_total += clipped;
            encoded.push(v);
        }

        let index = self.next_aggregation();
        let agg = self.aggregator.aggregate(&encoded, index, MessageKind::Result).map_err(wrap)?;
        self.ledger.merge(&agg.ledger);

        let mut gradient_sum = Vec::new();
        for i in 0..self.config.n {
            let t = Instant::now();
            let decoded = self.codec.decode_vector(&agg.sum);
            self.ledger.add_cpu(PartyId(i as u32), CostPhase::Decrypt, t.elapsed().as_secs_f64());
            let t = Instant::now();
            self.models[i].apply_update(&decoded, self.config.eta).map_err(|e| wrap(e.into()))?;
            self.ledger.add_cpu(PartyId(i as u32), CostPhase::Train, t.elapsed().as_secs_f64());
            gradient_sum = decoded;
        }
        let first = self.models[0].params();
        if self.models.iter().any(|m| m.params() != first) {
            return Err(FederationError::Inconsistent { round });
        }
        self.iteration += 1;
        Ok(GlobalRound {
            iteration: round,
            gradient_sum,
            ring_sum: agg.sum,
            clipped: clipped_total,
            trace_digest: agg.trace.map(|t| t.digest_hex()),
            ledger: agg.ledger,
        })
    }

    /// Securely sums every party's share of the global loss on its current
    /// local batch. Each party contributes `Σ_{d∈B_i} loss(d) / |B|`, so the
    /// sum is the mean loss over the union batch.
    pub fn secure_global_loss(&mut self) -> Result<f64, FederationError> {
        let round = self.iteration;
        let mut inputs = Vec::with_capacity(self.config.n);
        for i in 0..self.config.n {
            let local = self.models[i].loss_sum(self.local_batch(i))? / self.config.batch as f64;
            let v = self
                .codec
                .encode_vector(&[local])
                .map_err(|_| FederationError::LossOverflow { round, value: local })?;
            inputs.push(v);
        }
        let index = self.next_aggregation();
        let agg = self
            .aggregator
            .aggregate(&inputs, index, MessageKind::LossSum)
            .map_err(|e| FederationError::Round { round, source: Box::new(e) })?;
        self.ledger.merge(&agg.ledger);
        Ok(self.codec.decode_vector(&agg.sum)[0])
    }

    /// Runs rounds until the loss change drops below `loss_epsilon` or
    /// `max_iterations` rounds have been applied.
    pub fn run(mut self) -> Result<RunReport, FederationError> {
        let mut rounds = Vec::new();
        let mut prev = self.secure_global_loss()?;
        let initial_loss = prev;
        let mut stop = StopReason::MaxIterations;
        for _ in 0..self.config.max_iterations {
            let step = self.federated_step()?;
            let loss = self.secure_global_loss()?;
            rounds.push(RoundRecord {
                iteration: step.iteration,
                global_loss: loss,
                clipped: step.clipped,
                trace_digest: step.trace_digest,
            });
            let converged = secure_loss_check(prev, loss, self.config.loss_epsilon);
            prev = loss;
            if converged {
                stop = StopReason::LossConverged;
                break;
            }
        }
        let model = self.models.swap_remove(0);
        Ok(RunReport { model, ledger: self.ledger, rounds, initial_loss, final_loss: prev, stop })
    }
}

/// Termination rule: stop when successive global losses differ by less
/// than `epsilon`.
pub fn secure_loss_check(previous: f64, current: f64, epsilon: f64) -> bool {
    (previous - current).abs() < epsilon
}

pub fn run_federation(config: FederationConfig) -> Result<RunReport, FederationError> {
    Federation::new(config)?.run()
}

/// Float SGD on the union batches, the reference a federation approximates.
pub fn centralized_sgd(config: &FederationConfig, data: &Partition, rounds: usize) -> Result<Model, FederationError> {
    let mut model = Model::init(config.architecture.clone(), config.seed)?;
    for t in 0..rounds {
        let batch = union_batch(data, t)?;
        let g = model.backward(&batch)?;
        model.apply_update(&g.values, config.eta)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{Activation, Head};

    fn small(aggregator: AggregatorMode) -> FederationConfig {
        FederationConfig {
            n: 3,
            batch: 6,
            max_iterations: 3,
            aggregator,
            architecture: Architecture { layers: vec![4, 5, 3], activation: Activation::Relu, head: Head::SoftmaxCrossEntropy },
            paillier_bits: 256,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn even_split_and_validation() {
        let mut c = small(AggregatorMode::Sua);
        c.batch = 50;
        assert_eq!(c.party_batch_sizes().unwrap(), vec![17, 17, 16]);
        c.batch_sizes = Some(vec![10, 10, 10]);
        assert!(c.validate().is_err());
        c.batch_sizes = Some(vec![50, 0, 0]);
        c.validate().unwrap();
        c.n = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(FederationConfig::from_json(r#"{"n": 4, "bogus": 1}"#).is_err());
        let c = FederationConfig::from_json(r#"{"n": 4, "protocol": "ring"}"#).unwrap();
        assert_eq!(c.n, 4);
        assert_eq!(c.protocol, Protocol::Ring);
        let round = FederationConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn broadcast_gives_identical_models() {
        let mut c = small(AggregatorMode::Sua);
        c.n = 5;
        let mut ledger = CostLedger::new();
        let models = broadcast_init(&c, &mut ledger).unwrap();
        assert_eq!(models.len(), 5);
        let bytes = models[0].to_checkpoint_bytes();
        assert!(models.iter().all(|m| m.to_checkpoint_bytes() == bytes));
        assert_eq!(ledger.class_traffic(TrafficClass::Broadcast).messages, 4);
        c.seed += 1;
        let other = broadcast_init(&c, &mut CostLedger::new()).unwrap();
        assert_ne!(other[0].flatten(), models[0].flatten());
    }

    #[test]
    fn modes_agree_on_every_round() {
        let mut finals = Vec::new();
        for mode in [AggregatorMode::Sua, AggregatorMode::Plaintext, AggregatorMode::Paillier] {
            let report = run_federation(small(mode)).unwrap();
            finals.push(report.model.flatten());
        }
        assert_eq!(finals[0], finals[1]);
        assert_eq!(finals[0], finals[2]);
    }

    #[test]
    fn single_holder_matches_local_step() {
        let mut c = small(AggregatorMode::Sua);
        c.batch_sizes = Some(vec![6, 0, 0]);
        let mut fed = Federation::new(c.clone()).unwrap();
        let batch = fed.data()[0][0].clone();
        let mut local = fed.models()[0].clone();
        fed.federated_step().unwrap();
        let codec = c.codec().unwrap();
        let g = local.backward(&batch).unwrap();
        let q = codec.decode_vector(&codec.encode_vector(&g.values).unwrap());
        local.apply_update(&q, c.eta).unwrap();
        assert_eq!(fed.models()[0].flatten(), local.flatten());
    }

    #[test]
    fn secure_loss_matches_plain_sum() {
        let mut fed = Federation::new(small(AggregatorMode::Sua)).unwrap();
        let plain: f64 = (0..3).map(|i| fed.models()[i].loss_sum(&fed.data()[i][0]).unwrap() / 6.0).sum();
        let secure = fed.secure_global_loss().unwrap();
        assert!((secure - plain).abs() <= 3.0 * 2f64.powi(-17));
    }

    #[test]
    fn stopping_rules() {
        assert!(secure_loss_check(0.0, 0.0, 1e-9));
        assert!(!secure_loss_check(1.0, 0.5, 0.1));
        let mut c = small(AggregatorMode::Plaintext);
        c.max_iterations = 1;
        let r = run_federation(c.clone()).unwrap();
        assert_eq!(r.rounds.len(), 1);
        assert_eq!(r.stop, StopReason::MaxIterations);
        c.max_iterations = 50;
        c.loss_epsilon = 1e9;
        let r = run_federation(c).unwrap();
        assert_eq!(r.rounds.len(), 1);
        assert_eq!(r.stop, StopReason::LossConverged);
    }

    #[test]
    fn clipping_is_counted() {
        let mut c = small(AggregatorMode::Plaintext);
        c.modulus_bits = 20;
        c.frac_bits = 16;
        c.eta = 0.0;
        c.data = DataSpec::Blobs { separation: 50.0, spread: 1.0 };
        let mut fed = Federation::new(c).unwrap();
        let bound = fed.clip_bound();
        assert!(bound < 3.0);
        let round = fed.federated_step().unwrap();
        assert!(round.clipped > 0);
        assert_eq!(fed.ledger().clipped_total(), round.clipped);
        assert!(round.gradient_sum.iter().all(|g| g.abs() <= 3.0 * bound + 1e-9));
    }
}
