use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use sua_core::bench::{run_bench, BenchConfig};
use sua_core::costmodel::{self, Scheme, SchemeParams};
use sua_core::federation::{AggregatorMode, Federation, FederationConfig};
use sua_core::protocols::{message_bits, PartyId, PartyState, Protocol, SessionId, SumSession};
use sua_core::ring::{RingModulus, RingVector};
use sua_core::rng::RandomSource;
use sua_core::transport::{
    run_local, run_threaded, BandwidthModel, ChannelConfig, Cipher, CostLedger, KeyStore, SimNetwork, TcpNetwork,
};
use sua_core::verify::{run_suite, VerifyConfig};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ABORT: u8 = 3;
const EXIT_UNSTABLE: u8 = 4;

#[derive(Parser)]
#[command(name = "sua", version, about = "Secure-sum aggregation for federated training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override, `key=value` (dotted keys reach nested fields)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory for outputs and the run manifest
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one secure sum over the given inputs
    Sum(SumArgs),
    /// Run a federated training scenario
    Train(TrainArgs),
    /// Measure per-iteration runtimes of the aggregation schemes
    Bench(BenchArgs),
    /// Emit communication factors and runtime projections as CSV
    Costmodel(CostArgs),
    /// Run the oracle suite
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SumArgs {
    #[arg(long, default_value = "urabe")]
    protocol: Protocol,
    /// Party count; defaults to the number of inputs
    #[arg(long)]
    n: Option<usize>,
    /// Segments (segmented) or share window (urabe)
    #[arg(long)]
    k: Option<usize>,
    /// One value per party, comma separated; `;` separates vector inputs
    #[arg(long, conflicts_with = "inputs_file")]
    inputs: Option<String>,
    /// File with one party input per line, values comma separated
    #[arg(long)]
    inputs_file: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    modulus_bits: u32,
    #[arg(long, default_value = "aead")]
    cipher: Cipher,
    /// `sim` or `tcp`
    #[arg(long, default_value = "sim")]
    transport: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    aggregator: Option<AggregatorMode>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct CostArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 3)]
    n_min: usize,
    #[arg(long, default_value_t = 20)]
    n_max: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    quick: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt one protocol message; the sum check must then fail
    #[arg(long)]
    inject_fault: bool,
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(m: impl std::fmt::Display) -> Self {
        Self { code: EXIT_CONFIG, message: m.to_string() }
    }

    fn abort(m: impl std::fmt::Display) -> Self {
        Self { code: EXIT_ABORT, message: m.to_string() }
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Sum(a) => cmd_sum(a),
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Costmodel(a) => cmd_costmodel(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Applies `key=value` overrides to a JSON object. Values parse as JSON
/// when possible and fall back to strings.
fn apply_overrides(mut doc: Value, overrides: &[String]) -> Result<Value, Failure> {
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| Failure::config(format!("override '{o}' is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = slot.as_object_mut().ok_or_else(|| Failure::config(format!("'{key}' does not name a field")))?;
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), value.clone());
                break;
            }
            slot = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(doc)
}

/// Loads a config (file, else defaults), applies overrides and
/// deserializes strictly so unknown keys are rejected.
fn load_config<T: Serialize + serde::de::DeserializeOwned + Default>(common: &Common) -> Result<T, Failure> {
    let base = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(T::default()).expect("defaults serialize"),
    };
    // validate the file on its own first so its unknown keys are reported
    serde_json::from_value::<T>(base.clone()).map_err(Failure::config)?;
    let doc = apply_overrides(base, &common.overrides)?;
    serde_json::from_value(doc).map_err(Failure::config)
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    config: &'a C,
    outputs: Vec<&'a str>,
}

fn write_outputs<C: Serialize>(
    dir: &Path,
    command: &str,
    seed: u64,
    config: &C,
    files: &[(&str, &[u8])],
) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::config(format!("{}: {e}", dir.display())))?;
    for (name, bytes) in files {
        fs::write(dir.join(name), bytes).map_err(|e| Failure::abort(format!("writing {name}: {e}")))?;
    }
    let canonical = serde_json::to_vec(config).expect("config serializes");
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config_sha256: hex::encode(Sha256::digest(&canonical)),
        config,
        outputs: files.iter().map(|(n, _)| *n).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(dir.join("manifest.json"), text).map_err(|e| Failure::abort(format!("writing manifest: {e}")))
}

fn parse_inputs(text: &str, row_sep: char, modulus: RingModulus) -> Result<Vec<RingVector>, Failure> {
    let rows: Vec<&str> = text.split(row_sep).map(str::trim).filter(|r| !r.is_empty()).collect();
    // a single flat list means one scalar per party
    let rows: Vec<Vec<&str>> = if rows.len() == 1 && row_sep == ';' {
        rows[0].split(',').map(|v| vec![v.trim()]).collect()
    } else {
        rows.iter().map(|r| r.split(',').map(str::trim).collect()).collect()
    };
    rows.into_iter()
        .map(|r| {
            let vals = r
                .iter()
                .map(|v| v.parse::<u64>().map_err(|e| Failure::config(format!("input '{v}': {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            RingVector::from_values(modulus, vals).map_err(Failure::config)
        })
        .collect()
}

#[derive(Serialize)]
struct SumConfig {
    protocol: Protocol,
    n: usize,
    k: Option<usize>,
    modulus_bits: u32,
    cipher: Cipher,
    transport: String,
    inputs: Vec<Vec<u64>>,
}

fn cmd_sum(a: SumArgs) -> CmdResult {
    let modulus = RingModulus::new(a.modulus_bits).map_err(Failure::config)?;
    let inputs = match (&a.inputs, &a.inputs_file) {
        (Some(s), _) => parse_inputs(s, ';', modulus)?,
        (None, Some(p)) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
            parse_inputs(&text, '\n', modulus)?
        }
        (None, None) => {
            return Err(Failure::config("missing inputs: pass --inputs v1,v2,... or --inputs-file PATH\n\nUsage: sua sum --inputs <INPUTS> [OPTIONS]"))
        }
    };
    let n = a.n.unwrap_or(inputs.len());
    if inputs.len() != n {
        return Err(Failure::config(format!("{} inputs for {n} parties", inputs.len())));
    }
    let len = inputs[0].len();
    if inputs.iter().any(|v| v.len() != len) {
        return Err(Failure::config("party inputs differ in length"));
    }
    let mut rng = RandomSource::seeded(a.seed);
    let session = match (a.protocol, a.k) {
        (Protocol::Ring, _) => SumSession::ring(n, modulus, len),
        (Protocol::Segmented, k) => SumSession::segmented(n, modulus, len, k.unwrap_or(2), &mut rng),
        (Protocol::Urabe, None) => SumSession::urabe(n, modulus, len),
        (Protocol::Urabe, Some(k)) => SumSession::urabe_bounded(n, modulus, len, k),
    }
    .map_err(Failure::config)?
    .with_id(SessionId::random(&mut rng));
    let keys = KeyStore::generate(n, &mut rng.child(1));
    let states = inputs
        .iter()
        .enumerate()
        .map(|(i, v)| PartyState::new(PartyId(i as u32), session.clone(), v.clone(), rng.child(i as u64 + 2)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::config)?;

    let (result, ledger, trace_csv): (RingVector, CostLedger, Option<String>) = match a.transport.as_str() {
        "sim" => {
            let net = SimNetwork::new(n, modulus, ChannelConfig::simulated(a.cipher), keys, BandwidthModel::default())
                .map_err(Failure::config)?;
            let mut states = states;
            let exec = run_local(&mut states, &net).map_err(Failure::abort)?;
            message_bits(&exec.trace).map_err(Failure::abort)?;
            (exec.results[0].clone(), net.ledger(), Some(exec.trace.to_csv()))
        }
        "tcp" => {
            let (net, endpoints) = TcpNetwork::bind(n, modulus, ChannelConfig::real(a.cipher), keys, BandwidthModel::default())
                .map_err(Failure::config)?;
            let outcomes = run_threaded(states, endpoints, Duration::from_secs(10)).map_err(Failure::abort)?;
            (outcomes[0].result.clone(), net.ledger(), None)
        }
        other => return Err(Failure::config(format!("unknown transport '{other}'"))),
    };

    let text: Vec<String> = result.values().iter().map(u64::to_string).collect();
    println!("{}", text.join(","));
    let total = ledger.total_traffic();
    println!("messages={} payload_bits={} ciphertext_bits={}", total.messages, total.payload_bits, total.ciphertext_bits);

    if let Some(dir) = &a.out {
        let config = SumConfig {
            protocol: a.protocol,
            n,
            k: a.k,
            modulus_bits: a.modulus_bits,
            cipher: a.cipher,
            transport: a.transport.clone(),
            inputs: inputs.iter().map(|v| v.values().to_vec()).collect(),
        };
        let result_line = text.join(",") + "\n";
        let traffic = ledger.traffic_csv();
        let mut files: Vec<(&str, &[u8])> = vec![("result.txt", result_line.as_bytes()), ("traffic.csv", traffic.as_bytes())];
        if let Some(t) = &trace_csv {
            files.push(("trace.csv", t.as_bytes()));
        }
        write_outputs(dir, "sum", a.seed, &config, &files)?;
    }
    Ok(0)
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut config: FederationConfig = load_config(&a.common)?;
    if let Some(s) = a.common.seed {
        config.seed = s;
    }
    if let Some(m) = a.aggregator {
        config.aggregator = m;
    }
    if let Some(it) = a.iterations {
        config.max_iterations = it;
    }
    config.validate().map_err(Failure::config)?;
    let fed = Federation::new(config.clone()).map_err(Failure::config)?;
    // round errors already name the round
    let report = fed.run().map_err(Failure::abort)?;
    println!(
        "iterations={} initial_loss={:.6} final_loss={:.6} stop={:?}",
        report.rounds.len(),
        report.initial_loss,
        report.final_loss,
        report.stop
    );
    if let Some(dir) = &a.common.out {
        let checkpoint = report.model.to_checkpoint_bytes();
        let loss = report.loss_csv();
        let summary = serde_json::to_string_pretty(&report.summary_json()).expect("json") + "\n";
        let traffic = report.ledger.traffic_csv();
        let timing = report.ledger.party_csv();
        write_outputs(
            dir,
            "train",
            config.seed,
            &config,
            &[
                ("model.bin", &checkpoint),
                ("loss.csv", loss.as_bytes()),
                ("report.json", summary.as_bytes()),
                ("traffic.csv", traffic.as_bytes()),
                ("timing.csv", timing.as_bytes()),
            ],
        )?;
    }
    Ok(0)
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    let mut config: BenchConfig = load_config(&a.common)?;
    if let Some(s) = a.common.seed {
        config.seed = s;
    }
    if let Some(n) = a.n {
        config.n = n;
    }
    if let Some(r) = a.reps {
        config.reps = r;
    }
    if let Some(t) = a.threads {
        config.threads = t;
    }
    config.validate().map_err(Failure::config)?;
    let report = run_bench(&config).map_err(Failure::abort)?;
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(dir) = &a.common.out {
        write_outputs(dir, "bench", config.seed, &config, &[("bench.csv", csv.as_bytes())])?;
    }
    if !report.unstable.is_empty() {
        for (scheme, cv) in &report.unstable {
            eprintln!("unstable timings: {scheme} varied by {:.0}% across repetitions", cv * 100.0);
        }
        return Ok(EXIT_UNSTABLE);
    }
    Ok(0)
}

fn cmd_costmodel(a: CostArgs) -> CmdResult {
    let mut params: SchemeParams = load_config(&a.common)?;
    if a.n_min > a.n_max {
        return Err(Failure::config(format!("empty party range {}..={}", a.n_min, a.n_max)));
    }
    params.n = a.n_max;
    params.validate().map_err(Failure::config)?;
    let rows = costmodel::all_curves(&params, a.n_min.max(2)..=a.n_max).map_err(Failure::config)?;
    let csv = costmodel::to_csv(&rows);
    print!("{csv}");
    if let Some(dir) = &a.common.out {
        let crossover = |s| costmodel::crossover(s, &params, 100_000).map_err(Failure::config);
        let summary = serde_json::json!({
            "sua_exceeds_lwe_at_n": crossover(Scheme::Lwe)?,
            "sua_exceeds_hres_at_n": crossover(Scheme::Hres)?,
        });
        let summary = serde_json::to_string_pretty(&summary).expect("json") + "\n";
        write_outputs(
            dir,
            "costmodel",
            a.common.seed.unwrap_or(0),
            &params,
            &[("costmodel.csv", csv.as_bytes()), ("crossover.json", summary.as_bytes())],
        )?;
    }
    Ok(0)
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    let results = run_suite(&VerifyConfig { seed: a.seed, quick: a.quick, inject_fault: a.inject_fault });
    let mut failed = false;
    for r in &results {
        println!("{} {:<26} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        failed |= !r.passed;
    }
    Ok(if failed { EXIT_CHECK_FAILED } else { 0 })
}
