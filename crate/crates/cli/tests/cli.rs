use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sua(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sua")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn sum_of_three_scalars() {
    for proto in ["ring", "segmented", "urabe"] {
        let out = sua(&["sum", "--protocol", proto, "--inputs", "4,5,6"]);
        assert_eq!(out.status.code(), Some(0), "{proto}");
        assert_eq!(stdout(&out).lines().next(), Some("15"), "{proto}");
    }
}

#[test]
fn sum_wraps_modulo_ring() {
    let out = sua(&["sum", "--modulus-bits", "8", "--inputs", "200,100,1"]);
    assert_eq!(stdout(&out).lines().next(), Some("45"));
}

#[test]
fn sum_vectors_over_tcp() {
    let out = sua(&["sum", "--protocol", "urabe", "--k", "2", "--transport", "tcp", "--inputs", "1,2;3,4;5,6;7,8"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().next(), Some("16,20"));
}

#[test]
fn sum_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("inputs.txt");
    fs::write(&p, "1,1\n2,2\n3,3\n").unwrap();
    let out = sua(&["sum", "--inputs-file", p.to_str().unwrap()]);
    assert_eq!(stdout(&out).lines().next(), Some("6,6"));
}

#[test]
fn missing_inputs_is_usage_error() {
    let out = sua(&["sum", "--protocol", "ring"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let out = sua(&["train", "--set", "learning_rate=0.3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn unknown_key_in_config_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    fs::write(&p, r#"{"n": 3, "momentum": 0.9}"#).unwrap();
    let out = sua(&["train", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

fn train_into(dir: &Path) -> Output {
    sua(&[
        "train",
        "--set",
        "architecture.layers=[4,8,3]",
        "--set",
        "batch=12",
        "--iterations",
        "4",
        "--seed",
        "11",
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn train_writes_outputs_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(train_into(a.path()).status.code(), Some(0));
    assert_eq!(train_into(b.path()).status.code(), Some(0));
    for f in ["model.bin", "loss.csv", "report.json", "traffic.csv", "manifest.json"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between identical runs");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["batch"], 12);
}

#[test]
fn aborted_round_exits_3() {
    // a 20-bit ring leaves no room for the loss after a wild update
    let out = sua(&[
        "train",
        "--set",
        "architecture.layers=[4,8,3]",
        "--set",
        "modulus_bits=20",
        "--set",
        "eta=1000",
        "--iterations",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("round 1"));
}

#[test]
fn costmodel_prints_curves() {
    let out = sua(&["costmodel", "--n-min", "3", "--n-max", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("scheme,n,factor"));
    assert!(text.lines().any(|l| l.starts_with("sua,5,")));
    // four schemes, three party counts
    assert_eq!(text.lines().count(), 1 + 4 * 3);
}

#[test]
fn verify_passes_and_detects_fault() {
    let ok = sua(&["verify", "--quick"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).lines().all(|l| l.starts_with("PASS")));
    let bad = sua(&["verify", "--quick", "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("FAIL sum_equivalence"));
}

#[test]
fn bench_small_network() {
    let dir = tempfile::tempdir().unwrap();
    let out = sua(&[
        "bench",
        "--set",
        "architecture.layers=[8,4,2]",
        "--set",
        "paillier_bits=512",
        "--set",
        "max_cv=1000",
        "--n",
        "3",
        "--reps",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    for s in ["sua,measured,median", "paillier,measured,median", "plaintext,measured,median"] {
        assert!(csv.contains(s), "{s}");
    }
}
