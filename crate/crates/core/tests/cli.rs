use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

use dentres::audio::{write_wav, AudioRecording, WavEncoding};
use dentres::detect::{load_profile, log_likelihood};
use dentres::features::apply_range_slice;

fn dentres(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dentres"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = dentres(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_json(path: &Path, v: &Value) -> PathBuf {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_path_buf()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn measurements(dir: &Path, name: &str, seed: u64, teeth: Value, per_tooth: usize) -> PathBuf {
    let scenario = write_json(
        &dir.join(format!("{name}.scenario.json")),
        &json!({
            "kind": "measurements",
            "seed": seed,
            "envelope_seed": 7,
            "teeth": teeth,
            "measurements_per_tooth": per_tooth,
        }),
    );
    let out = dir.join(name);
    ok(&["simulate", s(&scenario), "--out", s(&out)]);
    out.join("session.json")
}

#[test]
fn simulate_sequence_duration_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_json(
        &dir.path().join("seq.json"),
        &json!({
            "kind": "sequence",
            "seed": 3,
            "teeth": [
                {"tooth": 17, "dwell_s": 0.6},
                {"tooth": 18, "dwell_s": 1.1},
                {"tooth": 19, "dwell_s": 0.8}
            ]
        }),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", s(&scenario), "--out", s(&a)]);
    ok(&["simulate", s(&scenario), "--out", s(&b)]);
    let wav = fs::read(a.join("sequence.wav")).unwrap();
    assert_eq!(wav, fs::read(b.join("sequence.wav")).unwrap());

    let rec = dentres::audio::load_wav(a.join("sequence.wav")).unwrap();
    let hop = 551.0 / 44100.0;
    assert!((rec.duration_s() - 2.5).abs() <= hop, "duration {}", rec.duration_s());
    let truth = read_json(&a.join("sequence.truth.json"));
    assert_eq!(truth["f0"], json!(260.0));
}

#[test]
fn extract_writes_fixed_length_signatures_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let session = measurements(dir.path(), "m", 1, json!([{"tooth": 3}]), 2);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["extract", s(&session), "--out", s(&a), "--plot-data"]);
    ok(&["extract", s(&session), "--out", s(&b), "--plot-data"]);
    let sigs = read_json(&a.join("signatures.json"));
    let sigs = sigs.as_array().unwrap();
    assert_eq!(sigs.len(), 2);
    for r in sigs {
        assert_eq!(r["signature"]["values"].as_array().unwrap().len(), 75);
    }
    for name in ["signatures.json", "tooth03_000.sig.json", "tooth03_001.cepstrum.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let slices = fs::read_to_string(a.join("tooth03_000.slices.csv")).unwrap();
    assert!(slices.starts_with("bin_freq,log_mag,low,mid,high"));
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("silent.wav");
    write_wav(&wav, &AudioRecording::new(vec![0.0; 44100], 44100).unwrap(), WavEncoding::Pcm16).unwrap();
    let session = write_json(
        &dir.path().join("session.json"),
        &json!({"entries": [{"audio": "silent.wav", "teeth": [4], "quadrant": "upper-right", "timestamp": "2024-01-01T00:00:00Z"}]}),
    );
    let out = dentres(&["extract", s(&session), "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient signal energy"));

    let missing = dentres(&["extract", s(&dir.path().join("nope.json")), "--out", s(dir.path())]);
    assert_eq!(missing.status.code(), Some(3));

    let band = dentres(&["extract", s(&session), "--out", s(dir.path()), "--band", "9000:3000"]);
    assert_eq!(band.status.code(), Some(2));
}

#[test]
fn enroll_and_detect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let refs = measurements(dir.path(), "refs", 10, json!([{"tooth": 8}, {"tooth": 9}]), 5);

    let first = ok(&["enroll", s(&refs), "--store", s(&store)]);
    let profiles = first.as_array().unwrap();
    assert_eq!(profiles.len(), 6);
    assert!(profiles.iter().all(|p| p["n_references"] == 5 && p["version"] == 1));
    let second = ok(&["enroll", s(&refs), "--store", s(&store)]);
    assert!(second.as_array().unwrap().iter().all(|p| p["version"] == 2));

    let tests = measurements(
        dir.path(),
        "tests",
        20,
        json!([{"tooth": 8}, {"tooth": 9, "perturb": {"mode": "remove_peak", "severity": 1.0}}]),
        3,
    );
    let report = ok(&["detect", s(&tests), "--store", s(&store)]);
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);

    // k = 1 scores exactly the first measurement of each tooth
    ok(&["extract", s(&tests), "--out", s(&dir.path().join("sigs"))]);
    let sigs = read_json(&dir.path().join("sigs/signatures.json"));
    for row in rows {
        let tooth = row["tooth"].as_u64().unwrap();
        let condition = row["condition"].as_str().unwrap();
        let profile = load_profile(store.join(format!("tooth-{tooth:02}/{condition}.json"))).unwrap();
        let first = sigs
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["teeth"][0].as_u64() == Some(tooth))
            .unwrap();
        let values: Vec<f64> = serde_json::from_value(first["signature"]["values"].clone()).unwrap();
        let x = apply_range_slice(&values, &profile.range).unwrap();
        let expected = log_likelihood(&profile, &x).unwrap().log_likelihood;
        assert!((row["log_likelihood"].as_f64().unwrap() - expected).abs() <= 1e-9 * expected.abs().max(1.0));
    }

    let caries = |tooth: u64| {
        rows.iter()
            .find(|r| r["tooth"] == tooth && r["condition"] == "caries")
            .unwrap()
            .clone()
    };
    let damaged = caries(9);
    assert!(damaged["log_likelihood"].as_f64().unwrap() < damaged["self_test_median"].as_f64().unwrap());

    let k3 = ok(&["detect", s(&tests), "--store", s(&store), "--k", "3"]);
    assert!(k3["rows"].as_array().unwrap().iter().all(|r| r["k"] == 3));
    let short = dentres(&["detect", s(&tests), "--store", s(&store), "--k", "5"]);
    assert_eq!(short.status.code(), Some(4));
    let msg = String::from_utf8_lossy(&short.stderr);
    assert!(msg.contains("short by 2"), "{msg}");
}

#[test]
fn enroll_rejects_empty_session() {
    let dir = tempfile::tempdir().unwrap();
    let session = write_json(&dir.path().join("empty.json"), &json!({"entries": []}));
    let out = dentres(&["enroll", s(&session), "--store", s(&dir.path().join("store"))]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn aligning_a_recording_to_itself_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_json(
        &dir.path().join("seq.json"),
        &json!({
            "kind": "sequence",
            "seed": 5,
            "teeth": [{"tooth": 25, "dwell_s": 0.7}, {"tooth": 26, "dwell_s": 0.9}, {"tooth": 27, "dwell_s": 0.6}]
        }),
    );
    let sim = dir.path().join("sim");
    ok(&["simulate", s(&scenario), "--out", s(&sim)]);
    let (wav, truth) = (sim.join("sequence.wav"), sim.join("sequence.truth.json"));
    let out = dir.path().join("align");
    let summary = ok(&[
        "align",
        "--reference", s(&wav),
        "--reference-truth", s(&truth),
        "--test", s(&wav),
        "--truth", s(&truth),
        "--out", s(&out),
    ]);
    assert_eq!(summary["dtw"]["accuracy"], json!(1.0));
    assert!(summary["baseline"]["accuracy"].is_number());
    let csv = fs::read_to_string(out.join("alignment.csv")).unwrap();
    assert!(csv.starts_with("time_s,predicted_tooth,matched_ref_idx,baseline_tooth,true_tooth"));
}

#[test]
fn eval_reports_each_k_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let bench = write_json(
        &dir.path().join("bench.json"),
        &json!({
            "seed": 11,
            "detection": {
                "n_scenarios": 2,
                "modes": ["remove_peak"],
                "severity": 1.0,
                "snr_db": null,
                "direct_path_gain": 0.0,
                "peak_gain_db": 30.0,
                "bootstrap_iters": 20
            },
            "alignment": {"n_scenarios": 2}
        }),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["eval", s(&bench), "--out", s(&a)]);
    ok(&["eval", s(&bench), "--out", s(&b)]);
    for name in ["auc.csv", "roc.csv", "alignment.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let auc = fs::read_to_string(a.join("auc.csv")).unwrap();
    let rows: Vec<Vec<&str>> = auc.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.iter().map(|r| r[1]).collect::<Vec<_>>(), ["1", "3", "5"]);
    for r in &rows {
        assert_eq!(r[2].parse::<f64>().unwrap(), 1.0, "row {r:?}");
    }
}
