use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn influx(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_influx"));
    cmd.args(args).current_dir(dir);
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("INFLUX_")) {
        cmd.env_remove(k);
    }
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

#[test]
fn same_seed_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |out: &'static str| vec!["simulate", "--seed", "9", "--participants", "24", "--games", "10", "--out", out];
    ok(&influx(tmp.path(), &args("a"), &[]));
    ok(&influx(tmp.path(), &[&["--jobs", "3"][..], &args("b")].concat(), &[]));
    for f in ["dataset.csv", "ground_truth.csv", "run-manifest.json"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        if f == "run-manifest.json" {
            let strip = |v: Vec<u8>| {
                String::from_utf8(v)
                    .unwrap()
                    .replace("\"b/", "\"a/")
                    .replace("\"out\": \"b\"", "\"out\": \"a\"")
            };
            assert_eq!(strip(a), strip(b));
        } else {
            assert_eq!(a, b, "{f}");
        }
    }
}

#[test]
fn errors_are_json_with_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = influx(tmp.path(), &["fit"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "ConfigError");

    let out = influx(tmp.path(), &["fit", "--input", "missing.csv", "--out", "o"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "IoError");

    fs::write(tmp.path().join("bad.csv"), "session_id,game_id\n").unwrap();
    let out = influx(tmp.path(), &["fit", "--input", "bad.csv", "--out", "o"], &[]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert!(e["message"].as_str().is_some_and(|m| !m.is_empty()));
    assert_ne!(e["error"], "ConfigError");

    let out = influx(tmp.path(), &["--jobs", "0", "simulate", "--out", "o"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flag_beats_env_beats_file_beats_default() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.conf"), "# settings\nparticipants = 18\ngames = 6\nseed = 4\n").unwrap();
    let read_seed = |dir: &str| {
        let m: serde_json::Value =
            serde_json::from_slice(&fs::read(tmp.path().join(dir).join("run-manifest.json")).unwrap()).unwrap();
        (m["seed"].as_u64().unwrap(), m["config"]["participants"].as_str().unwrap().to_string())
    };
    ok(&influx(tmp.path(), &["--config", "run.conf", "simulate", "--out", "file"], &[]));
    assert_eq!(read_seed("file"), (4, "18".into()));
    ok(&influx(tmp.path(), &["--config", "run.conf", "simulate", "--out", "env"], &[("INFLUX_SEED", "5")]));
    assert_eq!(read_seed("env").0, 5);
    ok(&influx(
        tmp.path(),
        &["simulate", "--seed", "6", "--out", "flag"],
        &[("INFLUX_SEED", "5"), ("INFLUX_CONFIG", "run.conf")],
    ));
    assert_eq!(read_seed("flag"), (6, "18".into()));
    ok(&influx(tmp.path(), &["simulate", "--games", "4", "--out", "default"], &[]));
    assert_eq!(read_seed("default").1, "60");
}

#[test]
fn crossval_null_only_to_named_file() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&influx(tmp.path(), &["simulate", "--participants", "24", "--games", "20", "--out", "sim"], &[]));
    let stdout = ok(&influx(
        tmp.path(),
        &["crossval", "--input", "sim/dataset.csv", "--methods", "null", "--iterations", "5", "--out", "r.csv"],
        &[],
    ));
    assert!(stdout.contains("seed:"));
    let report = fs::read_to_string(tmp.path().join("r.csv")).unwrap();
    let mut lines = report.lines();
    assert!(lines.next().unwrap().starts_with("method,training_size"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.starts_with("null,")));
    assert!(tmp.path().join("r.manifest.json").exists());
}

#[test]
fn unpredictability_recovers_injected_noise() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&influx(tmp.path(), &["control", "--pairs", "500", "--noise", "5", "--out", "ctl"], &[]));
    ok(&influx(tmp.path(), &["unpredictability", "--pairs", "ctl/pairs.csv", "--out", "u"], &[]));
    let est: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("u/estimate.json")).unwrap()).unwrap();
    let std = est["std_eta_round2"].as_f64().unwrap();
    assert!((std - 5.0).abs() <= 0.25, "std {std}");
    let curve = fs::read_to_string(tmp.path().join("u/lambda_curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("lambda,rms"));
    assert_eq!(curve.lines().count(), 102);
}
