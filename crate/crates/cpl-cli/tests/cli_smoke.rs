//! End-to-end runs of the cpl binary: pipeline round trips, deterministic
//! reruns, and exit-code conventions.

use std::path::Path;
use std::process::{Command, Output};

fn cpl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cpl"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn cpl")
}

fn stdout_of(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).expect("read output file")
}

#[test]
fn simulate_detect_localize_round_trip() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = dir.path().join("stream.csv");

    let out = run(cpl()
        .args(["simulate", "--n", "200", "--change-at", "60", "--seed", "7"])
        .args(["--post", r#"{"kind":"gaussian","mean":1.0,"sd":1.0}"#])
        .arg("--out")
        .arg(&data));
    stdout_of(&out);
    let lines: Vec<f64> =
        read(&data).lines().map(|l| l.parse().expect("numeric sample")).collect();
    assert_eq!(lines.len(), 200);

    let detect = stdout_of(&run(cpl().args(["detect", "--data"]).arg(&data)));
    let doc: serde_json::Value = serde_json::from_str(&detect).expect("detect JSON");
    assert_eq!(doc["alarm"], serde_json::Value::Bool(true));
    let tau = doc["tau"].as_u64().expect("tau") as usize;
    assert!((60..200).contains(&tau), "alarm at {tau}, change at 60");

    let localize = stdout_of(&run(cpl()
        .args(["localize", "--data"])
        .arg(&data)
        .args(["--survival", "asymptotic", "--survival-n", "50", "--seed", "3"])));
    let doc: serde_json::Value = serde_json::from_str(&localize).expect("localize JSON");
    assert_eq!(doc["method"], "universal");
    assert_eq!(doc["tau"].as_u64().unwrap() as usize, tau);
    let accepted: Vec<usize> = doc["accepted"]
        .as_array()
        .expect("accepted array")
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    assert_eq!(doc["size"].as_u64().unwrap() as usize, accepted.len());
    assert!(accepted.contains(&60), "set {accepted:?} misses the change at 60");
    assert!(accepted.windows(2).all(|w| w[0] < w[1]), "set not ascending");

    // the adaptive method on the same stream also covers the change
    let adaptive = stdout_of(&run(cpl()
        .args(["localize", "--data"])
        .arg(&data)
        .args(["--method", "adaptive", "--b-sims", "49", "--seed", "3"])));
    let doc: serde_json::Value = serde_json::from_str(&adaptive).expect("adaptive JSON");
    let accepted: Vec<usize> = doc["accepted"]
        .as_array()
        .expect("accepted array")
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    assert!(accepted.contains(&60), "adaptive set {accepted:?} misses the change");
}

#[test]
fn experiment_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().expect("tempdir");
    let (d1, d2) = (dir.path().join("a"), dir.path().join("b"));
    let config = r#"{"setting":"I","t_change":40}"#;
    for d in [&d1, &d2] {
        let out = run(cpl()
            .args(["experiment", "--config", config, "--runs", "8", "--seed", "11", "--sets"])
            .arg("--out")
            .arg(d));
        stdout_of(&out);
    }
    for name in ["records.csv", "summary.json", "sets.json"] {
        assert_eq!(
            read(&d1.join(name)),
            read(&d2.join(name)),
            "{name} differs between identical reruns"
        );
    }
    let records = read(&d1.join("records.csv"));
    assert_eq!(records.lines().count(), 1 + 8, "header plus one row per run");
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().expect("tempdir");
    let (d1, d2) = (dir.path().join("par"), dir.path().join("seq"));
    let config = r#"{"setting":"I","t_change":40}"#;
    let mut parallel = cpl();
    parallel
        .args(["experiment", "--config", config, "--runs", "6", "--seed", "5"])
        .arg("--out")
        .arg(&d1);
    let mut sequential = cpl();
    sequential
        .env("CPL_THREADS", "1")
        .args(["experiment", "--config", config, "--runs", "6", "--seed", "5"])
        .arg("--out")
        .arg(&d2);
    stdout_of(&run(&mut parallel));
    stdout_of(&run(&mut sequential));
    assert_eq!(read(&d1.join("records.csv")), read(&d2.join("records.csv")));
}

#[test]
fn no_alarm_is_a_clean_exit() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = dir.path().join("null.csv");
    stdout_of(&run(cpl()
        .args(["simulate", "--n", "50", "--seed", "2"])
        .arg("--out")
        .arg(&data)));
    let out = run(cpl().args(["localize", "--data"]).arg(&data));
    let text = stdout_of(&out);
    assert!(text.contains("no alarm"), "got: {text}");
}

#[test]
fn bad_inputs_exit_with_the_config_code() {
    // malformed JSON
    let out = run(cpl().args(["experiment", "--config", "{not json"]));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("configuration error"), "stderr: {err}");

    // unknown field in an otherwise valid config
    let out = run(cpl().args(["experiment", "--config", r#"{"setting":"I","bogus":1}"#]));
    assert_eq!(out.status.code(), Some(2));

    // unknown flag is a clap usage error, also 2
    let out = run(cpl().args(["detect", "--no-such-flag"]));
    assert_eq!(out.status.code(), Some(2));

    // alpha out of range
    let dir = tempfile::tempdir().expect("tempdir");
    let data = dir.path().join("d.csv");
    stdout_of(&run(cpl()
        .args(["simulate", "--n", "10", "--seed", "1"])
        .arg("--out")
        .arg(&data)));
    let out = run(cpl().args(["localize", "--alpha", "1.5", "--data"]).arg(&data));
    assert_eq!(out.status.code(), Some(2));

    // missing data file is a runtime error
    let out = run(cpl().args(["detect", "--data", "/nonexistent/stream.csv"]));
    assert_eq!(out.status.code(), Some(1));

    // CPL_THREADS must be a positive integer
    let out = run(cpl().env("CPL_THREADS", "zero").args(["detect", "--data", "x"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bounds_and_duality_commands_emit_their_tables() {
    let out = stdout_of(&run(cpl().args([
        "bounds",
        "--alpha",
        "0.05",
        "--t-change",
        "50",
        "--delay-runs",
        "40",
    ])));
    let doc: serde_json::Value = serde_json::from_str(&out).expect("bounds JSON");
    assert!(doc["total"].as_f64().expect("total") > 0.0);

    let out = stdout_of(&run(cpl().args([
        "duality",
        "--config",
        r#"{"setting":"I","theta":1.0,"t_change":30}"#,
        "--grid",
        "10,30",
        "--sims",
        "40",
        "--seed",
        "9",
    ])));
    assert!(out.contains("t=10") && out.contains("t=30"), "grid rows missing: {out}");
}
