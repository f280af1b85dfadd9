use std::path::Path;
use std::process::{Command, Output};

use retrolola_core::ddos::{self, FlowRecord};
use retrolola_core::{builtins, Event, Value};
use serde_json::Value as Json;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_retrolola");

fn retrolola(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn write_trace(path: &Path, events: &[Event]) {
    let text: String = events.iter().map(|e| e.to_line().unwrap() + "\n").collect();
    std::fs::write(path, text).unwrap();
}

fn read_trace(path: &Path) -> Vec<Event> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| Event::from_line(l).unwrap()).collect()
}

fn stdout_json(out: &Output) -> Vec<Json> {
    String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn altitude_violation_exits_1_at_the_right_instant() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("alt.jsonl");
    let events: Vec<_> = [50.0, 120.0]
        .iter()
        .enumerate()
        .map(|(i, a)| Event::new(i as u64).with("altitude", Value::Float(*a)))
        .collect();
    write_trace(&input, &events);
    let out = retrolola(&["run", "--spec", "altitude", "--input", s(&input)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_json(&out), [serde_json::json!({ "instant": 1, "violation": "alt_ok" })]);

    let full = retrolola(&["run", "--spec", "altitude", "--input", s(&input), "--output", "full"]);
    let rows = stdout_json(&full);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["outputs"]["alt_ok"], Json::Bool(true));
    assert_eq!(rows[1]["outputs"]["alt_ok"], Json::Bool(false));
}

#[test]
fn valid_handshake_exits_0_from_stdin() {
    let packets = builtins::handshake_packets("h1", "h2");
    let text: String = packets
        .iter()
        .enumerate()
        .map(|(i, p)| builtins::handshake_event(i, p).to_line().unwrap() + "\n")
        .collect();
    let mut child = Command::new(BIN)
        .args(["run", "--spec", "handshake", "--input", "-"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child.stdin.take().unwrap().write_all(text.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("bad.jsonl");
    std::fs::write(&input, "{\"instant\": 0, \"streams\": {\"altitude\": 1.0}}\nnot json\n").unwrap();
    let out = retrolola(&["run", "--spec", "altitude", "--input", s(&input)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = retrolola(&["run", "--spec", "no-such-spec", "--input", s(&input)]);
    assert_eq!(out.status.code(), Some(2));

    // retrieving specs need a log
    let out = retrolola(&["run", "--spec", "retro-openfiles", "--input", s(&input)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--log-store"));
}

#[test]
fn log_store_records_the_trace() {
    let dir = TempDir::new().unwrap();
    let b = builtins::by_name("retro-openfiles").unwrap();
    let trace = b.random_trace(9, 80);
    let input = dir.path().join("ops.jsonl");
    write_trace(&input, &trace.events);
    let store = dir.path().join("store");
    let out = retrolola(&["run", "--spec", "retro-openfiles", "--input", s(&input), "--log-store", s(&store)]);
    assert!(matches!(out.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_trace(&store.join("trace.log")), trace.events);

    // a second run into the same store is refused
    let again = retrolola(&["run", "--spec", "retro-openfiles", "--input", s(&input), "--log-store", s(&store)]);
    assert_eq!(again.status.code(), Some(2));
}

#[test]
fn spec_file_runs_like_the_builtin() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("altitude.json");
    std::fs::write(&spec, serde_json::to_string(&builtins::altitude()).unwrap()).unwrap();
    let trace = builtins::by_name("altitude").unwrap().random_trace(4, 60);
    let input = dir.path().join("alt.jsonl");
    write_trace(&input, &trace.events);
    let a = retrolola(&["run", "--spec", s(&spec), "--input", s(&input), "--output", "full"]);
    let b = retrolola(&["run", "--spec", "altitude", "--input", s(&input), "--output", "full"]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.status.code(), b.status.code());
}

#[test]
fn oracle_check_passes_on_builtins() {
    let dir = TempDir::new().unwrap();
    for b in builtins::all() {
        let trace = b.random_trace(1, 40);
        let input = dir.path().join(format!("{}.jsonl", b.name));
        write_trace(&input, &trace.events);
        let mut args = vec!["oracle-check", "--spec", b.name, "--input", s(&input)];
        let past = dir.path().join(format!("{}.past", b.name));
        if let Some(log) = &trace.log {
            write_trace(&past, log);
            args.extend(["--past", s(&past)]);
        }
        let out = retrolola(&args);
        assert_eq!(out.status.code(), Some(0), "{}: {}", b.name, String::from_utf8_lossy(&out.stdout));
    }
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(retrolola(&["oracle-check", "--spec", "handshake", "--input", s(&empty)]).status.code(), Some(0));
}

#[test]
fn generated_traffic_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let gen = |name: &str| {
        let out = dir.path().join(name);
        let st = retrolola(&["gen-traffic", "--profile", "d4", "--flows", "800", "--seed", "5", "--out", s(&out)]);
        assert!(st.status.success());
        let sum = dir.path().join(format!("{name}.sum"));
        assert!(retrolola(&["summarize", "--input", s(&out), "--out", s(&sum)]).status.success());
        (std::fs::read(&out).unwrap(), std::fs::read(sum).unwrap(), std::fs::read(dir.path().join(format!("{name}.truth.json"))).unwrap())
    };
    assert_eq!(gen("a"), gen("b"));
}

#[test]
fn summaries_of_an_attacked_batch_cross_only_the_malformed_udp_threshold() {
    let dir = TempDir::new().unwrap();
    let flows = dir.path().join("d1.log");
    let sum = dir.path().join("d1.sum");
    assert!(retrolola(&["gen-traffic", "--profile", "d1", "--flows", "5000", "--seed", "1", "--out", s(&flows)]).status.success());
    assert!(retrolola(&["summarize", "--input", s(&flows), "--out", s(&sum)]).status.success());
    let summaries = read_trace(&sum);
    assert_eq!(summaries.len(), 1);
    let markers = summaries[0].get("markers").unwrap().as_list().unwrap().to_vec();
    let attacks = ddos::attacks();
    assert_eq!(markers.len(), attacks.len());

    // recompute each marker from the flows: max over destinations of volume / duration
    let records: Vec<FlowRecord> = read_trace(&flows).iter().map(|e| FlowRecord::from_event(e).unwrap()).collect();
    for (a, m) in attacks.iter().zip(&markers) {
        let mut per_dst: std::collections::BTreeMap<&str, (f64, f64, f64)> = Default::default();
        for f in records.iter().filter(|f| f.protocol == a.protocol && f.dst_port == a.dst_port) {
            let vol = match a.marker {
                ddos::MarkerKind::PacketsPerSecond => f.packets as f64,
                ddos::MarkerKind::BitsPerSecond => (f.bytes * 8) as f64,
            };
            let e = per_dst.entry(&f.dst_addr).or_insert((0.0, f.start_time, f.end_time));
            e.0 += vol;
            e.1 = e.1.min(f.start_time);
            e.2 = e.2.max(f.end_time);
        }
        let want = per_dst.values().map(|(v, s, e)| v / (e - s).max(1.0)).fold(0.0, f64::max);
        let got = m.as_float().unwrap();
        assert!((got - want).abs() <= 1e-9 * want.max(1.0), "attack {}: {got} vs {want}", a.id);
        assert_eq!(got > a.t0, a.id == 0, "attack {}: marker {got}, threshold {}", a.id, a.t0);
    }
}

#[test]
fn benign_summaries_run_no_nested_monitor() {
    let dir = TempDir::new().unwrap();
    let flows = dir.path().join("d2.log");
    let sum = dir.path().join("d2.sum");
    let report = dir.path().join("report.json");
    assert!(retrolola(&["gen-traffic", "--profile", "d2", "--flows", "3000", "--seed", "2", "--out", s(&flows)]).status.success());
    assert!(retrolola(&["summarize", "--input", s(&flows), "--out", s(&sum)]).status.success());
    let out = retrolola(&["run", "--spec", "ddos-s3", "--input", s(&sum), "--past", s(&flows), "--report", s(&report)]);
    assert_eq!(out.status.code(), Some(0));
    let doc: Json = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc["metrics"]["nested_runs"], 0);
    assert_eq!(doc["metrics"]["nested_events"], 0);
}

#[test]
fn attacked_summary_is_reported_through_the_adapter() {
    let dir = TempDir::new().unwrap();
    let flows = dir.path().join("d4.log");
    let sum = dir.path().join("d4.sum");
    assert!(retrolola(&["gen-traffic", "--profile", "d4", "--flows", "1500", "--seed", "8", "--out", s(&flows)]).status.success());
    assert!(retrolola(&["summarize", "--input", s(&flows), "--out", s(&sum)]).status.success());
    let truth: Vec<ddos::GroundTruth> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("d4.log.truth.json")).unwrap()).unwrap();
    let adapter = env!("CARGO_BIN_EXE_retrolola-adapter");
    let out = retrolola(&["run", "--spec", "ddos-s3", "--input", s(&sum), "--past", s(&flows), "--adapter", adapter, "--output", "full"]);
    assert_eq!(out.status.code(), Some(1));
    let rows = stdout_json(&out);
    let hit: Vec<_> = rows.iter().filter(|r| r["outputs"]["summary_ok"] == Json::Bool(false)).collect();
    assert_eq!(hit.len(), 1);
    let summaries = read_trace(&sum);
    let u = hit[0]["instant"].as_u64().unwrap() as usize;
    assert_eq!(summaries[u].get("file_id"), Some(&Value::Int(truth[0].file_id)));
    assert_eq!(hit[0]["outputs"]["attacked"][truth[0].attack.to_string()], Json::String(truth[0].victim.clone()));
}
