use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn fieldnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fieldnav")).args(args).output().expect("spawn fieldnav")
}

fn ok(args: &[&str]) -> String {
    let out = fieldnav(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_then_stats_and_map_tools() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let sc = scenario("single_edge.json");
    let text = ok(&["run", "--scenario", s(&sc), "--out", s(&out)]);
    assert!(text.contains("runs"), "{text}");
    for f in ["telemetry.ndjson", "map.fnm", "supergraph.json", "report.json", "autonomy_by_day.csv", "runs.csv", "edges.csv", "timing.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    let again = dir.path().join("again");
    let stats = ok(&["stats", s(&out.join("telemetry.ndjson")), "--out", s(&again)]);
    assert!(stats.starts_with("bucket,autonomous_s,metres"), "{stats}");
    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(again.join("report.json")).unwrap()).unwrap();
    assert_eq!(a, b);

    assert_eq!(ok(&["map", "audit", s(&out)]).trim(), "ok");
    let st = ok(&["map", "stats", s(&out)]);
    assert!(st.contains("experiences 1"), "{st}");
    assert!(st.contains("taught 1"), "{st}");
    assert!(ok(&["map", "purge", s(&out), "--stale"]).contains("purged 0"));
    let bad = fieldnav(&["map", "purge", s(&out)]);
    assert!(!bad.status.success());
}

#[test]
fn duration_zero_gives_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("single_edge.json");
    ok(&["run", "--scenario", s(&sc), "--duration", "0", "--out", s(dir.path())]);
    assert_eq!(std::fs::read_to_string(dir.path().join("telemetry.ndjson")).unwrap(), "");
}

#[test]
fn recorded_scans_replay_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("mission_ring.json");
    ok(&["run", "--scenario", s(&sc), "--out", s(dir.path()), "--record-scans"]);
    let trace = dir.path().join("scans.ndjson");
    let lines = std::fs::read_to_string(&trace).unwrap().lines().count();
    assert!(lines > 0);
    let a = ok(&["replay", "scans", s(&trace), "--scenario", s(&sc)]);
    let b = ok(&["replay", "scans", s(&trace), "--scenario", s(&sc)]);
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), lines);
    assert!(a.lines().any(|l| !l.contains("\"fix\":null")));
}

#[test]
fn replay_drive_teaches_an_edge() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("drive.ndjson");
    let samples: String = (0..60).map(|i| format!("{{\"t\":{:.1},\"v\":0.6,\"w\":0.0}}\n", i as f64 * 0.5)).collect();
    std::fs::write(&trace, samples).unwrap();
    let sc = scenario("single_edge.json");
    let out = dir.path().join("out");
    let text = ok(&["replay", "drive", s(&trace), "--scenario", s(&sc), "--from", "S", "--to", "A", "--out", s(&out)]);
    assert!(text.starts_with("experience"), "{text}");
    assert!(ok(&["map", "stats", s(&out)]).contains("taught 1"));

    std::fs::write(&trace, "{\"t\":1.0,\"v\":0.6,\"w\":0.0}\n{\"t\":0.5,\"v\":0.6,\"w\":0.0}\n").unwrap();
    let bad = fieldnav(&["replay", "drive", s(&trace), "--scenario", s(&sc), "--out", s(&out)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 2"));
}

#[test]
fn bad_scenario_reports_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(scenario("single_edge.json")).unwrap()).unwrap();
    v["runtime"] = serde_json::json!({"telemetry_every": "often"});
    let p = dir.path().join("bad.json");
    std::fs::write(&p, v.to_string()).unwrap();
    let out = fieldnav(&["run", "--scenario", s(&p), "--out", s(dir.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("runtime.telemetry_every"), "{err}");
}
