use std::process::{Command, Output};

fn whitehat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_whitehat")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const HONEYPOT_EXPLOIT: &str = "0x182d58c9e24cfc15bdb0ab2b799fbf2c938fbe62";

#[test]
fn scenario_run_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("fork.json");
    let f = file.to_str().unwrap();
    assert!(whitehat(&["scenario", "export", "fork-pair", f]).status.success());
    let a = whitehat(&["--seed", "3", "scenario", "run", f]);
    let b = whitehat(&["--seed", "3", "scenario", "run", f]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn scenario_list_names_the_corpus() {
    let o = whitehat(&["scenario", "list"]);
    assert!(o.status.success());
    let names: Vec<String> = stdout(&o).lines().map(|l| l.split_whitespace().next().unwrap().to_string()).collect();
    assert_eq!(names, whitehat_core::corpus::NAMES);
}

#[test]
fn exported_scenario_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("hp.json");
    assert!(whitehat(&["scenario", "export", "honeypot-gated", file.to_str().unwrap()]).status.success());
    let text = std::fs::read_to_string(&file).unwrap();
    let scn = whitehat_core::chainsim::Scenario::from_json(&text).unwrap();
    assert_eq!(scn.to_json(), whitehat_core::corpus::build("honeypot-gated").unwrap().to_json());
    assert_eq!(scn.exploit.unwrap().to_string(), HONEYPOT_EXPLOIT);
}

#[test]
fn report_summarizes_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = whitehat(&["--out", out.to_str().unwrap(), "scenario", "run", "honeypot-gated"]);
    assert!(o.status.success());
    let o = whitehat(&["report", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("scenario honeypot-gated"), "{text}");
    assert!(!text.contains("FAILED"), "{text}");
}

#[test]
fn bid_sim_writes_csv() {
    let o = whitehat(&["bid-sim"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time_ms,bot,gas_price"));
    let rows = lines.count();
    assert!((150..=250).contains(&rows), "{rows}");

    let shipped = concat!(env!("CARGO_MANIFEST_DIR"), "/data/six_bots.json");
    let o2 = whitehat(&["bid-sim", shipped]);
    assert!(o2.status.success());
    assert_eq!(o.stdout, o2.stdout);
}

#[test]
fn missing_world_is_bad_input() {
    let o = whitehat(&["--world", "/nonexistent/world.json", "hijack", HONEYPOT_EXPLOIT]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no such world file"));
    let o = whitehat(&["hijack", HONEYPOT_EXPLOIT]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_are_bad_input() {
    assert_eq!(whitehat(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(whitehat(&["--world", "fork-pair", "hijack", "0x12"]).status.code(), Some(2));
    assert_eq!(whitehat(&["report", "/nonexistent.json"]).status.code(), Some(2));
    assert_eq!(whitehat(&["--help"]).status.code(), Some(0));
}

#[test]
fn hijack_rescues_the_honeypot() {
    let o = whitehat(&["--world", "honeypot-gated", "hijack", HONEYPOT_EXPLOIT, "--at-tick", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["strategy"], "hijack");
    assert!(v["profit"].as_f64().unwrap() > 9.9e20);
}

#[test]
fn unprofitable_hijack_is_a_stage_failure() {
    let o = whitehat(&["--world", "fork-pair", "hijack", "0xf6ad82747f9147ff046f18772dea06ed27ceea67", "--at-tick", "20"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["failure"], "unprofitable");
}

#[test]
fn backrun_by_label() {
    let o = whitehat(&["--world", "fork-pair", "backrun", "attack"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["strategy"], "backrun");
    assert_eq!(whitehat(&["--world", "fork-pair", "backrun", "nope"]).status.code(), Some(2));
}

#[test]
fn funcx_dump_lists_selectors() {
    let o = whitehat(&["--world", "honeypot-gated", "funcx", "dump", HONEYPOT_EXPLOIT, "--at-tick", "1"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let funcs = v.as_array().unwrap();
    assert!(funcs.iter().any(|f| f["is_fallback"] == true));
    assert!(funcs.iter().filter(|f| f["is_fallback"] == false).count() >= 1);
}

#[test]
fn traits_snapshot_answers_like_a_fresh_index() {
    let dir = tempfile::tempdir().unwrap();
    let idx = dir.path().join("idx.bin");
    let i = idx.to_str().unwrap();
    assert!(whitehat(&["--world", "fork-pair", "--out", i, "traits", "build"]).status.success());
    let scn = whitehat_core::corpus::build("fork-pair").unwrap();
    let lp = scn.victims[0].to_string();
    let snap = whitehat(&["traits", "similar", "--index", i, &lp]);
    let fresh = whitehat(&["--world", "fork-pair", "traits", "similar", &lp]);
    assert!(snap.status.success());
    assert_eq!(snap.stdout, fresh.stdout);
    assert!(stdout(&snap).lines().count() >= 2);
}

#[test]
fn fuzz_reports_a_profitable_case() {
    let o = whitehat(&["--world", "honeypot-gated", "fuzz", HONEYPOT_EXPLOIT, "--at-tick", "1", "--max-execs", "300"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["executions"].as_u64().unwrap() <= 300);
    assert!(v["profit"].as_f64().unwrap() > 0.0);
}
