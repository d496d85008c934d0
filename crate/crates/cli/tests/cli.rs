use std::path::Path;
use std::process::{Command, Output};

fn bdtf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdtf"))
        .args(args)
        .env_remove("BDTF_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scenario_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn honest_trade_exits_zero() {
    let o = bdtf(&["run", "--scenario", "honest-trade"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("buyer-0: Completed"));
}

#[test]
fn fake_chain_attack_reports_rejection() {
    let o = bdtf(&["run", "--scenario", "fake-chain-attack"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("[pass] enclave rejected all fake headers"));
}

#[test]
fn trace_files_repeat_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        let o = bdtf(&["run", "--scenario", "honest-trade", "--seed", "1", "--trace", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    let ta = std::fs::read(&a).unwrap();
    assert!(!ta.is_empty());
    assert_eq!(ta, std::fs::read(&b).unwrap());
    for line in String::from_utf8(ta).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["sim_time", "actor", "event_kind", "payload_digest"] {
            assert!(v.get(key).is_some(), "{line}");
        }
    }
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let env_trace = dir.path().join("env.jsonl");
    let flag_trace = dir.path().join("flag.jsonl");
    let o = Command::new(env!("CARGO_BIN_EXE_bdtf"))
        .args(["run", "--scenario", "honest-trade", "--trace", env_trace.to_str().unwrap()])
        .env("BDTF_SEED", "5")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("(seed 5)"));
    let o = bdtf(&["run", "--scenario", "honest-trade", "--seed", "5", "--trace", flag_trace.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(env_trace).unwrap(), std::fs::read(flag_trace).unwrap());
}

#[test]
fn report_file_is_json() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.json");
    let o = bdtf(&["run", "--scenario", "refuse-to-pay", "--report", p.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["report"]["buyers"][0]["outcome"]["AbortedAtStep"], 11);
}

#[test]
fn failed_assertion_exits_one() {
    // The mutation hook lets a non-paying buyer read the data; the audit
    // flags it and the run fails.
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gate-off.json");
    std::fs::write(
        &p,
        r#"{"disable_release_gate": true, "adversary": {"halt": {"party": "buyer", "step": 11}}}"#,
    )
    .unwrap();
    let o = bdtf(&["run", "--scenario", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    assert!(stdout(&o).contains("release_without_payment"));
}

#[test]
fn config_errors_exit_two() {
    assert_eq!(code(&bdtf(&["run", "--scenario", "no-such-thing"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"exchanges": 0}"#).unwrap();
    assert_eq!(code(&bdtf(&["run", "--scenario", bad.to_str().unwrap()])), 2);
    std::fs::write(&bad, r#"{"unknown_field": 1}"#).unwrap();
    assert_eq!(code(&bdtf(&["run", "--scenario", bad.to_str().unwrap()])), 2);
    std::fs::write(&bad, "not json").unwrap();
    assert_eq!(code(&bdtf(&["run", "--scenario", bad.to_str().unwrap()])), 2);
    assert_eq!(code(&bdtf(&["run"])), 2);
}

#[test]
fn shipped_scenario_files_pass() {
    let mut n = 0;
    for entry in std::fs::read_dir(scenario_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let o = bdtf(&["run", "--scenario", path.to_str().unwrap()]);
            assert_eq!(code(&o), 0, "{}: {}", path.display(), stdout(&o));
            n += 1;
        }
    }
    assert!(n >= 8);
}

#[test]
fn builtin_files_match_builtins() {
    for name in bdtf_cli::scenarios::BUILTIN {
        let o = bdtf(&["show", "--scenario", name]);
        assert_eq!(code(&o), 0);
        let shown: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        let file = scenario_dir().join(format!("{name}.json"));
        let shipped: serde_json::Value = serde_json::from_slice(&std::fs::read(file).unwrap()).unwrap();
        assert_eq!(shown, shipped, "{name}");
    }
}

#[test]
fn sweep_exit_codes() {
    let o = bdtf(&["sweep", "--fairness", "--seeds", "1", "--steps", "10-12"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS"));

    let o = bdtf(&[
        "sweep", "--fairness", "--seeds", "1", "--parties", "buyer", "--steps", "11", "--specials", "none",
        "--disable-release-gate",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("party=buyer step=13 seed=0"), "{}", stdout(&o));

    assert_eq!(code(&bdtf(&["sweep", "--fairness", "--parties", "none", "--specials", "none"])), 2);
    assert_eq!(code(&bdtf(&["sweep", "--fairness", "--seeds", "0"])), 2);
    assert_eq!(code(&bdtf(&["sweep"])), 2);
    assert_eq!(code(&bdtf(&["sweep", "--fairness", "--steps", "16"])), 2);
}

#[test]
fn bench_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    let o = bdtf(&[
        "bench", "--load", "20,80", "--duration", "30", "--reps", "2", "--enclave-reps", "20",
        "--enclave-data-bytes", "4096", "--out", p.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap();
    assert_eq!(v["schema"], "bdtf-metrics/1");
    assert_eq!(v["simulated"]["time_base"], "simulated");
    assert_eq!(v["wall_clock"]["time_base"], "wall_clock");
    assert_eq!(v["simulated"]["tx_throughput"].as_array().unwrap().len(), 2);
    assert_eq!(code(&bdtf(&["bench", "--load", "0"])), 2);
    assert_eq!(code(&bdtf(&["bench"])), 2);
}

// Keys must match the schema exactly: every required key present, nothing
// the schema does not list.
fn conforms(schema: &serde_json::Value, defs: &serde_json::Value, v: &serde_json::Value, at: &str) {
    let schema = match schema["$ref"].as_str() {
        Some(r) => &defs[r.trim_start_matches("#/$defs/")],
        None => schema,
    };
    if let Some(c) = schema.get("const") {
        assert_eq!(v, c, "{at}");
    }
    match schema["type"].as_str() {
        Some("object") => {
            let obj = v.as_object().unwrap_or_else(|| panic!("{at}: not an object"));
            let props = schema["properties"].as_object().unwrap();
            for k in schema["required"].as_array().unwrap() {
                assert!(obj.contains_key(k.as_str().unwrap()), "{at}: missing {k}");
            }
            for (k, x) in obj {
                let sub = props.get(k).unwrap_or_else(|| panic!("{at}: unlisted key {k}"));
                conforms(sub, defs, x, &format!("{at}.{k}"));
            }
        }
        Some("array") => {
            for (i, x) in v.as_array().unwrap().iter().enumerate() {
                conforms(&schema["items"], defs, x, &format!("{at}[{i}]"));
            }
        }
        Some("integer") => assert!(v.is_u64(), "{at}: not an integer"),
        Some("number") => assert!(v.is_number(), "{at}: not a number"),
        _ => {}
    }
}

#[test]
fn bench_report_matches_schema() {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/metrics-report.schema.json");
    let schema: serde_json::Value =
        serde_json::from_slice(&std::fs::read(schema_path).unwrap()).unwrap();
    let o = bdtf(&[
        "bench", "--load", "10,60", "--duration", "20", "--reps", "2", "--enclave-reps", "5",
        "--enclave-data-bytes", "1024",
    ]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    conforms(&schema, &schema["$defs"], &v, "$");
}
