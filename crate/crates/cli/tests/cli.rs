use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cuckoo_core::Scenario;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cuckoo-sim"))
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn bundled() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(scenarios_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "scenario"))
        .collect();
    v.sort();
    v
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn bundled_scenarios_exit_as_declared() {
    let all = bundled();
    assert!(all.len() >= 8);
    for path in all {
        let sc = Scenario::load(&path).unwrap();
        let o = run(&[path.to_str().unwrap(), "-q"]);
        assert_eq!(
            o.status.code(),
            Some(sc.expect.exit_code()),
            "{}: {}{}",
            path.display(),
            stdout(&o),
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn benign_reports_every_property_pass() {
    let o = run(&[scenarios_dir().join("benign_4_1.scenario").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for id in ["RB1", "RB2", "RB3", "RRB1", "RRB2", "RRB3", "CO1", "CO2", "CO3", "REPLICA", "CUCKOO"] {
        assert!(out.lines().any(|l| l.split_whitespace().collect::<Vec<_>>()[..2] == [id, "PASS"]), "{id}:\n{out}");
    }
    assert!(!out.contains("VACUOUS"), "{out}");
}

#[test]
fn equivocation_witness_names_the_controlled_processor() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let o = run(&[
        scenarios_dir().join("equivocate_4_1.scenario").to_str().unwrap(),
        "--report-out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    let cuckoo = json["properties"].as_array().unwrap().iter().find(|p| p["id"] == "CUCKOO").unwrap();
    assert_eq!(cuckoo["verdict"], "PASS");
    assert_eq!(cuckoo["witness"]["detail"], "replaced p3:9->12");
}

#[test]
fn traces_are_byte_identical_and_recheckable() {
    let dir = tempfile::tempdir().unwrap();
    for path in bundled() {
        let sc = Scenario::load(&path).unwrap();
        if sc.expect.exit_code() != 0 {
            continue;
        }
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        for t in [&a, &b] {
            let o = run(&[path.to_str().unwrap(), "-q", "--trace-out", t.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0));
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{}", path.display());
        let o = run(&["--trace-in", a.to_str().unwrap(), "-q"]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    }
}

#[test]
fn seed_override_changes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenarios_dir().join("benign_4_1.scenario");
    let mut traces = Vec::new();
    for seed in ["1", "2"] {
        let t = dir.path().join(format!("{seed}.jsonl"));
        let o = run(&[path.to_str().unwrap(), "-q", "--seed", seed, "--trace-out", t.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        traces.push(std::fs::read(t).unwrap());
    }
    assert_ne!(traces[0], traces[1]);
}

#[test]
fn sweep_prints_one_line_per_seed() {
    let o = run(&[scenarios_dir().join("equivocate_4_1.scenario").to_str().unwrap(), "--sweep", "6", "--seed", "100"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for s in 100..106 {
        assert!(out.contains(&format!("seed {s}: pass")), "{out}");
    }
    assert!(out.contains("6/6 seeds passed"));
}

#[test]
fn usage_and_parse_errors_exit_3() {
    let benign = scenarios_dir().join("benign_4_1.scenario");
    assert_eq!(run(&[benign.to_str().unwrap(), "--sweep", "0"]).status.code(), Some(3));
    assert_eq!(run(&[benign.to_str().unwrap(), "--check", "NOPE"]).status.code(), Some(3));
    assert_eq!(run(&[]).status.code(), Some(3));
    assert_eq!(run(&["/nonexistent.scenario"]).status.code(), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scenario");
    std::fs::write(&bad, "name = \"x\"\n[faults]\nthreshold = { n = 4 }\n").unwrap();
    assert_eq!(run(&[bad.to_str().unwrap()]).status.code(), Some(3));

    // controlled set outside the collection
    std::fs::write(
        &bad,
        "name = \"x\"\n[faults]\nthreshold = { n = 4, t = 1 }\n[adversary]\ncontrolled = [0, 1]\n[[rb]]\nsender = 0\nvalue = 1\n",
    )
    .unwrap();
    assert_eq!(run(&[bad.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn predicate_violation_exits_4() {
    let o = run(&[scenarios_dir().join("threshold_3_1.scenario").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn starved_budget_exits_5() {
    let o = run(&[
        scenarios_dir().join("benign_4_1.scenario").to_str().unwrap(),
        "--max-events",
        "20",
        "--quiet-extension",
        "0",
        "-q",
    ]);
    assert_eq!(o.status.code(), Some(5), "{}", stdout(&o));
}

#[test]
fn check_filter_limits_the_report() {
    let o = run(&[scenarios_dir().join("benign_4_1.scenario").to_str().unwrap(), "--check", "RB1,cuckoo"]);
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().filter(|l| l.starts_with("  ")).collect();
    assert_eq!(rows.len(), 2, "{out}");
}
