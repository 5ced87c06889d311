use cuckoo_core::harness::{check_trace, Verdict};
use cuckoo_core::{Event, Expect, ProcSet, Scenario, Trace, Value};

fn eps(adversary: &str, mode: &str, inputs: &str) -> Scenario {
    Scenario::from_toml(&format!(
        r#"
        name = "t"
        mode = "{mode}"
        [faults]
        threshold = {{ n = 4, t = 1 }}
        [adversary]
        {adversary}
        [protocol]
        name = "epsilon-agreement"
        lo = 0
        hi = 16
        inputs = {inputs}
        "#
    ))
    .unwrap()
}

fn run(sc: &Scenario, seed: u64) -> Trace {
    sc.with_seed(seed).run().unwrap().trace
}

fn verdict(trace: &Trace, id: &str) -> Verdict {
    check_trace(trace).unwrap().verdict(id).unwrap_or_else(|| panic!("{id} not reported"))
}

const EQUIVOCATE: &str = r#"controlled = [3]
recovery_order = [3]
tamper = { script = "equivocate-input", targets = [0, 1], alt = 12 }"#;

#[test]
fn benign_runs_are_all_pass() {
    for mode in ["BISYNCH", "BIMO"] {
        for seed in 0..5 {
            let r = check_trace(&run(&eps("", mode, "[0, 16, 5, 9]"), seed)).unwrap();
            for p in &r.properties {
                assert_eq!(p.verdict, Verdict::Pass, "{mode} seed {seed}: {p}");
            }
            assert_eq!(r.get("CUCKOO").unwrap().witness.as_ref().unwrap().detail, "no inputs replaced");
            assert_eq!(r.get("CC").is_some(), mode == "BIMO");
        }
    }
}

#[test]
fn silent_sender_leaves_validity_vacuous() {
    let sc = Scenario::from_toml(
        r#"
        name = "silent"
        [faults]
        threshold = { n = 4, t = 1 }
        [adversary]
        silent = [2]
        [[rb]]
        sender = 2
        value = 1
        "#,
    )
    .unwrap();
    let trace = run(&sc, 0);
    assert!(!trace.events.iter().any(|e| matches!(e.event, Event::AcceptRb { .. })));
    assert_eq!(verdict(&trace, "RB3"), Verdict::Pass);
    assert_eq!(verdict(&trace, "RB1"), Verdict::Vacuous);
}

#[test]
fn conflicting_recrb_accepts_fail_with_both_seqs() {
    let mut trace = run(&eps(EQUIVOCATE, "BISYNCH", "[0, 16, 5, 9]"), 1);
    let idx: Vec<usize> = trace
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(&e.event, Event::AcceptRecrb { ctx, .. } if ctx.round == 1 && ctx.sender.0 == 3))
        .map(|(i, _)| i)
        .collect();
    assert_eq!(idx.len(), 4);
    let first = trace.events[idx[0]].seq;
    let second = trace.events[idx[1]].seq;
    if let Event::AcceptRecrb { value, .. } = &mut trace.events[idx[1]].event {
        *value = Value::Input(-1);
    }
    let r = check_trace(&trace).unwrap();
    let p = r.get("RRB2").unwrap();
    assert_eq!(p.verdict, Verdict::Fail);
    let w = p.witness.as_ref().unwrap();
    assert_eq!(w.seq, Some(second));
    assert!(w.detail.contains(&format!("seq {first}")), "{}", w.detail);
}

#[test]
fn perturbed_replica_step_fails_with_witness() {
    let mut trace = run(&eps("", "BISYNCH", "[0, 16, 5, 9]"), 2);
    let (i, seq) = trace
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e.event, Event::SmStep { .. }))
        .map(|(i, e)| (i, e.seq))
        .next_back()
        .unwrap();
    if let Event::SmStep { digest, .. } = &mut trace.events[i].event {
        *digest = "0000000000000000".into();
    }
    let p = check_trace(&trace).unwrap().get("REPLICA").cloned().unwrap();
    assert_eq!(p.verdict, Verdict::Fail);
    assert_eq!(p.witness.unwrap().seq, Some(seq));
}

#[test]
fn tampered_input_is_the_cuckoo_witness() {
    // every processor hears 9 from p3, whose true input is 3
    let adv = r#"controlled = [3]
tamper = { script = "equivocate-input", targets = [0, 1, 2], alt = 9 }"#;
    for seed in 0..5 {
        let trace = run(&eps(adv, "BISYNCH", "[0, 16, 5, 3]"), seed);
        let r = check_trace(&trace).unwrap();
        let p = r.get("CUCKOO").unwrap();
        assert_eq!(p.verdict, Verdict::Pass, "seed {seed}: {p}");
        assert_eq!(p.witness.as_ref().unwrap().detail, "replaced p3:3->9");
    }
}

#[test]
fn non_adjacent_outputs_fail_cuckoo() {
    let mut trace = run(&eps("", "BISYNCH", "[0, 16, 5, 9]"), 3);
    let e = trace.events.iter_mut().find(|e| matches!(e.event, Event::Output { .. })).unwrap();
    if let Event::Output { output, .. } = &mut e.event {
        *output = serde_json::json!(16);
    }
    assert_eq!(verdict(&trace, "CUCKOO"), Verdict::Fail);
}

#[test]
fn forged_delivery_fails_noforge() {
    let mut trace = run(&eps("", "BISYNCH", "[1, 2, 3, 4]"), 0);
    let e = trace.events.iter_mut().find(|e| matches!(e.event, Event::Deliver { .. })).unwrap();
    if let Event::Deliver { env, .. } = &mut e.event {
        *env = u64::MAX;
    }
    assert_eq!(verdict(&trace, "NET_NOFORGE"), Verdict::Fail);
}

#[test]
fn core_result_without_snapshot_fails() {
    let mut trace = run(&eps("", "BIMO", "[1, 2, 3, 4]"), 0);
    let e = trace.events.iter_mut().find(|e| matches!(e.event, Event::CcDone { .. })).unwrap();
    if let Event::CcDone { snapshot, set, .. } = &mut e.event {
        let extra = ProcSet::universe(4).difference(*set).iter().next();
        let victim = snapshot.iter().next().unwrap();
        set.remove(victim);
        if let Some(x) = extra {
            set.insert(x);
        }
    }
    assert_eq!(verdict(&trace, "CC"), Verdict::Fail);
}

#[test]
fn thin_step_one_row_fails_table() {
    let mut trace = run(&eps("", "BIMO", "[1, 2, 3, 4]"), 0);
    let e = trace.events.iter_mut().find(|e| matches!(e.event, Event::Cc2 { .. })).unwrap();
    if let Event::Cc2 { counted, .. } = &mut e.event {
        *counted = ProcSet::from([0]);
    }
    assert_eq!(verdict(&trace, "CC_TABLE"), Verdict::Fail);
}

#[test]
fn starved_run_is_incomplete_not_failed() {
    let mut sc = eps("", "BISYNCH", "[0, 16, 5, 9]");
    sc.budget.max_events = 50;
    sc.budget.quiet_extension = 0;
    let out = sc.run().unwrap();
    assert!(!out.trace.complete());
    assert!(!out.report.has_failure(), "{}", out.report);
    assert_eq!(out.report.verdict("RB1"), Some(Verdict::Vacuous));
    assert_eq!(out.report.verdict("NET_FAIRNESS"), Some(Verdict::Vacuous));
    assert_eq!(out.verdict(), Expect::Incomplete);
    assert_eq!(out.exit_code(), 5);
}

#[test]
fn premature_recovery_fails() {
    let adv = r#"controlled = [1]
recovery_order = [1]
tamper = { script = "drop-then-recover" }"#;
    let mut trace = run(&eps(adv, "BISYNCH", "[2, 14, 6, 8]"), 0);
    let pos = trace.events.iter().position(|e| matches!(e.event, Event::Recover { .. })).unwrap();
    let ev = trace.events.remove(pos);
    // move the recovery before any output and renumber
    trace.events.insert(1, ev);
    for (i, e) in trace.events.iter_mut().enumerate() {
        e.seq = i as u64;
    }
    assert_eq!(verdict(&trace, "NET_RECOVERY"), Verdict::Fail);
}

#[test]
fn checker_is_deterministic() {
    let trace = run(&eps(EQUIVOCATE, "BIMO", "[0, 16, 5, 9]"), 9);
    assert_eq!(check_trace(&trace).unwrap(), check_trace(&trace).unwrap());
}
