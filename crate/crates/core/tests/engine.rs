use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};
use meetsched::engine::{
    Blackboard, CrashPoint, EmittedAction, Engine, EngineError, FileStore, MemoryStore, SnapshotStore, StepDef,
    StepState, WorkflowDefinition, WorkflowEvent,
};
use proptest::prelude::*;
use serde_json::json;

fn ev(inst: &str, n: usize, kind: &str, payload: serde_json::Value) -> WorkflowEvent {
    WorkflowEvent {
        event_id: format!("{inst}-e{n}"),
        instance_id: inst.into(),
        kind: kind.into(),
        payload,
        occurred_at: Utc.with_ymd_and_hms(2016, 4, 4, 9, 0, 0).unwrap() + Duration::minutes(n as i64),
    }
}

fn all_topological_orders(defn: &WorkflowDefinition) -> Vec<Vec<String>> {
    fn go(
        defn: &WorkflowDefinition,
        placed: &mut Vec<String>,
        out: &mut Vec<Vec<String>>,
    ) {
        if placed.len() == defn.steps.len() {
            out.push(placed.clone());
            return;
        }
        for s in &defn.steps {
            if placed.contains(&s.step_id) {
                continue;
            }
            if s.depends_on.iter().all(|d| placed.contains(d)) {
                placed.push(s.step_id.clone());
                go(defn, placed, out);
                placed.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(defn, &mut Vec::new(), &mut out);
    out
}

#[test]
fn diamond_runs_d_last_and_matches_a_valid_order() {
    let defn = WorkflowDefinition {
        version: 1,
        steps: vec![
            StepDef::immediate("D", &["B", "C"], "d"),
            StepDef::immediate("C", &["A"], "c"),
            StepDef::immediate("B", &["A"], "b"),
            StepDef::immediate("A", &[], "a"),
        ],
    };
    let orders = all_topological_orders(&defn);
    assert_eq!(orders.len(), 2);
    assert!(orders.iter().all(|o| o.last().unwrap() == "D"));

    let e = Engine::in_memory();
    e.register(defn.clone()).unwrap();
    e.start_instance(&ev("i", 0, "start", json!({}))).unwrap();
    let actions = e.dispatch(&ev("i", 0, "start", json!({}))).unwrap();
    let executed: Vec<String> = actions.iter().map(|a| a.step_id.clone()).collect();
    assert!(orders.contains(&executed), "{executed:?}");
    assert_eq!(executed.last().unwrap(), "D");
    assert_eq!(defn.validate().unwrap(), executed);
}

fn random_dag(n: usize, edges: &[(usize, usize)], await_mask: u32) -> WorkflowDefinition {
    let mut deps: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(a, b) in edges {
        let (a, b) = (a % n, b % n);
        if a < b {
            deps[b].insert(a);
        }
    }
    let steps = (0..n)
        .map(|i| {
            let id = format!("s{i:02}");
            let d: Vec<String> = deps[i].iter().map(|j| format!("s{j:02}")).collect();
            let d: Vec<&str> = d.iter().map(String::as_str).collect();
            if await_mask & (1 << i) != 0 {
                StepDef::on_event(&id, &d, &format!("k{}", i % 4), &format!("act{i}"))
            } else {
                StepDef::immediate(&id, &d, &format!("act{i}"))
            }
        })
        .collect();
    WorkflowDefinition { version: 1, steps }
}

proptest! {
    #[test]
    fn ready_set_is_the_in_degree_zero_set(
        n in 1usize..12,
        edges in prop::collection::vec((0usize..12, 0usize..12), 0..30),
        mask in any::<u32>(),
    ) {
        let defn = random_dag(n, &edges, mask);
        // independent in-degree computation
        let mut indeg: BTreeMap<String, usize> = BTreeMap::new();
        for s in &defn.steps {
            indeg.insert(s.step_id.clone(), s.depends_on.len());
        }
        let expected: BTreeSet<String> = indeg.into_iter().filter(|(_, d)| *d == 0).map(|(k, _)| k).collect();
        let e = Engine::in_memory();
        e.register(defn).unwrap();
        e.start_instance(&ev("i", 0, "start", json!({}))).unwrap();
        prop_assert_eq!(e.instance("i").unwrap().steps_in(StepState::Ready), expected);
    }

    #[test]
    fn duplicates_do_not_change_effects(
        n in 2usize..10,
        edges in prop::collection::vec((0usize..10, 0usize..10), 0..20),
        mask in any::<u32>(),
        kinds in prop::collection::vec(0usize..5, 1..25),
        dups in prop::collection::vec(any::<prop::sample::Index>(), 0..15),
    ) {
        let defn = random_dag(n, &edges, mask);
        let events: Vec<WorkflowEvent> = std::iter::once(ev("i", 0, "start", json!({})))
            .chain(kinds.iter().enumerate().map(|(j, k)| ev("i", j + 1, &format!("k{k}"), json!({"last": j}))))
            .collect();
        let mut noisy = events.clone();
        for d in &dups {
            let pick = events[d.index(events.len())].clone();
            let at = d.index(noisy.len()) + 1;
            noisy.insert(at.min(noisy.len()), pick);
        }
        let run = |seq: &[WorkflowEvent]| {
            let e = Engine::in_memory();
            e.register(defn.clone()).unwrap();
            e.start_instance(&seq[0]).unwrap();
            let mut acts = Vec::new();
            for x in seq {
                acts.extend(e.dispatch(x).unwrap());
            }
            let inst = e.instance("i").unwrap();
            // no deadlock: non-terminal instances always have a runnable or waiting step
            if !inst.is_terminal() {
                assert!(inst.step_states.values().any(|s| matches!(s, StepState::Ready | StepState::AwaitingEvent)));
            }
            let mut sorted = acts.clone();
            sorted.sort();
            (sorted, inst.canonical_bytes())
        };
        // at-least-once delivery versus its first-occurrence deduplication
        let mut seen = BTreeSet::new();
        let dedup: Vec<WorkflowEvent> = noisy.iter().filter(|x| seen.insert(x.event_id.clone())).cloned().collect();
        prop_assert_eq!(run(&dedup), run(&noisy));
    }
}

/// Twenty events against a definition with fan-in, blackboard arithmetic
/// and unrelated noise.
fn scenario_definition(version: u32) -> WorkflowDefinition {
    WorkflowDefinition {
        version,
        steps: vec![
            StepDef::immediate("a_intake", &[], "intake"),
            StepDef::on_event("b_left", &["a_intake"], "left", "sum_left"),
            StepDef::on_event("c_right", &["a_intake"], "right", "sum_right"),
            StepDef::immediate("d_join", &["b_left", "c_right"], "join"),
            StepDef::on_event("e_more", &["d_join"], "more", "sum_more"),
            StepDef::on_event("f_close", &["e_more"], "close", "close"),
        ],
    }
}

fn scenario_events() -> Vec<WorkflowEvent> {
    let kinds = [
        "start", "noise", "noise", "right", "noise", "noise", "noise", "left", "noise", "noise", "more", "noise",
        "noise", "noise", "noise", "noise", "noise", "noise", "noise", "close",
    ];
    kinds.iter().enumerate().map(|(n, k)| ev("req", n, k, json!({ "x": n, format!("seen_{n}"): true }))).collect()
}

fn configured(store: Arc<dyn SnapshotStore>) -> Engine {
    let e = Engine::new(store);
    e.register(scenario_definition(1)).unwrap();
    for (action, key) in [("sum_left", "left"), ("sum_right", "right"), ("join", "joined"), ("sum_more", "more")] {
        e.register_step_fn(
            action,
            Arc::new(move |bb: &Blackboard, _ev: &WorkflowEvent| {
                let total: i64 = bb.get("x").and_then(|v| v.as_i64()).unwrap_or(0)
                    + bb.get("acc").and_then(|v| v.as_i64()).unwrap_or(0);
                Blackboard::from([("acc".to_string(), json!(total)), (key.to_string(), json!(true))])
            }),
        );
    }
    e
}

fn sorted(mut v: Vec<EmittedAction>) -> Vec<EmittedAction> {
    v.sort();
    v
}

fn uninterrupted() -> (Vec<EmittedAction>, Vec<u8>) {
    let e = configured(Arc::new(MemoryStore::new()));
    let evs = scenario_events();
    e.start_instance(&evs[0]).unwrap();
    let mut acts = Vec::new();
    for x in &evs {
        acts.extend(e.dispatch(x).unwrap());
    }
    let inst = e.instance("req").unwrap();
    assert!(inst.is_terminal());
    (sorted(acts), inst.canonical_bytes())
}

#[test]
fn kill_and_resume_at_every_event_boundary() {
    let (want_acts, want_state) = uninterrupted();
    let evs = scenario_events();
    for point in [CrashPoint::BeforePersist, CrashPoint::AfterPersist] {
        for k in 0..evs.len() {
            let store = MemoryStore::new();
            let first = configured(Arc::new(store.clone()));
            first.start_instance(&evs[0]).unwrap();
            first.inject_crash(point, k as u64);
            let mut acts = Vec::new();
            let mut resume_from = evs.len();
            for (j, x) in evs.iter().enumerate() {
                match first.dispatch(x) {
                    Ok(a) => acts.extend(a),
                    Err(EngineError::Crashed(p)) => {
                        assert_eq!(p, point);
                        resume_from = j;
                        break;
                    }
                    Err(other) => panic!("{other}"),
                }
            }
            assert_eq!(resume_from, k);
            assert!(matches!(first.dispatch(&evs[0]), Err(EngineError::Crashed(_))));
            drop(first);

            // fresh process: at-least-once delivery redelivers the event in flight
            let second = configured(Arc::new(store.clone()));
            for x in &evs[resume_from..] {
                acts.extend(second.dispatch(x).unwrap());
            }
            let state = second.instance("req").unwrap().canonical_bytes();
            assert_eq!(sorted(acts), want_acts, "{point:?} at {k}");
            assert_eq!(state, want_state, "{point:?} at {k}");
        }
    }
}

#[test]
fn persisted_outbox_survives_restart_and_releases_once() {
    let store = MemoryStore::new();
    let evs = scenario_events();
    let first = configured(Arc::new(store.clone()));
    first.start_instance(&evs[0]).unwrap();
    first.inject_crash(CrashPoint::AfterPersist, 0);
    assert!(first.dispatch(&evs[0]).is_err());
    let second = configured(Arc::new(store));
    let pending = second.release_pending("req").unwrap();
    assert_eq!(pending.iter().map(|a| a.action_id.as_str()).collect::<Vec<_>>(), ["intake"]);
    assert!(second.release_pending("req").unwrap().is_empty());
    assert!(second.dispatch(&evs[0]).unwrap().is_empty());
}

#[test]
fn file_store_resume_in_fresh_engine_keeps_ready_set() {
    let dir = tempfile::tempdir().unwrap();
    let evs = scenario_events();
    let before = {
        let e = configured(Arc::new(FileStore::open(dir.path()).unwrap()));
        e.start_instance(&evs[0]).unwrap();
        for x in &evs[..4] {
            e.dispatch(x).unwrap();
        }
        e.persist("req").unwrap();
        e.instance("req").unwrap()
    };
    let e = configured(Arc::new(FileStore::open(dir.path()).unwrap()));
    let after = e.resume("req").unwrap();
    assert_eq!(after.canonical_bytes(), before.canonical_bytes());
    assert_eq!(after.steps_in(StepState::AwaitingEvent), before.steps_in(StepState::AwaitingEvent));
    assert_eq!(e.store().journal("req").unwrap().len(), 5);
    assert!(dir.path().join("req.snapshot").exists());

    // flip one byte in the body and the checksum catches it
    let path = dir.path().join("req.snapshot");
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 3] = if bytes[n - 3] == b'1' { b'2' } else { b'1' };
    std::fs::write(&path, bytes).unwrap();
    let fresh = configured(Arc::new(FileStore::open(dir.path()).unwrap()));
    assert!(matches!(fresh.resume("req"), Err(EngineError::SnapshotCorrupt(..))));
}

#[test]
fn version_pinning_survives_mid_run_registration() {
    let e = Engine::in_memory();
    e.register(scenario_definition(1)).unwrap();
    let evs = scenario_events();
    e.start_instance(&evs[0]).unwrap();
    let mut acts = e.dispatch(&evs[0]).unwrap();

    let mut v2 = scenario_definition(2);
    v2.steps.push(StepDef::immediate("g_audit", &["f_close"], "audit"));
    e.register(v2).unwrap();
    let newer = ev("later", 0, "start", json!({}));
    e.start_instance(&newer).unwrap();
    assert_eq!(e.instance("later").unwrap().definition_version, 2);

    for x in &evs[1..] {
        acts.extend(e.dispatch(x).unwrap());
    }
    assert!(acts.iter().all(|a| a.version == 1));
    assert!(!acts.iter().any(|a| a.action_id == "audit"));
    assert_eq!(e.instance("req").unwrap().definition_version, 1);
}
