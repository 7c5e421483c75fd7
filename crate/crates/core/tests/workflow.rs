use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration as StdDuration, Instant};

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;

use meetsched::calendar::{CalendarAccount, CalendarStore};
use meetsched::checks::payload_violations;
use meetsched::mailroom::EmailMessage;
use meetsched::sim::{resolve, scenario, Simulation, WorkerMode};
use meetsched::taskboard::{IntentLabel, MacroAction, TaskApi, TaskOutput, Tier};
use meetsched::workflow::{Agent, AgentConfig, RequestState};

fn inbound(t0: chrono::DateTime<Utc>) -> EmailMessage {
    EmailMessage {
        message_id: "<req1@corp.example>".into(),
        in_reply_to: None,
        references: vec![],
        from_addr: "alice@corp.example".into(),
        to_addrs: vec!["bob@partner.example".into()],
        cc_addrs: vec!["cal@assistant.example".into()],
        subject: "Budget review".into(),
        body: "Hi Bob, Cal will find 30 minutes for us next week.".into(),
        sent_at: t0,
        attachments: vec![],
    }
}

#[test]
fn saved_agent_resumes_mid_request() {
    let t0 = Utc.with_ymd_and_hms(2016, 4, 4, 14, 0, 0).unwrap();
    let mut cals = CalendarStore::new();
    cals.insert(CalendarAccount::new("alice@corp.example"));
    let mut agent = Agent::new(AgentConfig::default(), cals);
    agent.register_address("bob@partner.example");
    agent.receive(inbound(t0), t0).unwrap();
    let task = agent.claim_next("w1", Tier::Micro, t0).unwrap().expect("intent task");

    let dir = tempfile::tempdir().unwrap();
    agent.save(dir.path()).unwrap();
    let mut back = Agent::load(dir.path()).unwrap();
    let snap = |a: &Agent| serde_json::to_value(a.requests()).unwrap();
    assert_eq!(snap(&back), snap(&agent));
    assert_eq!(back.get_task(&task.task_id).unwrap(), agent.get_task(&task.task_id).unwrap());

    // the claim survived the restart, so only w1 can answer
    let out = TaskOutput::Intent { label: IntentLabel::NewMeeting };
    assert!(back.submit(&task.task_id, "w2", out.clone(), t0).is_err());
    back.submit(&task.task_id, "w1", out.clone(), t0 + Duration::minutes(1)).unwrap();
    agent.submit(&task.task_id, "w1", out, t0 + Duration::minutes(1)).unwrap();
    assert_eq!(snap(&back), snap(&agent));
}

#[test]
fn live_workers_drive_a_request_through_the_desk() {
    let cfg = scenario("ballot_processing", 7).unwrap();
    let sim = Simulation::new(cfg, WorkerMode::Live { poll: StdDuration::from_millis(5) }).unwrap();
    let desk = sim.desk().clone();
    let done = Arc::new(AtomicBool::new(false));
    let worker = {
        let (desk, done) = (desk.clone(), done.clone());
        thread::spawn(move || {
            let deadline = Instant::now() + StdDuration::from_secs(60);
            let mut acted = 0;
            while !done.load(Ordering::SeqCst) && Instant::now() < deadline {
                if let Some(t) = desk.claim_next("human-1", Tier::Micro).unwrap() {
                    desk.cant_answer(&t.task_id, "human-1").unwrap();
                } else if let Some(t) = desk.claim_next("expert-1", Tier::Macro).unwrap() {
                    desk.macro_action(&t.task_id, "expert-1", MacroAction::Cancel { reason: "not needed".into() }).unwrap();
                    acted += 1;
                } else {
                    thread::sleep(StdDuration::from_millis(2));
                }
            }
            acted
        })
    };
    let out = sim.run();
    done.store(true, Ordering::SeqCst);
    let acted = worker.join().unwrap();
    let out = out.unwrap();
    assert!(acted >= 1);
    assert_eq!(out.requests[0].state, "Cancelled");
    let agent = out.desk.lock();
    assert!(agent.requests().values().all(|r| r.state == RequestState::Cancelled));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 4, ..ProptestConfig::default() })]

    #[test]
    fn small_mixed_runs_settle_within_bound_and_keep_payloads_private(seed in 0u64..10_000) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("small.json");
        std::fs::write(&path, format!(r#"{{"base":"mixed","seed":{seed},"mixed_requests":12}}"#)).unwrap();
        let cfg = resolve(path.to_str().unwrap(), 0).unwrap();
        prop_assert_eq!(cfg.cases.len(), 12);
        let out = Simulation::new(cfg, WorkerMode::Scripted).unwrap().run().unwrap();
        prop_assert!(out.metrics.bound_violations.is_empty(), "{:?}", out.metrics.bound_violations);
        prop_assert_eq!(out.metrics.requests, 12);
        prop_assert_eq!(out.metrics.scheduled + out.metrics.cancelled + out.metrics.parked, 12);
        let audit = payload_violations(&out);
        prop_assert!(audit.violations.is_empty(), "{:?}", audit.violations);
    }
}
