//! Self-contained acceptance checks. Each one builds its own inputs from
//! fixed seeds, so `meetsched check <name>` is reproducible and needs no
//! files or network.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use chrono::{Duration, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engine::{
    Blackboard, CrashPoint, EmittedAction, Engine, EngineError, MemoryStore, StepDef, WorkflowDefinition,
    WorkflowEvent,
};
use crate::mailroom::{parse_invitation, render_invitation, EmailMessage, Invitation, InvitationMethod};
use crate::sim::{self, RunOutput, WorkerMode, PRIVATE_TITLES};
use crate::taskboard::Tier;
use crate::tier1::classifier::{gradient, objective};
use crate::tier1::timex::scan;
use crate::tier1::{accuracy, extract_time_expressions, generate_corpus, select_meeting_fields, train};
use crate::tier1::{FeatureDictionary, TimeExpression, TrainParams};
use crate::workflow::{EscalationReason, MessageKind};

/// Seed shared by every simulation-backed check.
pub const CHECK_SEED: u64 = 7;

const FIXTURES: &str = include_str!("../fixtures/extractor.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    /// Trained ballot classifier against the most-frequent-label baseline.
    Classifier,
    /// Exact-subset accuracy never exceeds per-choice accuracy.
    MetricIdentity,
    /// Analytic gradient against central finite differences.
    Gradient,
    /// Time extraction ignores every message but the latest.
    TimeInvariance,
    /// Nearest-to-name field selection on the bundled fixtures.
    NearestToName,
    /// Every escalation reason appears in exported catalog metrics.
    EscalationCoverage,
    /// Ballot, two reminders, warning, cancellation; a keep reply stops it.
    ReminderPipeline,
    /// Kill and resume at every event boundary; duplicate events.
    EngineDurability,
    /// In-flight requests stay on the version they started with.
    VersionPinning,
    /// Macro-requiring requests cost more work than micro-only ones.
    WorkTime,
    /// Micro payloads carry no calendar data, macro payloads no event titles.
    PayloadPolicy,
    /// Random invitations survive render then parse.
    IcsRoundTrip,
}

impl Criterion {
    pub const ALL: [Criterion; 12] = [
        Criterion::Classifier,
        Criterion::MetricIdentity,
        Criterion::Gradient,
        Criterion::TimeInvariance,
        Criterion::NearestToName,
        Criterion::EscalationCoverage,
        Criterion::ReminderPipeline,
        Criterion::EngineDurability,
        Criterion::VersionPinning,
        Criterion::WorkTime,
        Criterion::PayloadPolicy,
        Criterion::IcsRoundTrip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Classifier => "classifier",
            Criterion::MetricIdentity => "metric-identity",
            Criterion::Gradient => "gradient",
            Criterion::TimeInvariance => "time-invariance",
            Criterion::NearestToName => "nearest-to-name",
            Criterion::EscalationCoverage => "escalation-coverage",
            Criterion::ReminderPipeline => "reminder-pipeline",
            Criterion::EngineDurability => "engine-durability",
            Criterion::VersionPinning => "version-pinning",
            Criterion::WorkTime => "work-time",
            Criterion::PayloadPolicy => "payload-policy",
            Criterion::IcsRoundTrip => "ics-round-trip",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub criterion: String,
    pub passed: bool,
    pub seconds: f64,
    pub detail: Value,
}

type Outcome = Result<(bool, Value), String>;

pub fn run(c: Criterion) -> CheckReport {
    let t0 = Instant::now();
    let outcome = match c {
        Criterion::Classifier => classifier(),
        Criterion::MetricIdentity => metric_identity(),
        Criterion::Gradient => gradient_check(),
        Criterion::TimeInvariance => time_invariance(),
        Criterion::NearestToName => nearest_to_name(),
        Criterion::EscalationCoverage => escalation_coverage(),
        Criterion::ReminderPipeline => reminder_pipeline(),
        Criterion::EngineDurability => engine_durability(),
        Criterion::VersionPinning => version_pinning(),
        Criterion::WorkTime => work_time(),
        Criterion::PayloadPolicy => payload_policy(),
        Criterion::IcsRoundTrip => ics_round_trip(),
    };
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, json!({ "error": e })));
    CheckReport { criterion: c.name().to_string(), passed, seconds: t0.elapsed().as_secs_f64(), detail }
}

fn sim(name: &str) -> Result<RunOutput, String> {
    let cfg = sim::scenario(name, CHECK_SEED).map_err(|e| e.to_string())?;
    sim::run(&cfg, WorkerMode::Scripted).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- tier 1

pub const CLASSIFIER_BALLOTS: usize = 2000;

fn classifier() -> Outcome {
    let t0 = Instant::now();
    let corpus = generate_corpus(crate::tier1::DEFAULT_CORPUS_SEED, CLASSIFIER_BALLOTS, 3);
    let (_, m) = train(FeatureDictionary::default(), &corpus, &TrainParams::default()).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let choice_gain = m.model.per_choice - m.baseline.per_choice;
    let subset_gain = m.model.exact_subset - m.baseline.exact_subset;
    let passed = choice_gain >= 0.20 && subset_gain >= 0.40 && secs < 60.0;
    Ok((passed, json!({ "ballots": CLASSIFIER_BALLOTS, "metrics": m, "choice_gain": choice_gain, "subset_gain": subset_gain, "train_seconds": secs })))
}

fn metric_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut violations = Vec::new();
    let params = TrainParams { epochs: 60, ..TrainParams::default() };
    for i in 0..100u64 {
        let ballots = rng.random_range(20..120);
        let k = rng.random_range(2..6);
        let corpus = generate_corpus(1000 + i, ballots, k);
        let (_, m) = train(FeatureDictionary::default(), &corpus, &params).map_err(|e| format!("corpus {i}: {e}"))?;
        // random guesses on the same shape as well as the trained model
        let gold: Vec<Vec<bool>> = corpus.chunks(k).map(|c| c.iter().map(|r| r.selected).collect()).collect();
        let guess: Vec<Vec<bool>> = gold.iter().map(|g| g.iter().map(|_| rng.random_bool(0.5)).collect()).collect();
        let random = accuracy(&guess, &gold);
        for (who, a) in [("model", m.model), ("baseline", m.baseline), ("random", random)] {
            if a.exact_subset > a.per_choice {
                violations.push(json!({ "corpus": i, "who": who, "accuracy": a }));
            }
        }
    }
    Ok((violations.is_empty(), json!({ "corpora": 100, "violations": violations })))
}

/// Largest relative error between the analytic gradient and central
/// differences; components with magnitude below `floor` are compared on
/// the absolute scale.
pub fn gradient_error(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[bool], l2: f64, h: f64, floor: f64) -> f64 {
    let (gw, gb) = gradient(w, b, xs, ys, l2);
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor);
    let mut worst: f64 = 0.0;
    for j in 0..w.len() {
        let (mut up, mut down) = (w.to_vec(), w.to_vec());
        up[j] += h;
        down[j] -= h;
        let n = (objective(&up, b, xs, ys, l2) - objective(&down, b, xs, ys, l2)) / (2.0 * h);
        worst = worst.max(rel(gw[j], n));
    }
    let n = (objective(w, b + h, xs, ys, l2) - objective(w, b - h, xs, ys, l2)) / (2.0 * h);
    worst.max(rel(gb, n))
}

pub const GRADIENT_TOLERANCE: f64 = 1e-5;

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(2..9);
        let n = rng.random_range(4..25);
        let xs: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect()).collect();
        let ys: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = rng.random_range(-1.0..1.0);
        let l2 = rng.random_range(0.0..0.1);
        worst = worst.max(gradient_error(&w, b, &xs, &ys, l2, 1e-5, 1e-3));
    }
    Ok((worst <= GRADIENT_TOLERANCE, json!({ "instances": 50, "max_relative_error": worst, "tolerance": GRADIENT_TOLERANCE })))
}

const PHRASES: [&str; 14] = [
    "Can we meet for 30 minutes on Monday?",
    "How about next week sometime",
    "an hour tomorrow works",
    "Sep 20 or 9/21 are open",
    "I need half an hour with the team.",
    "Let's do 2 hours next Friday",
    "thanks!",
    "Please set it up, Cal.",
    "Wednesday is out for me",
    "today is busy, café later?",
    "an hour and a half would be ideal",
    "see you then",
    "Oct 3 at the usual place",
    "no rush",
];

fn message(rng: &mut ChaCha8Rng, id: usize, minutes: i64) -> EmailMessage {
    let n = rng.random_range(1..4);
    let body = (0..n).map(|_| *PHRASES.choose(rng).unwrap()).collect::<Vec<_>>().join(" ");
    EmailMessage {
        message_id: format!("<m{id}@corp.example>"),
        in_reply_to: None,
        references: Vec::new(),
        from_addr: format!("user{}@corp.example", rng.random_range(0..5)),
        to_addrs: vec!["cal@assistant.example".into()],
        cc_addrs: Vec::new(),
        subject: "Meeting".into(),
        body,
        sent_at: Utc.with_ymd_and_hms(2016, 4, 4, 9, 0, 0).unwrap() + Duration::minutes(minutes),
        attachments: Vec::new(),
    }
}

/// A random thread of 1 to 6 messages.
pub fn random_thread(rng: &mut ChaCha8Rng) -> Vec<EmailMessage> {
    let n = rng.random_range(1..7);
    (0..n).map(|i| message(rng, i, i as i64 * 30)).collect()
}

/// Rewrites, adds or drops messages before the latest one.
pub fn mutate_history(rng: &mut ChaCha8Rng, thread: &[EmailMessage]) -> Vec<EmailMessage> {
    let (latest, older) = thread.split_last().expect("non-empty thread");
    let mut out = Vec::new();
    for m in older {
        if rng.random_bool(0.2) {
            continue;
        }
        let mut m = m.clone();
        let fresh = message(rng, 900, 0);
        m.body = format!("{} {}", fresh.body, PHRASES.choose(rng).unwrap());
        m.subject = format!("Re: {}", fresh.body);
        m.from_addr = fresh.from_addr;
        out.push(m);
    }
    for k in 0..rng.random_range(0..3) {
        out.insert(0, message(rng, 500 + k, -60 * (k as i64 + 1)));
    }
    out.push(latest.clone());
    out
}

fn time_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut mismatches = Vec::new();
    let mut nonempty = 0;
    for i in 0..100 {
        let thread = random_thread(&mut rng);
        let before = extract_time_expressions(&thread);
        nonempty += usize::from(!before.is_empty());
        for _ in 0..5 {
            let mutated = mutate_history(&mut rng, &thread);
            if extract_time_expressions(&mutated) != before {
                mismatches.push(i);
                break;
            }
        }
    }
    Ok((mismatches.is_empty(), json!({ "threads": 100, "with_expressions": nonempty, "mismatched_threads": mismatches })))
}

#[derive(Debug, Clone, Deserialize)]
pub struct Fixture {
    pub id: String,
    pub assistant_name: String,
    pub body: String,
    pub expected: ExpectedFields,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExpectedFields {
    pub duration: Option<ExpectedSpan>,
    pub date: Option<ExpectedSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ExpectedSpan {
    pub text: String,
    pub span: (usize, usize),
}

pub fn bundled_fixtures() -> Vec<Fixture> {
    serde_json::from_str(FIXTURES).expect("bundled fixtures parse")
}

pub fn load_fixtures(path: &Path) -> Result<Vec<Fixture>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Scores selection against each fixture's expected answer.
pub fn eval_extractor(fixtures: &[Fixture]) -> Value {
    let as_span = |e: &Option<TimeExpression>| e.as_ref().map(|e| ExpectedSpan { text: e.text.clone(), span: e.span });
    let mut failures = Vec::new();
    let (mut duration_ok, mut date_ok) = (0, 0);
    for f in fixtures {
        let got = select_meeting_fields(&scan(&f.body, &f.id), &f.body, &f.assistant_name);
        let (d, t) = (as_span(&got.duration) == f.expected.duration, as_span(&got.date) == f.expected.date);
        duration_ok += usize::from(d);
        date_ok += usize::from(t);
        if !(d && t) {
            failures.push(f.id.clone());
        }
    }
    json!({
        "fixtures": fixtures.len(),
        "duration_correct": duration_ok,
        "date_correct": date_ok,
        "both_correct": fixtures.len() - failures.len(),
        "failures": failures,
    })
}

fn nearest_to_name() -> Outcome {
    let fixtures = bundled_fixtures();
    let report = eval_extractor(&fixtures);
    let passed = fixtures.len() == 50 && report["both_correct"] == 50;
    Ok((passed, report))
}

// ---------------------------------------------------------------- workflow

fn escalation_coverage() -> Outcome {
    let out = sim("catalog")?;
    let dir = scratch_dir("coverage");
    out.export(&dir).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(dir.join("metrics.json")).map_err(|e| e.to_string());
    let _ = std::fs::remove_dir_all(&dir);
    let metrics: Value = serde_json::from_str(&text?).map_err(|e| e.to_string())?;
    let counts = &metrics["escalation_reasons"];
    let missing: Vec<String> = EscalationReason::ALL
        .iter()
        .map(|r| format!("{r:?}"))
        .filter(|r| counts[r.as_str()].as_u64().unwrap_or(0) == 0)
        .collect();
    Ok((missing.is_empty(), json!({ "escalation_reasons": counts, "missing": missing })))
}

fn scratch_dir(tag: &str) -> PathBuf {
    let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    std::env::temp_dir().join(format!("meetsched-check-{tag}-{}-{nanos}", std::process::id()))
}

/// Outbound message kinds for one request, one entry per send (copies to
/// several recipients at the same instant count once).
pub fn outbound_kinds(out: &RunOutput, rid: &str) -> Vec<MessageKind> {
    let mut sent: Vec<(MessageKind, crate::Timestamp)> = out
        .transcript
        .iter()
        .filter(|t| t.request_id.as_deref() == Some(rid))
        .filter_map(|t| t.kind.map(|k| (k, t.message.sent_at)))
        .filter(|(k, _)| *k != MessageKind::Inbound)
        .collect();
    sent.dedup();
    sent.into_iter().map(|(k, _)| k).collect()
}

fn reminder_pipeline() -> Outcome {
    use MessageKind::*;
    let timeout = sim("attendee_timeout")?;
    let kinds = outbound_kinds(&timeout, "R0001");
    let reminders = timeout.requests.first().map(|r| r.reminders_sent).unwrap_or(0);
    let chain_ok = kinds == [Ballot, Reminder, Reminder, Warning, Cancellation] && reminders == 2;

    let keep = sim("attendee_keep")?;
    let keep_kinds = outbound_kinds(&keep, "R0001");
    let agent = keep.desk.lock();
    let opened = agent.board().tasks().any(|t| {
        t.tier == Tier::Macro && t.payload.reasons.contains(&EscalationReason::AttendeeTimeout)
    });
    drop(agent);
    let keep_ok = keep_kinds.contains(&Warning) && !keep_kinds.contains(&Cancellation) && opened;
    Ok((
        chain_ok && keep_ok,
        json!({
            "timeout_sequence": kinds,
            "reminders_sent": reminders,
            "keep_sequence": keep_kinds,
            "keep_opened_macrotask": opened,
        }),
    ))
}

fn durability_definition() -> WorkflowDefinition {
    WorkflowDefinition {
        version: 1,
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

fn durability_events() -> Vec<WorkflowEvent> {
    let kinds = [
        "start", "noise", "noise", "right", "noise", "noise", "noise", "left", "noise", "noise", "more", "noise",
        "noise", "noise", "noise", "noise", "noise", "noise", "noise", "close",
    ];
    let t0 = Utc.with_ymd_and_hms(2016, 4, 4, 9, 0, 0).unwrap();
    kinds
        .iter()
        .enumerate()
        .map(|(n, k)| WorkflowEvent {
            event_id: format!("req-e{n}"),
            instance_id: "req".into(),
            kind: (*k).into(),
            payload: json!({ "x": n, format!("seen_{n}"): true }),
            occurred_at: t0 + Duration::minutes(n as i64),
        })
        .collect()
}

fn durability_engine(store: MemoryStore) -> Result<Engine, EngineError> {
    let e = Engine::new(Arc::new(store));
    e.register(durability_definition())?;
    for (action, key) in [("sum_left", "left"), ("sum_right", "right"), ("join", "joined"), ("sum_more", "more")] {
        e.register_step_fn(
            action,
            Arc::new(move |bb: &Blackboard, _: &WorkflowEvent| {
                let total = bb.get("x").and_then(Value::as_i64).unwrap_or(0) + bb.get("acc").and_then(Value::as_i64).unwrap_or(0);
                Blackboard::from([("acc".to_string(), json!(total)), (key.to_string(), json!(true))])
            }),
        );
    }
    Ok(e)
}

fn engine_durability() -> Outcome {
    let err = |e: EngineError| e.to_string();
    let evs = durability_events();
    let sorted = |mut v: Vec<EmittedAction>| {
        v.sort();
        v
    };
    let reference = durability_engine(MemoryStore::new()).map_err(err)?;
    reference.start_instance(&evs[0]).map_err(err)?;
    let mut want = Vec::new();
    for x in &evs {
        want.extend(reference.dispatch(x).map_err(err)?);
    }
    let want = sorted(want);
    let want_state = reference.instance("req").map_err(err)?.canonical_bytes();

    let mut failures = Vec::new();
    let mut runs = 0;
    for point in [CrashPoint::BeforePersist, CrashPoint::AfterPersist] {
        for k in 0..evs.len() {
            runs += 1;
            let store = MemoryStore::new();
            let first = durability_engine(store.clone()).map_err(err)?;
            first.start_instance(&evs[0]).map_err(err)?;
            first.inject_crash(point, k as u64);
            let mut acts = Vec::new();
            let mut resume_from = evs.len();
            for (j, x) in evs.iter().enumerate() {
                match first.dispatch(x) {
                    Ok(a) => acts.extend(a),
                    Err(EngineError::Crashed(_)) => {
                        resume_from = j;
                        break;
                    }
                    Err(e) => return Err(e.to_string()),
                }
            }
            drop(first);
            let second = durability_engine(store).map_err(err)?;
            // a crash after persisting loses the in-flight release; redelivery
            // of the same event must not run it twice
            acts.extend(second.release_pending("req").map_err(err)?);
            for x in &evs[resume_from..] {
                acts.extend(second.dispatch(x).map_err(err)?);
            }
            let state = second.instance("req").map_err(err)?.canonical_bytes();
            if sorted(acts) != want || state != want_state {
                failures.push(format!("{point:?}@{k}"));
            }
        }
    }

    // every event delivered twice, interleaved
    let dup = durability_engine(MemoryStore::new()).map_err(err)?;
    dup.start_instance(&evs[0]).map_err(err)?;
    let mut acts = Vec::new();
    for (i, x) in evs.iter().enumerate() {
        acts.extend(dup.dispatch(x).map_err(err)?);
        acts.extend(dup.dispatch(&evs[i / 2]).map_err(err)?);
        acts.extend(dup.dispatch(x).map_err(err)?);
    }
    let dup_ok = sorted(acts) == want && dup.instance("req").map_err(err)?.canonical_bytes() == want_state;
    Ok((
        failures.is_empty() && dup_ok,
        json!({ "events": evs.len(), "crash_runs": runs, "failures": failures, "duplicates_harmless": dup_ok }),
    ))
}

fn version_pinning() -> Outcome {
    let cfg = sim::scenario("versioning", CHECK_SEED).map_err(|e| e.to_string())?;
    let upgrade = cfg.upgrade.clone().ok_or("versioning scenario has no upgrade")?;
    let upgrade_at = cfg.start + Duration::minutes(upgrade.at_minutes);
    let out = sim::run(&cfg, WorkerMode::Scripted).map_err(|e| e.to_string())?;
    let mut per_request: std::collections::BTreeMap<String, BTreeSet<u32>> = Default::default();
    let mut first_seen: std::collections::BTreeMap<String, crate::Timestamp> = Default::default();
    let mut last_seen: std::collections::BTreeMap<String, crate::Timestamp> = Default::default();
    for t in &out.transcript {
        if let (Some(rid), Some(v)) = (&t.request_id, t.version) {
            per_request.entry(rid.clone()).or_default().insert(v);
            first_seen.entry(rid.clone()).or_insert(t.message.sent_at);
            last_seen.insert(rid.clone(), t.message.sent_at);
        }
    }
    let initial = cfg.initial_version;
    // requests that started before the upgrade and were still active after it
    let straddling: Vec<&String> =
        per_request.keys().filter(|r| first_seen[*r] < upgrade_at && last_seen[*r] > upgrade_at).collect();
    let later: Vec<&String> = per_request.keys().filter(|r| first_seen[*r] > upgrade_at).collect();
    let pinned = straddling.iter().all(|r| per_request[*r] == BTreeSet::from([initial]));
    let upgraded = later.iter().all(|r| per_request[*r] == BTreeSet::from([upgrade.version]));
    let passed = !straddling.is_empty() && !later.is_empty() && pinned && upgraded;
    Ok((passed, json!({ "versions": per_request, "in_flight_at_upgrade": straddling, "started_after": later })))
}

fn work_time() -> Outcome {
    let out = sim("mixed")?;
    let m = &out.metrics;
    let (micro, mac) = (m.mean_work_minutes_micro_only, m.mean_work_minutes_macro_required);
    let passed = match (micro, mac) {
        (Some(a), Some(b)) => b > a && (0.5..=5.0).contains(&a),
        _ => false,
    };
    Ok((
        passed,
        json!({
            "requests": m.requests,
            "micro_only_requests": m.micro_only_requests,
            "macro_required_requests": m.macro_required_requests,
            "mean_work_minutes_micro_only": micro,
            "mean_work_minutes_macro_required": mac,
        }),
    ))
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize)]
pub struct PayloadAudit {
    pub tasks: usize,
    /// Macro tasks whose payload carried a busy/free view.
    pub macro_with_calendar: usize,
    pub violations: Vec<String>,
}

/// Policy violations among the tasks of one finished run.
pub fn payload_violations(out: &RunOutput) -> PayloadAudit {
    let agent = out.desk.lock();
    let mut seen = 0;
    let mut with_calendar = 0;
    let mut bad = Vec::new();
    let mut titles: BTreeSet<String> = BTreeSet::new();
    for acct in agent.calendars().accounts() {
        for e in acct.events.values() {
            if PRIVATE_TITLES.iter().any(|p| e.summary.starts_with(p)) {
                titles.insert(e.summary.clone());
            }
        }
    }
    for t in agent.board().tasks() {
        seen += 1;
        let text = serde_json::to_string(&t.payload).unwrap_or_default();
        let leaks_title = titles.iter().any(|s| text.contains(s.as_str())) || PRIVATE_TITLES.iter().any(|p| text.contains(p));
        let ok = match t.tier {
            Tier::Micro => t.payload.calendar.is_none() && t.payload.collected.is_none() && !text.contains("\"busy\"") && !leaks_title,
            Tier::Macro => {
                with_calendar += usize::from(t.payload.calendar.as_ref().is_some_and(|c| !c.busy.is_empty()));
                let view = serde_json::to_value(&t.payload.calendar).unwrap_or(Value::Null);
                !leaks_title && view.get("summary").is_none() && view.get("events").is_none()
            }
        };
        if !ok {
            bad.push(t.task_id.clone());
        }
    }
    PayloadAudit { tasks: seen, macro_with_calendar: with_calendar, violations: bad }
}

fn payload_policy() -> Outcome {
    let mut total = 0;
    let mut with_calendar = 0;
    let mut failures = Vec::new();
    for name in sim::CATALOG {
        let out = sim(name)?;
        let audit = payload_violations(&out);
        total += audit.tasks;
        with_calendar += audit.macro_with_calendar;
        failures.extend(audit.violations.into_iter().map(|id| format!("{name}/{id}")));
    }
    Ok((
        failures.is_empty() && total > 0,
        json!({ "tasks_inspected": total, "macro_with_calendar": with_calendar, "violations": failures }),
    ))
}

// ---------------------------------------------------------------- ics

pub const REQUIRED_ICS_LINES: [&str; 12] = [
    "BEGIN:VCALENDAR",
    "VERSION:2.0",
    "PRODID:",
    "METHOD:",
    "BEGIN:VEVENT",
    "UID:",
    "DTSTAMP:",
    "DTSTART:",
    "DTEND:",
    "ORGANIZER:",
    "END:VEVENT",
    "END:VCALENDAR",
];

pub fn random_invitation(rng: &mut ChaCha8Rng) -> Invitation {
    const PIECES: [&str; 10] =
        ["Design review", "1:1", "café ☕", "a, b; c", "back\\slash", "line\none", "Plan", "Q3 — budget", "x", "重要な会議"];
    let start = Utc.with_ymd_and_hms(2016, 1, 1, 0, 0, 0).unwrap() + Duration::minutes(rng.random_range(0..600_000));
    let words = rng.random_range(1..12);
    let summary = (0..words).map(|_| *PIECES.choose(rng).unwrap()).collect::<Vec<_>>().join(" ");
    let attendees = (0..rng.random_range(0..8)).map(|i| format!("p{i}.{}@corp.example", rng.random_range(0..999))).collect();
    Invitation {
        uid: format!("r{}-{}@assistant.example", rng.random_range(0..9999), rng.random_range(0..99)),
        start,
        end: start + Duration::minutes(rng.random_range(5..600)),
        summary,
        organizer: format!("org{}@corp.example", rng.random_range(0..50)),
        attendees,
        method: if rng.random_bool(0.2) { InvitationMethod::Cancel } else { InvitationMethod::Request },
    }
}

fn ics_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5545);
    let mut failures = Vec::new();
    for i in 0..200 {
        let inv = random_invitation(&mut rng);
        let doc = render_invitation(&inv).map_err(|e| e.to_string())?;
        let lines_ok = REQUIRED_ICS_LINES.iter().all(|p| doc.split("\r\n").any(|l| l.starts_with(p)))
            && doc.split("\r\n").all(|l| l.len() <= 75);
        let back = parse_invitation(&doc).map_err(|e| format!("invitation {i}: {e}"))?;
        if back != inv || !lines_ok {
            failures.push(i);
        }
    }
    Ok((failures.is_empty(), json!({ "invitations": 200, "failures": failures })))
}
