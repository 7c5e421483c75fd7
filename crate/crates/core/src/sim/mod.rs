//! Deterministic discrete-event simulation: scripted personas write mail,
//! scripted workers answer tasks from scenario ground truth, and the
//! simulated clock fires the agent's timers.

pub mod persona;
pub mod scenario;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use persona::{OrganizerPlan, Persona, PersonaKind, Quantifier, WarningReply};
pub use scenario::{
    resolve, scenario, Case, ExpertStep, ScenarioConfig, Target, Truth, Upgrade, WorkerModel, CATALOG, PRIVATE_TITLES,
};

use crate::calendar::CalendarStore;
use crate::clock::{Clock, SimClock};
use crate::engine::Engine;
use crate::mailroom::EmailMessage;
use crate::taskboard::{Field, IntentLabel, MacroAction, Task, TaskApi, TaskError, TaskOutput, TaskStatus, Tier};
use crate::tier1::OptionAttrs;
use crate::workflow::{
    Agent, Desk, EscalationReason, MessageKind, RequestState, TaskContext, TimeOption, WorkflowError,
};
use crate::Timestamp;

pub const METRICS_SCHEMA_VERSION: u32 = 1;
const SIM_DOMAIN: &str = "sim.example";
/// Delay before an organizer or invitee answers an expert or a warning.
const ANSWER_DELAY_MINUTES: i64 = 60;
/// Gap between a multi-replier's messages.
const EXTRA_MESSAGE_MINUTES: i64 = 120;
const EXPERT_WAIT_MINUTES: u32 = 120;
/// Expert push-backs on one request before giving up on it.
const MAX_PUSHBACKS: usize = 40;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("scenario {scenario} stuck after {steps} steps: {detail}")]
    ScenarioStuck { scenario: String, steps: usize, detail: String },
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

/// Who answers tier-2 and tier-3 tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerMode {
    /// Scripted workers answer from ground truth.
    Scripted,
    /// Tasks wait for people using the HTTP API. Simulated time follows wall
    /// time while any task is queued or claimed.
    Live { poll: std::time::Duration },
}

#[derive(Debug)]
enum SimEvent {
    Mail(Draft),
    Complete { worker: String, task_id: String },
    Upgrade(u32),
}

#[derive(Debug)]
struct Draft {
    case: usize,
    from: String,
    to: Vec<String>,
    cc: Vec<String>,
    subject: String,
    body: String,
    reply_to: Option<String>,
    /// What a ballot reply means, if it can be read at all.
    meaning: Option<Vec<bool>>,
    kind: DraftKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DraftKind {
    Request,
    BallotReply,
    Clarification,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRow {
    pub request_id: String,
    pub case: String,
    pub organizer: String,
    pub invitees: usize,
    pub state: String,
    pub version: u32,
    pub micro_tasks: usize,
    pub macro_tasks: usize,
    pub micro_seconds: f64,
    pub macro_seconds: f64,
    pub total_seconds: f64,
    pub macro_required: bool,
    pub reasons: String,
    pub messages: usize,
    pub events: u32,
    pub settled_after_events: u32,
    pub event_bound: u32,
    pub reminders_sent: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub requests: usize,
    pub scheduled: usize,
    pub cancelled: usize,
    pub parked: usize,
    pub handled_in_tiers_1_2: usize,
    pub fraction_handled_in_tiers_1_2: f64,
    /// Requests that recorded each reason; every reason is listed.
    pub escalation_reasons: BTreeMap<String, usize>,
    /// Completed macro actions by kind; every kind is listed.
    pub macro_actions: BTreeMap<String, usize>,
    pub micro_only_requests: usize,
    pub macro_required_requests: usize,
    pub mean_work_minutes_micro_only: Option<f64>,
    pub mean_work_minutes_macro_required: Option<f64>,
    pub micro_tasks: usize,
    pub macro_tasks: usize,
    pub messages: usize,
    pub labeled_records: usize,
    /// Requests that needed more workflow events than the liveness bound
    /// allows before they settled.
    pub bound_violations: Vec<String>,
    pub finished_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: usize,
    pub kind: Option<MessageKind>,
    pub request_id: Option<String>,
    pub version: Option<u32>,
    pub message: EmailMessage,
}

pub struct RunOutput {
    pub metrics: RunMetrics,
    pub requests: Vec<RequestRow>,
    pub transcript: Vec<TranscriptEntry>,
    pub desk: Desk,
}

impl RunOutput {
    /// Writes metrics.json, requests.csv, transcript.jsonl and the agent
    /// state (under `state/`).
    pub fn export(&self, dir: &Path) -> Result<(), SimError> {
        export_metrics(&self.metrics, &self.requests, &self.transcript, dir)?;
        self.desk.lock().save(&dir.join("state"))?;
        Ok(())
    }
}

pub fn export_metrics(
    metrics: &RunMetrics,
    requests: &[RequestRow],
    transcript: &[TranscriptEntry],
    dir: &Path,
) -> Result<(), SimError> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(metrics).map_err(|e| SimError::Io(e.to_string()))?;
    json.push('\n');
    std::fs::write(dir.join("metrics.json"), json)?;
    let mut w = csv::Writer::from_path(dir.join("requests.csv")).map_err(|e| SimError::Io(e.to_string()))?;
    if requests.is_empty() {
        w.write_record(CSV_HEADER).map_err(|e| SimError::Io(e.to_string()))?;
    }
    for r in requests {
        w.serialize(r).map_err(|e| SimError::Io(e.to_string()))?;
    }
    w.flush()?;
    let mut lines = String::new();
    for e in transcript {
        lines.push_str(&serde_json::to_string(e).map_err(|e| SimError::Io(e.to_string()))?);
        lines.push('\n');
    }
    std::fs::write(dir.join("transcript.jsonl"), lines)?;
    Ok(())
}

pub const CSV_HEADER: [&str; 18] = [
    "request_id",
    "case",
    "organizer",
    "invitees",
    "state",
    "version",
    "micro_tasks",
    "macro_tasks",
    "micro_seconds",
    "macro_seconds",
    "total_seconds",
    "macro_required",
    "reasons",
    "messages",
    "events",
    "settled_after_events",
    "event_bound",
    "reminders_sent",
];

/// Runs a scenario to completion.
pub fn run(cfg: &ScenarioConfig, mode: WorkerMode) -> Result<RunOutput, SimError> {
    Simulation::new(cfg.clone(), mode)?.run()
}

/// Workflow events a request may use before it must have settled.
pub fn event_bound(invitees: usize) -> u32 {
    8 + 6 * invitees as u32
}

pub struct Simulation {
    cfg: ScenarioConfig,
    desk: Desk,
    clock: Arc<SimClock>,
    mode: WorkerMode,
    rng: ChaCha8Rng,
    queue: BTreeMap<(Timestamp, u64), SimEvent>,
    seq: u64,
    next_msg: u64,
    cursor: usize,
    /// Sim-written message id -> (case, meaning of a ballot reply).
    truth: BTreeMap<String, (usize, Option<Vec<bool>>)>,
    first_message: Vec<Option<String>>,
    expert_cursor: Vec<usize>,
    pushbacks: Vec<usize>,
    asked: BTreeSet<(usize, String)>,
    heard_from: BTreeSet<(usize, String)>,
    followed_up: BTreeSet<usize>,
    idle: BTreeMap<Tier, Vec<String>>,
    settled: BTreeMap<String, u32>,
    steps: usize,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig, mode: WorkerMode) -> Result<Self, SimError> {
        cfg.validate()?;
        let mut store = CalendarStore::new();
        for a in &cfg.calendars {
            store.insert(a.clone());
        }
        let mut agent = Agent::with_engine(cfg.agent.clone(), store, Engine::in_memory(), cfg.initial_version)?;
        for c in &cfg.cases {
            for p in &c.invitees {
                agent.register_address(&p.address);
            }
        }
        let clock = Arc::new(SimClock::new(cfg.start));
        let desk = Desk::new(agent, clock.clone(), None);
        let mut sim = Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            desk,
            clock,
            mode,
            queue: BTreeMap::new(),
            seq: 0,
            next_msg: 1,
            cursor: 0,
            truth: BTreeMap::new(),
            first_message: vec![None; cfg.cases.len()],
            expert_cursor: vec![0; cfg.cases.len()],
            pushbacks: vec![0; cfg.cases.len()],
            asked: BTreeSet::new(),
            heard_from: BTreeSet::new(),
            followed_up: BTreeSet::new(),
            idle: BTreeMap::new(),
            settled: BTreeMap::new(),
            steps: 0,
            cfg,
        };
        let micro = (1..=sim.cfg.worker_model.micro_workers).map(|i| format!("micro-{i}")).collect();
        let experts = (1..=sim.cfg.worker_model.macro_workers).map(|i| format!("expert-{i}")).collect();
        sim.idle.insert(Tier::Micro, micro);
        sim.idle.insert(Tier::Macro, experts);
        let assistant = sim.cfg.agent.assistant_address.clone();
        for (i, c) in sim.cfg.cases.clone().iter().enumerate() {
            let (to, cc) = if c.invitees.is_empty() {
                (vec![assistant.clone()], vec![])
            } else {
                (c.invitees.iter().map(|p| p.address.clone()).collect(), vec![assistant.clone()])
            };
            let at = sim.cfg.start + Duration::minutes(c.at_minutes);
            sim.push(
                at,
                SimEvent::Mail(Draft {
                    case: i,
                    from: c.organizer.clone(),
                    to,
                    cc,
                    subject: c.subject.clone(),
                    body: c.body.clone(),
                    reply_to: None,
                    meaning: None,
                    kind: DraftKind::Request,
                }),
            );
        }
        if let Some(u) = &sim.cfg.upgrade {
            let at = sim.cfg.start + Duration::minutes(u.at_minutes);
            sim.push(at, SimEvent::Upgrade(u.version));
        }
        Ok(sim)
    }

    pub fn desk(&self) -> &Desk {
        &self.desk
    }

    fn push(&mut self, at: Timestamp, ev: SimEvent) {
        self.seq += 1;
        self.queue.insert((at, self.seq), ev);
    }

    fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn stuck(&self, detail: String) -> SimError {
        SimError::ScenarioStuck { scenario: self.cfg.name.clone(), steps: self.steps, detail }
    }

    pub fn run(mut self) -> Result<RunOutput, SimError> {
        loop {
            self.steps += 1;
            if self.steps > self.cfg.event_budget {
                return Err(self.stuck("event budget exhausted".into()));
            }
            if self.mode == WorkerMode::Scripted {
                self.assign_workers()?;
            }
            let next_event = self.queue.keys().next().map(|k| k.0);
            let next_due = self.desk.lock().next_due();
            let next = match (next_event, next_due) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            if let WorkerMode::Live { poll } = self.mode {
                if self.outstanding_tasks() && next.is_none_or(|t| t > self.now()) {
                    let started = std::time::Instant::now();
                    std::thread::sleep(poll);
                    let elapsed = Duration::from_std(started.elapsed()).unwrap_or_else(|_| Duration::zero());
                    self.clock.advance_by(elapsed);
                    self.steps -= 1;
                    continue;
                }
            }
            let Some(t) = next else { break };
            let t = t.max(self.now());
            self.clock.advance_to(t);
            if next_due.is_some_and(|d| d <= t) {
                self.desk.lock().advance(t)?;
            } else {
                let key = *self.queue.keys().next().expect("event pending");
                let ev = self.queue.remove(&key).unwrap();
                self.handle(ev)?;
            }
            self.observe()?;
        }
        self.finish()
    }

    fn outstanding_tasks(&self) -> bool {
        self.desk
            .lock()
            .board()
            .tasks()
            .any(|t| matches!(t.status, TaskStatus::Queued | TaskStatus::Claimed { .. }))
    }

    fn service_seconds(&mut self, tier: Tier) -> f64 {
        let m = &self.cfg.worker_model;
        let (mean, jitter) = match tier {
            Tier::Micro => (m.micro_seconds, m.micro_jitter),
            Tier::Macro => (m.macro_seconds, m.macro_jitter),
        };
        let u: f64 = self.rng.random_range(1.0 - jitter..=1.0 + jitter);
        (mean * u * 1000.0).round() / 1000.0
    }

    fn assign_workers(&mut self) -> Result<(), SimError> {
        for tier in [Tier::Micro, Tier::Macro] {
            while let Some(worker) = self.idle.get(&tier).and_then(|w| w.first().cloned()) {
                let Some(task) = self.desk.claim_next(&worker, tier)? else { break };
                self.idle.get_mut(&tier).unwrap().remove(0);
                let secs = self.service_seconds(tier);
                let at = self.now() + Duration::milliseconds((secs * 1000.0) as i64);
                self.push(at, SimEvent::Complete { worker, task_id: task.task_id });
            }
        }
        Ok(())
    }

    fn handle(&mut self, ev: SimEvent) -> Result<(), SimError> {
        match ev {
            SimEvent::Upgrade(v) => self.desk.lock().register_version(v)?,
            SimEvent::Mail(d) => self.deliver(d)?,
            SimEvent::Complete { worker, task_id } => {
                let task = self.desk.get(&task_id)?;
                let tier = task.tier;
                self.idle.get_mut(&tier).unwrap().push(worker.clone());
                self.idle.get_mut(&tier).unwrap().sort();
                if task.claimant() != Some(worker.as_str()) {
                    return Ok(());
                }
                match tier {
                    Tier::Micro => match self.micro_answer(&task) {
                        Some(out) => {
                            self.desk.submit(&task_id, &worker, out)?;
                        }
                        None => {
                            self.desk.cant_answer(&task_id, &worker)?;
                        }
                    },
                    Tier::Macro => {
                        let action = self.expert_action(&task);
                        self.desk.macro_action(&task_id, &worker, action)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn deliver(&mut self, d: Draft) -> Result<(), SimError> {
        let now = self.now();
        let message_id = format!("<s{:06}@{SIM_DOMAIN}>", self.next_msg);
        self.next_msg += 1;
        let mut agent = self.desk.lock();
        let (in_reply_to, references) = match d.reply_to.as_deref().and_then(|id| agent.mailroom().message(id)) {
            Some(parent) => parent.reply_headers(),
            None => (None, Vec::new()),
        };
        let msg = EmailMessage {
            message_id: message_id.clone(),
            in_reply_to,
            references,
            from_addr: d.from.clone(),
            to_addrs: d.to,
            cc_addrs: d.cc,
            subject: d.subject,
            body: d.body,
            sent_at: now,
            attachments: Vec::new(),
        };
        self.truth.insert(message_id.clone(), (d.case, d.meaning));
        match d.kind {
            DraftKind::Request => self.first_message[d.case] = Some(message_id.clone()),
            DraftKind::BallotReply | DraftKind::Clarification => {
                self.heard_from.insert((d.case, d.from.to_lowercase()));
            }
            DraftKind::Other => {}
        }
        agent.receive(msg, now)?;
        Ok(())
    }

    fn case_of(&self, rid: &str) -> Option<usize> {
        let agent = self.desk.lock();
        let first = agent.request(rid)?.thread.first()?.clone();
        self.truth.get(&first).map(|(c, _)| *c)
    }

    fn rid_of(&self, case: usize) -> Option<String> {
        let first = self.first_message[case].as_ref()?;
        let agent = self.desk.lock();
        agent.requests().values().find(|r| r.thread.first() == Some(first)).map(|r| r.request_id.clone())
    }

    fn persona(&self, case: usize, addr: &str) -> Option<&Persona> {
        self.cfg.cases[case].invitees.iter().find(|p| p.address.eq_ignore_ascii_case(addr))
    }

    /// Reacts to mail the agent sent since the last look.
    fn observe(&mut self) -> Result<(), SimError> {
        let sent: Vec<(EmailMessage, MessageKind, Option<String>)> = {
            let agent = self.desk.lock();
            let ids = agent.outbound_since(self.cursor).to_vec();
            self.cursor += ids.len();
            ids.iter()
                .map(|id| {
                    let m = agent.mailroom().message(id).cloned().expect("sent mail is delivered");
                    let tag = agent.tag(id).cloned().expect("sent mail is tagged");
                    (m, tag.kind, tag.request_id)
                })
                .collect()
        };
        for (msg, kind, rid) in sent {
            let Some(rid) = rid else { continue };
            let Some(case) = self.case_of(&rid) else { continue };
            let to = msg.to_addrs[0].to_lowercase();
            let organizer = self.cfg.cases[case].organizer.to_lowercase();
            let now = self.now();
            match kind {
                MessageKind::Ballot => {
                    let Some(p) = self.persona(case, &to).cloned() else { continue };
                    let attrs = self.ballot_attrs(&rid, &to);
                    let phone = msg.body.contains("phone number");
                    if let Some((text, meaning)) = p.ballot_reply(&attrs, phone, &mut self.rng) {
                        let at = now + Duration::minutes(i64::from(p.reply_after_minutes()));
                        self.reply(at, case, &msg, &to, text, meaning, DraftKind::BallotReply);
                        for (i, extra) in p.extra_messages().iter().enumerate() {
                            let at = at + Duration::minutes(EXTRA_MESSAGE_MINUTES * (i as i64 + 1));
                            self.reply(at, case, &msg, &to, extra.clone(), None, DraftKind::Other);
                        }
                    }
                }
                MessageKind::Warning if to == organizer => {
                    if let Some(text) = self.cfg.cases[case].organizer_plan.on_warning.text() {
                        let at = now + Duration::minutes(ANSWER_DELAY_MINUTES);
                        self.reply(at, case, &msg, &to, text.to_string(), None, DraftKind::Other);
                    }
                }
                MessageKind::ExpertMessage => {
                    let at = now + Duration::minutes(ANSWER_DELAY_MINUTES);
                    if to == organizer {
                        if let Some(text) = self.cfg.cases[case].organizer_plan.expert_reply.clone() {
                            self.reply(at, case, &msg, &to, text, None, DraftKind::Other);
                        }
                    } else if let Some(p) = self.persona(case, &to).cloned() {
                        let attrs = self.ballot_attrs(&rid, &to);
                        if let Some((text, sel)) = p.clarification(&attrs, &mut self.rng) {
                            self.reply(at, case, &msg, &to, text, Some(sel), DraftKind::Clarification);
                        }
                    }
                }
                MessageKind::Invitation if to == organizer && !self.followed_up.contains(&case) => {
                    if let Some((hours, text)) = self.cfg.cases[case].organizer_plan.after_scheduled.clone() {
                        self.followed_up.insert(case);
                        let at = now + Duration::hours(i64::from(hours));
                        self.reply(at, case, &msg, &to, text, None, DraftKind::Other);
                    }
                }
                _ => {}
            }
        }
        let agent = self.desk.lock();
        for r in agent.requests().values() {
            let settled = matches!(r.state, RequestState::Scheduled | RequestState::Cancelled | RequestState::EscalatedTier3);
            if settled && !self.settled.contains_key(&r.request_id) {
                self.settled.insert(r.request_id.clone(), r.events);
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn reply(
        &mut self,
        at: Timestamp,
        case: usize,
        parent: &EmailMessage,
        from: &str,
        body: String,
        meaning: Option<Vec<bool>>,
        kind: DraftKind,
    ) {
        let subject =
            if parent.subject.starts_with("Re: ") { parent.subject.clone() } else { format!("Re: {}", parent.subject) };
        self.push(
            at,
            SimEvent::Mail(Draft {
                case,
                from: from.to_string(),
                to: vec![parent.from_addr.clone()],
                cc: vec![],
                subject,
                body,
                reply_to: Some(parent.message_id.clone()),
                meaning,
                kind,
            }),
        );
    }

    fn ballot_attrs(&self, rid: &str, invitee: &str) -> Vec<OptionAttrs> {
        let agent = self.desk.lock();
        let req = agent.request(rid).expect("request exists");
        let options = req
            .ballots
            .iter()
            .filter_map(|b| agent.ballot(b))
            .find(|b| b.invitee.eq_ignore_ascii_case(invitee))
            .map(|b| b.options.clone())
            .unwrap_or_else(|| req.options.clone());
        let k = options.len();
        options.iter().enumerate().map(|(i, o)| o.attrs(i + 1, k)).collect()
    }

    /// Ground-truth answer for a micro task; `None` means "I can't answer."
    fn micro_answer(&self, task: &Task) -> Option<TaskOutput> {
        let ctx = self.desk.lock().task_context(&task.task_id).cloned()?;
        match ctx {
            TaskContext::Intent { message_id, .. } => {
                let (case, _) = self.truth.get(&message_id)?;
                let label = if self.first_message[*case].as_ref() == Some(&message_id) {
                    IntentLabel::NewMeeting
                } else {
                    IntentLabel::ExistingMeeting(self.rid_of(*case)?)
                };
                Some(TaskOutput::Intent { label })
            }
            TaskContext::Field { request_id, field, invitee, .. } => {
                let case = self.case_of(&request_id)?;
                let truth = &self.cfg.cases[case].truth;
                let value = match field {
                    Field::Duration => format!("{} minutes", truth.duration_minutes),
                    Field::Window => truth.window.clone()?,
                    Field::Attendees => truth.attendees.as_ref()?.join(", "),
                    Field::InviteePhone => self.persona(case, invitee.as_deref()?)?.phone.clone()?,
                };
                Some(TaskOutput::Field { value })
            }
            TaskContext::Ballot { message_id, .. } => {
                let selections = self.truth.get(&message_id)?.1.clone()?;
                Some(TaskOutput::Selections { selections })
            }
            TaskContext::Macro { .. } => None,
        }
    }

    fn expert_action(&mut self, task: &Task) -> MacroAction {
        let rid = task.request_id.clone().unwrap_or_default();
        let Some(case) = self.case_of(&rid) else {
            return MacroAction::Cancel { reason: "The request could not be understood.".into() };
        };
        let step = self.cfg.cases[case].expert.get(self.expert_cursor[case]).cloned();
        if step.is_some() {
            self.expert_cursor[case] += 1;
        }
        let (organizer, invitees, chosen, state) = {
            let agent = self.desk.lock();
            let r = agent.request(&rid).expect("request exists");
            (r.organizer.clone(), r.invitees.clone(), r.chosen.clone(), r.state)
        };
        match step.unwrap_or(ExpertStep::Decide) {
            ExpertStep::Message { to, body } => {
                let to = match to {
                    Target::Organizer => organizer,
                    Target::Invitee(i) => invitees.get(i).cloned().unwrap_or(organizer),
                };
                self.asked.insert((case, to.clone()));
                MacroAction::SendMessage { to, body }
            }
            ExpertStep::PushBack { minutes } => MacroAction::PushBack { delay_minutes: minutes },
            ExpertStep::Cancel { reason } => MacroAction::Cancel { reason },
            ExpertStep::Reschedule { days } => match (state, chosen) {
                (RequestState::Scheduled, Some(o)) => MacroAction::UpdateInvitation {
                    option: Some(TimeOption { start: o.start + Duration::days(days), ..o }),
                },
                _ => self.decide(case, &rid),
            },
            ExpertStep::Decide => self.decide(case, &rid),
        }
    }

    /// Default expert policy: wait for people who will still answer, ask
    /// people who need a nudge, then book the earliest time everyone accepts.
    fn decide(&mut self, case: usize, rid: &str) -> MacroAction {
        let (req, ballots) = {
            let agent = self.desk.lock();
            let r = agent.request(rid).expect("request exists").clone();
            let b: Vec<_> = r.ballots.iter().filter_map(|b| agent.ballot(b).cloned()).collect();
            (r, b)
        };
        match req.state {
            RequestState::Cancelled => return MacroAction::Cancel { reason: "Already closed.".into() },
            RequestState::Scheduled => {
                return MacroAction::SendMessage {
                    to: req.organizer.clone(),
                    body: "Your meeting is booked as planned. Let me know if anything should change.".into(),
                }
            }
            _ => {}
        }
        if req.options.is_empty() {
            return MacroAction::Cancel { reason: "I could not find a time for this meeting.".into() };
        }
        let k = req.options.len();
        let mut accepted = vec![true; k];
        for b in &ballots {
            let who = b.invitee.to_lowercase();
            let Some(p) = self.persona(case, &who).cloned() else { continue };
            let sel = match (&b.selections, p.kind.clone()) {
                (Some(s), _) => s.clone(),
                (None, PersonaKind::Unresponsive) => {
                    return MacroAction::Cancel { reason: format!("{} did not respond.", crate::workflow::display_name(&who)) }
                }
                (None, PersonaKind::Ambiguous { .. } | PersonaKind::Forgetful { .. })
                    if !self.asked.contains(&(case, who.clone())) =>
                {
                    self.asked.insert((case, who.clone()));
                    let lines: Vec<String> =
                        b.options.iter().enumerate().map(|(i, o)| format!("{}. {}", i + 1, o.attrs(i + 1, k).display())).collect();
                    return MacroAction::SendMessage {
                        to: b.invitee.clone(),
                        body: format!("Could you tell me which of these times work for you?\n\n{}", lines.join("\n")),
                    };
                }
                (None, _) if !self.heard_from.contains(&(case, who.clone())) || self.awaiting_reply(case, &who) => {
                    self.pushbacks[case] += 1;
                    if self.pushbacks[case] > MAX_PUSHBACKS {
                        return MacroAction::Cancel { reason: "Still waiting for replies; closing the request.".into() };
                    }
                    return MacroAction::PushBack { delay_minutes: EXPERT_WAIT_MINUTES };
                }
                (None, _) => p.truth(k).unwrap_or_else(|| vec![false; k]),
            };
            for (a, s) in accepted.iter_mut().zip(sel) {
                *a &= s;
            }
        }
        match accepted.iter().position(|a| *a) {
            Some(i) => MacroAction::SendInvitation { option: Some(req.options[i].clone()) },
            None => MacroAction::Cancel { reason: "None of the proposed times work for everyone.".into() },
        }
    }

    /// Whether a message from `who` is still on its way.
    fn awaiting_reply(&self, case: usize, who: &str) -> bool {
        self.queue.values().any(|e| matches!(e, SimEvent::Mail(d) if d.case == case && d.from.eq_ignore_ascii_case(who)))
    }

    fn finish(self) -> Result<RunOutput, SimError> {
        let agent = self.desk.lock();
        let mut rows = Vec::new();
        let mut reasons: BTreeMap<String, usize> =
            EscalationReason::ALL.iter().map(|r| (format!("{r:?}"), 0)).collect();
        let mut actions: BTreeMap<String, usize> =
            ["SendMessage", "SendInvitation", "Cancel", "UpdateInvitation", "PushBack"].iter().map(|a| (a.to_string(), 0)).collect();
        let mut per_request: BTreeMap<String, (usize, usize, f64, f64)> = BTreeMap::new();
        let (mut micro_tasks, mut macro_tasks) = (0, 0);
        for t in agent.board().tasks() {
            match t.tier {
                Tier::Micro => micro_tasks += 1,
                Tier::Macro => macro_tasks += 1,
            }
            for action in &t.history {
                *actions.get_mut(action.name()).unwrap() += 1;
            }
            if let Some(rid) = &t.request_id {
                let e = per_request.entry(rid.clone()).or_default();
                match t.tier {
                    Tier::Micro => {
                        e.0 += 1;
                        e.2 += t.work_seconds;
                    }
                    Tier::Macro => {
                        e.1 += 1;
                        e.3 += t.work_seconds;
                    }
                }
            }
        }
        let mut violations = Vec::new();
        let mut stuck = Vec::new();
        for r in agent.requests().values() {
            let (micro_n, macro_n, micro_s, macro_s) = per_request.get(&r.request_id).copied().unwrap_or_default();
            let mut rs: Vec<String> = Vec::new();
            for e in &r.escalations {
                let name = format!("{:?}", e.reason);
                if !rs.contains(&name) {
                    rs.push(name);
                }
            }
            for name in &rs {
                *reasons.get_mut(name).unwrap() += 1;
            }
            let bound = event_bound(r.invitees.len());
            let settled = self.settled.get(&r.request_id).copied().unwrap_or(r.events);
            if settled > bound {
                violations.push(r.request_id.clone());
            }
            let parked = r.state == RequestState::EscalatedTier3 && r.open_macrotask.is_some();
            if !r.state.is_terminal() && !parked {
                stuck.push(format!("{} is {:?}", r.request_id, r.state));
            }
            let case = self
                .truth
                .get(r.thread.first().map(String::as_str).unwrap_or(""))
                .map(|(c, _)| self.cfg.cases[*c].name.clone())
                .unwrap_or_default();
            rows.push(RequestRow {
                request_id: r.request_id.clone(),
                case,
                organizer: r.organizer.clone(),
                invitees: r.invitees.len(),
                state: format!("{:?}", r.state),
                version: r.pinned_version,
                micro_tasks: micro_n,
                macro_tasks: macro_n,
                micro_seconds: micro_s,
                macro_seconds: macro_s,
                total_seconds: micro_s + macro_s,
                macro_required: macro_n > 0,
                reasons: rs.join(";"),
                messages: r.thread.len(),
                events: r.events,
                settled_after_events: settled,
                event_bound: bound,
                reminders_sent: r.ballots.iter().filter_map(|b| agent.ballot(b)).map(|b| u32::from(b.reminders_sent)).sum(),
            });
        }
        if !stuck.is_empty() {
            return Err(SimError::ScenarioStuck {
                scenario: self.cfg.name.clone(),
                steps: self.steps,
                detail: stuck.join(", "),
            });
        }
        let mean = |rows: Vec<&RequestRow>| {
            (!rows.is_empty()).then(|| rows.iter().map(|r| r.total_seconds).sum::<f64>() / rows.len() as f64 / 60.0)
        };
        let micro_only: Vec<&RequestRow> = rows.iter().filter(|r| !r.macro_required).collect();
        let macro_req: Vec<&RequestRow> = rows.iter().filter(|r| r.macro_required).collect();
        let n = rows.len();
        let metrics = RunMetrics {
            schema_version: METRICS_SCHEMA_VERSION,
            scenario: self.cfg.name.clone(),
            seed: self.cfg.seed,
            requests: n,
            scheduled: rows.iter().filter(|r| r.state == "Scheduled").count(),
            cancelled: rows.iter().filter(|r| r.state == "Cancelled").count(),
            parked: rows.iter().filter(|r| r.state == "EscalatedTier3").count(),
            handled_in_tiers_1_2: micro_only.len(),
            fraction_handled_in_tiers_1_2: if n == 0 { 0.0 } else { micro_only.len() as f64 / n as f64 },
            escalation_reasons: reasons,
            macro_actions: actions,
            micro_only_requests: micro_only.len(),
            macro_required_requests: macro_req.len(),
            mean_work_minutes_micro_only: mean(micro_only),
            mean_work_minutes_macro_required: mean(macro_req),
            micro_tasks,
            macro_tasks,
            messages: agent.mailroom().transcript().len(),
            labeled_records: agent.corpus().len(),
            bound_violations: violations,
            finished_at: self.clock.now(),
        };
        let transcript = agent
            .mailroom()
            .transcript()
            .iter()
            .enumerate()
            .map(|(seq, m)| {
                let tag = agent.tag(&m.message_id);
                TranscriptEntry {
                    seq,
                    kind: tag.map(|t| t.kind),
                    request_id: tag.and_then(|t| t.request_id.clone()),
                    version: tag.and_then(|t| t.version),
                    message: m.clone(),
                }
            })
            .collect();
        drop(agent);
        Ok(RunOutput { metrics, requests: rows, transcript, desk: self.desk })
    }
}
