//! The scheduling agent: routes mail, runs the phase graph on the engine,
//! owns ballots and follow-up timers, and turns worker answers into
//! workflow progress.
//!
//! Engine steps only record the phase on the blackboard. The side effects of
//! an emitted action run here, after the engine has persisted the transition.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use chrono::{Duration, NaiveTime};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::config::AgentConfig;
use super::definitions::*;
use super::types::*;
use crate::calendar::{
    local_instant, next_within_hours, parse_offset, CalendarError, CalendarStore, DailyHours, Interval,
    SubscriberPrefs,
};
use crate::engine::{
    Blackboard, EmittedAction, Engine, EngineError, FileStore, SnapshotStore, WorkflowEvent, TERMINATE_EVENT,
};
use crate::mailroom::{
    match_thread, normalize_subject, render_invitation, Attachment, EmailMessage, Invitation, InvitationMethod,
    MailError, ThreadCandidate,
};
use crate::taskboard::{
    ActionSchema, Board, CantAnswerReceipt, ChoiceOption, Field, IntentLabel, MacroAction, Task, TaskError, TaskKind,
    TaskOutput, TaskPayload, Tier,
};
use crate::tier1::timex::{find_name, scan, TimeValue};
use crate::tier1::{
    default_classifier, featurize, suggest_ballot, suggest_times, BallotClassifier, CorpusStore, Suggestion, TimeKind,
};
use crate::Timestamp;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Mail(#[from] MailError),
    #[error(transparent)]
    Calendar(#[from] CalendarError),
    #[error("unknown request {0}")]
    UnknownRequest(String),
    #[error("request {0} is already {1:?}")]
    TerminalRequest(String, RequestState),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<WorkflowError> for TaskError {
    fn from(e: WorkflowError) -> Self {
        match e {
            WorkflowError::Task(t) => t,
            WorkflowError::TerminalRequest(..) => TaskError::InvalidAction(e.to_string()),
            other => TaskError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Inbound,
    Ballot,
    Reminder,
    Warning,
    Cancellation,
    Invitation,
    InvitationUpdate,
    ExpertMessage,
}

/// Per-message provenance, used for transcript tagging.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageTag {
    pub kind: MessageKind,
    pub request_id: Option<String>,
    /// Workflow version that produced (or received) the message.
    pub version: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timer {
    pub id: u64,
    pub due: Timestamp,
    pub request_id: String,
    /// Empty for request-level timers.
    pub ballot_id: String,
    pub kind: TimerKind,
}

/// Follow-up on an expert message that got no answer, in business hours.
const EXPERT_FOLLOW_UP_HOURS: i64 = 48;

/// What a micro task is about, so its answer can be applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskContext {
    Intent { message_id: String, matched: Option<String> },
    Field { request_id: String, field: Field, message_id: String, invitee: Option<String> },
    Ballot { ballot_id: String, message_id: String },
    Macro { request_id: String },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Agent {
    config: AgentConfig,
    calendars: CalendarStore,
    classifier: BallotClassifier,
    requests: BTreeMap<String, MeetingRequest>,
    ballots: BTreeMap<String, Ballot>,
    timers: BTreeMap<u64, Timer>,
    tags: BTreeMap<String, MessageTag>,
    /// Message ids sent by the agent, in send order.
    outbound: Vec<String>,
    task_ctx: BTreeMap<String, TaskContext>,
    corpus: CorpusStore,
    max_version: u32,
    next_request: u64,
    next_ballot: u64,
    next_message: u64,
    next_timer: u64,
    next_event: u64,
    #[serde(skip)]
    mail: crate::mailroom::Mailroom,
    #[serde(skip)]
    board: Board,
    #[serde(skip, default = "Engine::in_memory")]
    engine: Engine,
    #[serde(skip)]
    engine_dir: Option<PathBuf>,
}

fn install_definitions(engine: &Engine, up_to: u32) -> Result<(), EngineError> {
    for action in ACTIONS {
        engine.register_step_fn(
            action,
            Arc::new(move |_: &Blackboard, _: &WorkflowEvent| {
                let mut out = Blackboard::new();
                out.insert("phase".into(), Value::String(action.to_string()));
                out
            }),
        );
    }
    let have = engine.versions();
    for v in 1..=up_to {
        if !have.contains(&v) {
            engine.register(definition(v))?;
        }
    }
    Ok(())
}

fn phone_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\+?\d[\d().\- ]{5,}\d").unwrap())
}

fn words(text: &str) -> BTreeSet<String> {
    crate::tier1::tokenize(text).into_iter().collect()
}

fn has_any(text: &str, keys: &[&str]) -> bool {
    let w = words(text);
    keys.iter().any(|k| w.contains(*k))
}

const APPOINTMENT_WORDS: [&str; 7] = ["appointment", "remind", "reminder", "block", "dentist", "doctor", "haircut"];

/// "alice.smith@x" -> "Alice Smith".
pub fn display_name(addr: &str) -> String {
    let local = addr.split('@').next().unwrap_or(addr);
    local
        .split(['.', '_', '-'])
        .filter(|p| !p.is_empty())
        .map(|p| {
            let mut c = p.chars();
            c.next().map(|f| f.to_uppercase().chain(c).collect::<String>()).unwrap_or_default()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn strip_reply_prefix(subject: &str) -> String {
    let mut s = subject.trim();
    loop {
        let lower = s.to_lowercase();
        if lower.starts_with("re:") {
            s = s[3..].trim_start();
        } else if lower.starts_with("fwd:") {
            s = s[4..].trim_start();
        } else {
            return s.to_string();
        }
    }
}

impl Agent {
    /// An agent with an in-memory engine and every workflow version registered.
    pub fn new(config: AgentConfig, calendars: CalendarStore) -> Self {
        Self::with_engine(config, calendars, Engine::in_memory(), LATEST_VERSION).expect("in-memory engine accepts definitions")
    }

    pub fn with_engine(
        config: AgentConfig,
        calendars: CalendarStore,
        engine: Engine,
        versions: u32,
    ) -> Result<Self, WorkflowError> {
        install_definitions(&engine, versions)?;
        let board = Board::new(config.lease_minutes);
        let mut agent = Self {
            config,
            calendars,
            classifier: default_classifier().clone(),
            requests: BTreeMap::new(),
            ballots: BTreeMap::new(),
            timers: BTreeMap::new(),
            tags: BTreeMap::new(),
            outbound: Vec::new(),
            task_ctx: BTreeMap::new(),
            corpus: CorpusStore::new(),
            max_version: versions,
            next_request: 1,
            next_ballot: 1,
            next_message: 1,
            next_timer: 1,
            next_event: 1,
            mail: Default::default(),
            board,
            engine,
            engine_dir: None,
        };
        let assistant = agent.config.assistant_address.clone();
        agent.mail.register(assistant);
        let subscribers: Vec<String> = agent.calendars.accounts().map(|a| a.subscriber_id.clone()).collect();
        for s in subscribers {
            agent.mail.register(s);
        }
        Ok(agent)
    }

    /// Makes `version` (and any below it) available; new requests pin to it.
    pub fn register_version(&mut self, version: u32) -> Result<(), WorkflowError> {
        install_definitions(&self.engine, version)?;
        self.max_version = self.max_version.max(version);
        Ok(())
    }

    pub fn set_classifier(&mut self, clf: BallotClassifier) {
        self.classifier = clf;
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }
    pub fn mailroom(&self) -> &crate::mailroom::Mailroom {
        &self.mail
    }
    pub fn register_address(&mut self, addr: &str) {
        self.mail.register(addr);
    }
    pub fn calendars(&self) -> &CalendarStore {
        &self.calendars
    }
    pub fn calendars_mut(&mut self) -> &mut CalendarStore {
        &mut self.calendars
    }
    pub fn board(&self) -> &Board {
        &self.board
    }
    pub fn engine(&self) -> &Engine {
        &self.engine
    }
    pub fn corpus(&self) -> &CorpusStore {
        &self.corpus
    }
    pub fn requests(&self) -> &BTreeMap<String, MeetingRequest> {
        &self.requests
    }
    pub fn request(&self, id: &str) -> Option<&MeetingRequest> {
        self.requests.get(id)
    }
    pub fn ballot(&self, id: &str) -> Option<&Ballot> {
        self.ballots.get(id)
    }
    pub fn ballots(&self) -> &BTreeMap<String, Ballot> {
        &self.ballots
    }
    pub fn timers(&self) -> impl Iterator<Item = &Timer> {
        self.timers.values()
    }
    pub fn tag(&self, message_id: &str) -> Option<&MessageTag> {
        self.tags.get(message_id)
    }
    pub fn task_context(&self, task_id: &str) -> Option<&TaskContext> {
        self.task_ctx.get(task_id)
    }
    /// Agent-sent message ids starting at `cursor`.
    pub fn outbound_since(&self, cursor: usize) -> &[String] {
        &self.outbound[cursor.min(self.outbound.len())..]
    }

    fn req(&self, rid: &str) -> Result<&MeetingRequest, WorkflowError> {
        self.requests.get(rid).ok_or_else(|| WorkflowError::UnknownRequest(rid.to_string()))
    }

    fn req_mut(&mut self, rid: &str) -> Result<&mut MeetingRequest, WorkflowError> {
        self.requests.get_mut(rid).ok_or_else(|| WorkflowError::UnknownRequest(rid.to_string()))
    }

    fn prefs_of(&self, subscriber: &str) -> SubscriberPrefs {
        self.calendars.get(subscriber).map(|a| a.prefs.clone()).unwrap_or_default()
    }

    fn business_hours_of(&self, subscriber: &str) -> DailyHours {
        self.config.business_hours.unwrap_or_else(|| self.prefs_of(subscriber).business_hours)
    }

    // ---- mail -----------------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn send(
        &mut self,
        rid: Option<&str>,
        kind: MessageKind,
        to: &str,
        subject: &str,
        body: String,
        reply_to: Option<&str>,
        attachments: Vec<Attachment>,
        now: Timestamp,
    ) -> Result<String, WorkflowError> {
        let message_id = format!("<a{:06}@{}>", self.next_message, self.domain());
        self.next_message += 1;
        let (in_reply_to, references) = match reply_to.and_then(|id| self.mail.message(id)) {
            Some(parent) => parent.reply_headers(),
            None => (None, Vec::new()),
        };
        let msg = EmailMessage {
            message_id: message_id.clone(),
            in_reply_to,
            references,
            from_addr: self.config.assistant_address.clone(),
            to_addrs: vec![to.to_string()],
            cc_addrs: Vec::new(),
            subject: subject.to_string(),
            body,
            sent_at: now,
            attachments,
        };
        self.mail.deliver(msg)?;
        let version = rid.and_then(|r| self.requests.get(r)).map(|r| r.pinned_version);
        self.tags
            .insert(message_id.clone(), MessageTag { kind, request_id: rid.map(str::to_string), version });
        self.outbound.push(message_id.clone());
        if let Some(rid) = rid {
            let req = self.req_mut(rid)?;
            req.message_ids.insert(message_id.clone());
            req.thread.push(message_id.clone());
        }
        Ok(message_id)
    }

    fn domain(&self) -> String {
        self.config.assistant_address.split('@').nth(1).unwrap_or("assistant.local").to_string()
    }

    /// Delivers an inbound message and routes it.
    pub fn receive(&mut self, msg: EmailMessage, now: Timestamp) -> Result<(), WorkflowError> {
        let mid = msg.message_id.clone();
        self.mail.deliver(msg.clone())?;
        self.tags.insert(mid.clone(), MessageTag { kind: MessageKind::Inbound, request_id: None, version: None });
        if !msg.is_addressed_to(&self.config.assistant_address) {
            return Ok(());
        }
        let candidates: Vec<ThreadCandidate> = self
            .requests
            .values()
            .filter(|r| r.state != RequestState::Cancelled)
            .map(|r| ThreadCandidate {
                request_id: r.request_id.clone(),
                subject: r.subject.clone(),
                message_ids: r.message_ids.clone(),
                participants: r.participants().map(str::to_lowercase).collect(),
            })
            .collect();
        let m = match_thread(&msg, &candidates);
        if m.confidence.is_automatic() {
            let rid = m.request_id.expect("header match names a request");
            return self.route_existing(&rid, &mid, now);
        }

        let sender = msg.from_addr.to_lowercase();
        let mut options = vec![ChoiceOption {
            label: "The message is about a new meeting.".into(),
            value: IntentLabel::NewMeeting,
        }];
        let mut related: Vec<&ThreadCandidate> =
            candidates.iter().filter(|c| Some(&c.request_id) == m.request_id.as_ref()).collect();
        if related.is_empty() {
            related = candidates.iter().filter(|c| c.participants.contains(&sender)).collect();
        }
        for c in related {
            options.push(ChoiceOption {
                label: format!("The message is about an existing meeting: \"{}\".", c.subject),
                value: IntentLabel::ExistingMeeting(c.request_id.clone()),
            });
        }
        options.push(ChoiceOption {
            label: "The message is not about scheduling.".into(),
            value: IntentLabel::NotScheduling,
        });
        let label = if m.request_id.is_some() { "existing_meeting" } else { "new_meeting" };
        let suggestion = Suggestion::Intent { label: label.into(), evidence: m.evidence.clone() };
        self.micro(
            None,
            TaskKind::ClassifyIntent,
            "Read the email and choose what it is about.",
            msg,
            ActionSchema::Choice { options },
            Some(suggestion),
            TaskContext::Intent { message_id: mid, matched: m.request_id },
            now,
        )?;
        Ok(())
    }

    fn attach_message(&mut self, rid: &str, mid: &str) -> Result<(), WorkflowError> {
        let version = self.req(rid)?.pinned_version;
        if let Some(tag) = self.tags.get_mut(mid) {
            tag.request_id = Some(rid.to_string());
            tag.version = Some(version);
        }
        let req = self.req_mut(rid)?;
        if req.message_ids.insert(mid.to_string()) {
            req.thread.push(mid.to_string());
        }
        req.events += 1;
        Ok(())
    }

    fn route_existing(&mut self, rid: &str, mid: &str, now: Timestamp) -> Result<(), WorkflowError> {
        self.attach_message(rid, mid)?;
        let msg = self.mail.message(mid).cloned().expect("delivered");
        let sender = msg.from_addr.to_lowercase();
        let req = self.req(rid)?.clone();
        if req.state == RequestState::Cancelled {
            return Ok(());
        }

        if sender == req.organizer.to_lowercase() {
            if req.state == RequestState::EscalatedTier3 {
                return self.ensure_macrotask(rid, now).map(|_| ());
            }
            let active = !req.state.is_terminal();
            if active && req.warning_sent && req.open_macrotask.is_none() {
                if has_any(&msg.body, &["keep"]) {
                    self.req_mut(rid)?.organizer_keep = true;
                    self.ensure_macrotask(rid, now)?;
                } else if has_any(&msg.body, &["cancel"]) {
                    self.cancel_request(rid, "The organizer asked to cancel.", now)?;
                } else {
                    self.escalate(rid, EscalationReason::Other, EscalationSource::Tier1, "unclear organizer reply", now)?;
                }
                return Ok(());
            }
            self.escalate(rid, EscalationReason::Other, EscalationSource::Tier1, "organizer follow-up", now)?;
            return Ok(());
        }

        let ballot_id = req.ballots.iter().find(|b| self.ballots[*b].invitee.to_lowercase() == sender).cloned();
        let Some(bid) = ballot_id else {
            if req.state == RequestState::EscalatedTier3 {
                return self.ensure_macrotask(rid, now).map(|_| ());
            }
            self.escalate(rid, EscalationReason::Other, EscalationSource::Tier1, "message from outside the ballots", now)?;
            return Ok(());
        };
        self.ballots.get_mut(&bid).unwrap().message_ids.push(mid.to_string());
        let b = self.ballots[&bid].clone();
        if b.selections.is_some() || b.pending_task.is_some() || b.outcome.is_some() {
            self.escalate(
                rid,
                EscalationReason::MultipleOrOutOfBoundResponses,
                EscalationSource::Tier1,
                &format!("another reply from {} after their ballot was answered", b.invitee),
                now,
            )?;
            return Ok(());
        }
        self.ballots.get_mut(&bid).unwrap().response_text = Some(msg.body.clone());

        if req.constraints.needs_invitee_phone && !req.constraints.invitee_phones.contains_key(&b.invitee) {
            match phone_re().find(&msg.body) {
                Some(p) => {
                    let phone = p.as_str().trim().to_string();
                    self.req_mut(rid)?.constraints.invitee_phones.insert(b.invitee.clone(), phone);
                }
                None if req.state != RequestState::EscalatedTier3 => {
                    self.req_mut(rid)?.pending_fields.insert(format!("phone:{}", b.invitee));
                    self.micro(
                        Some(rid),
                        TaskKind::ExtractField(Field::InviteePhone),
                        "Find the phone number the sender gives in this email.",
                        msg.clone(),
                        ActionSchema::TextField { field: Field::InviteePhone, hint: "+1 555 0100".into() },
                        None,
                        TaskContext::Field {
                            request_id: rid.to_string(),
                            field: Field::InviteePhone,
                            message_id: mid.to_string(),
                            invitee: Some(b.invitee.clone()),
                        },
                        now,
                    )?;
                }
                None => {}
            }
        }

        let attrs: Vec<_> = b.options.iter().enumerate().map(|(i, o)| o.attrs(i + 1, b.options.len())).collect();
        let suggestion = suggest_ballot(&self.classifier, &msg.body, &attrs);
        let silent = attrs.iter().all(|a| featurize(&self.classifier.dictionary, &msg.body, a).iter().all(|x| *x == 0.0));
        let confident = matches!(&suggestion, Some(Suggestion::BallotSelections { confident: true, .. })) && !silent;

        if req.state == RequestState::EscalatedTier3 {
            if let (true, Some(Suggestion::BallotSelections { selections, .. })) = (confident, &suggestion) {
                self.record_selections(&bid, selections.clone(), now)?;
            }
            return self.ensure_macrotask(rid, now).map(|_| ());
        }
        if confident {
            let Some(Suggestion::BallotSelections { selections, .. }) = suggestion else { unreachable!() };
            return self.record_selections(&bid, selections, now);
        }
        let labels = attrs.iter().map(|a| a.display()).collect();
        let task = self.micro(
            Some(rid),
            TaskKind::InterpretBallotResponse,
            "Which of the proposed times does the sender accept? Tick every time that works for them.",
            msg,
            ActionSchema::Checkboxes { labels },
            suggestion,
            TaskContext::Ballot { ballot_id: bid.clone(), message_id: mid.to_string() },
            now,
        )?;
        self.ballots.get_mut(&bid).unwrap().pending_task = Some(task);
        Ok(())
    }

    // ---- tasks ------------------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn micro(
        &mut self,
        rid: Option<&str>,
        kind: TaskKind,
        instructions: &str,
        email: EmailMessage,
        actions: ActionSchema,
        suggestion: Option<Suggestion>,
        ctx: TaskContext,
        now: Timestamp,
    ) -> Result<String, WorkflowError> {
        let payload = TaskPayload {
            instructions: instructions.into(),
            email: Some(email),
            actions: Some(actions),
            ..Default::default()
        };
        let mut task = Task::new(rid.map(str::to_string), kind, payload, now);
        task.suggestions = suggestion;
        let id = self.board.enqueue(task)?;
        self.task_ctx.insert(id.clone(), ctx);
        Ok(id)
    }

    fn macro_payload(&self, rid: &str) -> Result<TaskPayload, WorkflowError> {
        let req = self.req(rid)?;
        let thread: Vec<EmailMessage> = req.thread.iter().filter_map(|m| self.mail.message(m).cloned()).collect();
        let ballots: Vec<Value> = req
            .ballots
            .iter()
            .map(|b| {
                let b = &self.ballots[b];
                json!({
                    "ballot_id": b.ballot_id,
                    "invitee": b.invitee,
                    "response_text": b.response_text,
                    "selections": b.selections,
                    "outcome": b.outcome,
                    "reminders_sent": b.reminders_sent,
                })
            })
            .collect();
        let collected = json!({
            "request_id": req.request_id,
            "organizer": req.organizer,
            "invitees": req.invitees,
            "state": req.state,
            "constraints": req.constraints,
            "options": req.options,
            "ballots": ballots,
            "chosen": req.chosen,
            "partial_outputs": req.partial_outputs,
            "escalations": req.escalations,
        });
        let mut reasons = Vec::new();
        for e in &req.escalations {
            if !reasons.contains(&e.reason) {
                reasons.push(e.reason);
            }
        }
        let calendar = self.calendars.get(&req.organizer).ok().and_then(|a| a.anonymize().ok());
        Ok(TaskPayload {
            instructions: "Review the whole request and decide the next step: message a participant, send or update \
                           the invitation, cancel, or push the task back if you are waiting on a reply."
                .into(),
            email: None,
            actions: Some(ActionSchema::MacroActions),
            thread,
            collected: Some(collected),
            invitation: req.invitation.clone(),
            calendar,
            reasons,
        })
    }

    /// Opens a macrotask for the request, or refreshes the open one.
    fn ensure_macrotask(&mut self, rid: &str, now: Timestamp) -> Result<String, WorkflowError> {
        self.cancel_timers(rid, None);
        {
            let req = self.req_mut(rid)?;
            if !req.state.is_terminal() {
                req.state = RequestState::EscalatedTier3;
            }
        }
        let payload = self.macro_payload(rid)?;
        if let Some(open) = self.req(rid)?.open_macrotask.clone() {
            if self.board.get(&open).map(|t| !t.is_terminal()).unwrap_or(false) {
                self.board.refresh_payload(&open, payload)?;
                return Ok(open);
            }
        }
        let task = Task::new(Some(rid.to_string()), TaskKind::Macrotask, payload, now);
        let id = self.board.enqueue(task)?;
        self.task_ctx.insert(id.clone(), TaskContext::Macro { request_id: rid.to_string() });
        self.req_mut(rid)?.open_macrotask = Some(id.clone());
        Ok(id)
    }

    /// Records a reason and hands the request to an expert. Several reasons
    /// share one open macrotask.
    pub fn escalate(
        &mut self,
        rid: &str,
        reason: EscalationReason,
        source: EscalationSource,
        detail: &str,
        now: Timestamp,
    ) -> Result<String, WorkflowError> {
        let req = self.req_mut(rid)?;
        if req.state == RequestState::Cancelled {
            return Err(WorkflowError::TerminalRequest(rid.to_string(), req.state));
        }
        req.escalations.push(EscalationRecord { reason, source, occurred_at: now, detail: detail.to_string() });
        self.ensure_macrotask(rid, now)
    }

    // ---- workflow phases ----------------------------------------------------

    fn dispatch(&mut self, rid: &str, kind: &str, payload: Value, now: Timestamp) -> Result<(), WorkflowError> {
        let ev = WorkflowEvent {
            event_id: format!("e{:07}", self.next_event),
            instance_id: rid.to_string(),
            kind: kind.to_string(),
            payload,
            occurred_at: now,
        };
        self.next_event += 1;
        self.req_mut(rid)?.events += 1;
        let actions = self.engine.dispatch(&ev)?;
        for a in actions {
            self.run_action(&a, now)?;
        }
        Ok(())
    }

    fn run_action(&mut self, a: &EmittedAction, now: Timestamp) -> Result<(), WorkflowError> {
        let rid = a.instance_id.as_str();
        match a.action_id.as_str() {
            ACT_EXTRACT => self.extract_constraints(rid, now),
            ACT_PROPOSE => self.propose_times(rid, now),
            ACT_BALLOTS => self.issue_ballots(rid, now),
            ACT_RESOLVE => self.resolve_agreement(rid, now),
            ACT_FINALIZE => {
                let chosen = self.req(rid)?.chosen.clone().expect("agreement precedes finalize");
                self.finalize(rid, chosen, false, now)
            }
            ACT_CLOSE => Ok(()),
            other => Err(WorkflowError::Engine(EngineError::InvalidDefinition(format!("unknown action {other}")))),
        }
    }

    fn create_request(&mut self, mid: &str, now: Timestamp) -> Result<String, WorkflowError> {
        let msg = self.mail.message(mid).cloned().expect("delivered");
        let assistant = self.config.assistant_address.to_lowercase();
        let sender = msg.from_addr.to_lowercase();
        let organizer = if self.calendars.get(&sender).is_ok() {
            sender
        } else {
            msg.recipients()
                .map(str::to_lowercase)
                .find(|r| self.calendars.get(r).is_ok())
                .unwrap_or(sender)
        };
        let mut invitees: Vec<String> = Vec::new();
        for r in std::iter::once(msg.from_addr.as_str()).chain(msg.recipients()) {
            let r = r.to_lowercase();
            if r != organizer && r != assistant && !invitees.contains(&r) {
                invitees.push(r);
            }
        }
        let rid = format!("R{:04}", self.next_request);
        self.next_request += 1;
        let ev = WorkflowEvent {
            event_id: format!("e{:07}", self.next_event),
            instance_id: rid.clone(),
            kind: EV_RECEIVED.into(),
            payload: json!({ "request_id": rid }),
            occurred_at: now,
        };
        self.next_event += 1;
        self.engine.start_instance(&ev)?;
        let pinned_version = self.engine.instance(&rid)?.definition_version;
        let req = MeetingRequest {
            request_id: rid.clone(),
            organizer,
            invitees,
            subject: strip_reply_prefix(&msg.subject),
            state: RequestState::Intake,
            constraints: MeetingConstraints::default(),
            message_ids: BTreeSet::new(),
            thread: Vec::new(),
            pinned_version,
            escalations: Vec::new(),
            created_at: now,
            ballots: Vec::new(),
            options: Vec::new(),
            chosen: None,
            invitation: None,
            open_macrotask: None,
            pending_fields: BTreeSet::new(),
            warning_sent: false,
            organizer_keep: false,
            appointment: false,
            partial_outputs: Vec::new(),
            events: 0,
        };
        self.requests.insert(rid.clone(), req);
        self.attach_message(&rid, mid)?;
        Ok(rid)
    }

    /// Runs the intake step of a freshly created request. The engine arms its
    /// immediate root steps on the same event that started the instance.
    fn run_intake(&mut self, rid: &str, now: Timestamp) -> Result<(), WorkflowError> {
        let ev = WorkflowEvent {
            event_id: format!("e{:07}", self.next_event - 1),
            instance_id: rid.to_string(),
            kind: EV_RECEIVED.into(),
            payload: json!({ "request_id": rid }),
            occurred_at: now,
        };
        self.req_mut(rid)?.events += 1;
        for a in self.engine.dispatch(&ev)? {
            self.run_action(&a, now)?;
        }
        Ok(())
    }

    fn window_for(&self, value: &TimeValue, organizer: &str, written: Timestamp) -> Option<Window> {
        let offset = self.calendars.get(organizer).ok().and_then(|a| a.offset().ok()).unwrap_or_else(|| {
            parse_offset("+00:00").expect("utc parses")
        });
        let today = written.with_timezone(&offset).date_naive();
        let (first, last) = value.resolve(today)?;
        let earliest = local_instant(offset, first, NaiveTime::MIN);
        let latest = local_instant(offset, last.succ_opt()?, NaiveTime::MIN);
        (earliest < latest).then_some(Window { earliest, latest })
    }

    fn extract_constraints(&mut self, rid: &str, now: Timestamp) -> Result<(), WorkflowError> {
        let req = self.req(rid)?.clone();
        let mid = req.thread.last().cloned().expect("request has its first message");
        let msg = self.mail.message(&mid).cloned().expect("delivered");
        let prefs = self.prefs_of(&req.organizer);
        let name = self.config.assistant_name.clone();
        let suggestion = suggest_times(std::slice::from_ref(&msg), &name);
        let Suggestion::TimeExpressions { expressions, duration_minutes, date } = &suggestion else { unreachable!() };

        let mut c = MeetingConstraints { duration_minutes: prefs.default_duration_minutes, ..Default::default() };
        let mut pending: Vec<Field> = Vec::new();

        let n_durations = expressions.iter().filter(|e| e.kind == TimeKind::Duration).count();
        if n_durations >= 2 && find_name(&msg.body, &name).is_none() {
            pending.push(Field::Duration);
        } else {
            c.duration_minutes = duration_minutes.unwrap_or(prefs.default_duration_minutes);
            c.confidence.duration = FieldConfidence::Automated;
        }

        match date.as_ref().and_then(|d| self.window_for(&d.value, &req.organizer, msg.sent_at)) {
            Some(w) => {
                c.window = Some(w);
                c.confidence.window = FieldConfidence::Automated;
            }
            None => pending.push(Field::Window),
        }

        let mut appointment = false;
        if req.invitees.is_empty() {
            if has_any(&msg.body, &APPOINTMENT_WORDS) {
                appointment = true;
                c.confidence.attendees = FieldConfidence::Automated;
            } else {
                pending.push(Field::Attendees);
            }
        } else {
            c.confidence.attendees = FieldConfidence::Automated;
        }

        c.modality = if has_any(&msg.body, &["call", "phone"]) {
            Modality::Phone
        } else if has_any(&msg.body, &["video", "skype", "hangout", "videoconference"]) {
            Modality::VideoCall
        } else if has_any(&msg.body, &["coffee", "lunch", "dinner", "breakfast", "drinks", "office"]) {
            Modality::InPerson
        } else {
            Modality::Unspecified
        };
        c.confidence.modality = FieldConfidence::Automated;
        c.needs_invitee_phone = c.modality == Modality::Phone && has_any(&msg.body, &["number", "numbers"]);
        c.location_hint = location_hint(&msg.body);

        {
            let r = self.req_mut(rid)?;
            r.constraints = c;
            r.appointment = appointment;
            r.state = RequestState::Extracting;
            r.partial_outputs.push(serde_json::to_value(&suggestion)?);
        }
        if pending.is_empty() {
            self.req_mut(rid)?.state = RequestState::Proposing;
            return self.dispatch(rid, EV_CONSTRAINTS_READY, json!({}), now);
        }
        for field in pending {
            let (instructions, hint) = match field {
                Field::Duration => ("How long should the meeting be? Answer in minutes.", "30"),
                Field::Window => ("When should the meeting happen? For example: next week, Monday, Sep 20.", "next week"),
                Field::Attendees => ("Who should attend the meeting? List their email addresses.", "name@example.com"),
                Field::InviteePhone => ("What phone number does the sender give?", "+1 555 0100"),
            };
            self.req_mut(rid)?.pending_fields.insert(field_key(field));
            let sugg = matches!(field, Field::Duration | Field::Window).then(|| suggestion.clone());
            self.micro(
                Some(rid),
                TaskKind::ExtractField(field),
                instructions,
                msg.clone(),
                ActionSchema::TextField { field, hint: hint.into() },
                sugg,
                TaskContext::Field { request_id: rid.to_string(), field, message_id: mid.clone(), invitee: None },
                now,
            )?;
        }
        Ok(())
    }

    /// Earliest-first, pairwise non-overlapping free slots inside the window.
    pub fn candidate_times(&self, rid: &str, now: Timestamp) -> Result<Vec<TimeOption>, WorkflowError> {
        let req = self.req(rid)?;
        let acct = self.calendars.get(&req.organizer)?;
        let Some(w) = req.constraints.window else { return Ok(Vec::new()) };
        let start = w.earliest.max(now);
        if start >= w.latest {
            return Ok(Vec::new());
        }
        let dur = req.constraints.duration_minutes;
        let slots = acct.free_slots(Interval { start, end: w.latest }, dur, self.config.workhours.grid_minutes)?;
        let mut picked: Vec<TimeOption> = Vec::new();
        for s in slots {
            if picked.len() == self.config.ballot.options_k {
                break;
            }
            if picked.last().is_none_or(|p| s >= p.end()) {
                picked.push(TimeOption { start: s, duration_minutes: dur, tz: acct.timezone.clone() });
            }
        }
        Ok(picked)
    }

    fn propose_times(&mut self, rid: &str, now: Timestamp) -> Result<(), WorkflowError> {
        self.req_mut(rid)?.state = RequestState::Proposing;
        match self.candidate_times(rid, now) {
            Err(WorkflowError::Calendar(e)) => {
                self.escalate(rid, EscalationReason::CalendarInaccessible, EscalationSource::Tier1, &e.to_string(), now)?;
                Ok(())
            }
            Err(e) => Err(e),
            Ok(opts) if opts.is_empty() => {
                self.escalate(
                    rid,
                    EscalationReason::ProposeTimesEscalation,
                    EscalationSource::Tier1,
                    "no free time in the requested window",
                    now,
                )?;
                Ok(())
            }
            Ok(opts) => {
                self.req_mut(rid)?.options = opts.clone();
                self.dispatch(rid, EV_OPTIONS_READY, json!({ "options": opts }), now)
            }
        }
    }

    fn ballot_body(&self, req: &MeetingRequest, invitee: &str) -> String {
        let k = req.options.len();
        let lines: Vec<String> = req
            .options
            .iter()
            .enumerate()
            .map(|(i, o)| format!("{}. {}", i + 1, o.attrs(i + 1, k).display()))
            .collect();
        let mut body = format!(
            "Hi {},\n\n{} would like to meet with you for {} minutes. I checked the calendar and these times are \
             available:\n\n{}\n\nPlease reply with the times that work for you.",
            display_name(invitee),
            display_name(&req.organizer),
            req.constraints.duration_minutes,
            lines.join("\n"),
        );
        if req.constraints.needs_invitee_phone {
            body.push_str(" Please also include a phone number where you can be reached.");
        }
        body.push_str(&format!("\n\n{}", self.config.assistant_name));
        body
    }

    fn issue_ballots(&mut self, rid: &str, now: Timestamp) -> Result<(), WorkflowError> {
        let req = self.req(rid)?.clone();
        if req.invitees.is_empty() {
            return self.dispatch(rid, EV_RESPONSES_READY, json!({}), now);
        }
        self.req_mut(rid)?.state = RequestState::AwaitingResponses;
        let plan = timer_plan(req.pinned_version, &self.config.timers);
        let offset = self.calendars.get(&req.organizer).ok().and_then(|a| a.offset().ok()).unwrap_or_else(|| {
            parse_offset("+00:00").expect("utc parses")
        });
        let hours = self.business_hours_of(&req.organizer);
        let days = self.prefs_of(&req.organizer).work_days;
        for invitee in &req.invitees {
            let bid = format!("B{:04}", self.next_ballot);
            self.next_ballot += 1;
            let body = self.ballot_body(&req, invitee);
            let mid = self.send(Some(rid), MessageKind::Ballot, invitee, &req.subject, body, None, vec![], now)?;
            let mut due = now;
            let mut prev_hours = 0;
            for (kind, h) in &plan {
                due = next_within_hours(due + Duration::hours(i64::from(h - prev_hours)), offset, hours, &days);
                prev_hours = *h;
                self.add_timer(due, rid, &bid, *kind);
            }
            self.ballots.insert(
                bid.clone(),
                Ballot {
                    ballot_id: bid.clone(),
                    request_id: rid.to_string(),
                    invitee: invitee.clone(),
                    options: req.options.clone(),
                    response_text: None,
                    selections: None,
                    reminders_sent: 0,
                    issued_at: now,
                    deadline: due,
                    message_ids: vec![mid],
                    outcome: None,
                    pending_task: None,
                },
            );
            self.req_mut(rid)?.ballots.push(bid);
        }
        Ok(())
    }

    fn record_selections(&mut self, bid: &str, selections: Vec<bool>, now: Timestamp) -> Result<(), WorkflowError> {
        let rid = {
            let b = self.ballots.get_mut(bid).expect("ballot exists");
            b.outcome = Some(if selections.iter().any(|s| *s) {
                BallotOutcome::SelectionsReceived
            } else {
                BallotOutcome::AllRejected
            });
            b.selections = Some(selections);
            b.pending_task = None;
            b.request_id.clone()
        };
        self.cancel_timers(&rid, Some(bid));
        self.maybe_responses_ready(&rid, now)
    }

    fn maybe_responses_ready(&mut self, rid: &str, now: Timestamp) -> Result<(), WorkflowError> {
        let req = self.req(rid)?;
        if !matches!(req.state, RequestState::AwaitingResponses | RequestState::Negotiating) {
            return Ok(());
        }
        let all = req.ballots.iter().all(|b| self.ballots[b].outcome.is_some());
        if all && req.pending_fields.is_empty() {
            self.req_mut(rid)?.state = RequestState::Negotiating;
            self.dispatch(rid, EV_RESPONSES_READY, json!({}), now)
        } else {
            self.req_mut(rid)?.state = RequestState::Negotiating;
            Ok(())
        }
    }

    /// Earliest option every invitee accepted.
    pub fn common_option(&self, rid: &str) -> Result<Option<TimeOption>, WorkflowError> {
        let req = self.req(rid)?;
        if req.invitees.is_empty() {
            return Ok(req.options.first().cloned());
        }
        Ok(req
            .options
            .iter()
            .enumerate()
            .find(|(i, _)| {
                req.ballots.iter().all(|b| {
                    self.ballots[b].selections.as_ref().is_some_and(|s| s.get(*i).copied().unwrap_or(false))
                })
            })
            .map(|(_, o)| o.clone()))
    }

    fn resolve_agreement(&mut self, rid: &str, now: Timestamp) -> Result<(), WorkflowError> {
        match self.common_option(rid)? {
            Some(o) => {
                self.req_mut(rid)?.chosen = Some(o.clone());
                self.dispatch(rid, EV_AGREED, json!({ "chosen": o }), now)
            }
            None => {
                self.escalate(
                    rid,
                    EscalationReason::NoAcceptableTime,
                    EscalationSource::Tier1,
                    "no option was accepted by every invitee",
                    now,
                )?;
                Ok(())
            }
        }
    }

    fn invitation_summary(&self, req: &MeetingRequest) -> String {
        let mut s = req.subject.clone();
        if !req.constraints.invitee_phones.is_empty() {
            let phones: Vec<String> =
                req.constraints.invitee_phones.iter().map(|(a, p)| format!("{}: {p}", display_name(a))).collect();
            s.push_str(&format!(" (call {})", phones.join(", ")));
        }
        if let Some(loc) = &req.constraints.location_hint {
            s.push_str(&format!(" at {loc}"));
        }
        s
    }

    /// Books the chosen time and notifies every participant individually.
    pub fn finalize(&mut self, rid: &str, chosen: TimeOption, via_expert: bool, now: Timestamp) -> Result<(), WorkflowError> {
        let req = self.req(rid)?.clone();
        if req.state.is_terminal() {
            return Err(WorkflowError::TerminalRequest(rid.to_string(), req.state));
        }
        let inv = Invitation {
            uid: format!("{}-{}@{}", rid.to_lowercase(), self.next_message, self.domain()),
            start: chosen.start,
            end: chosen.end(),
            summary: self.invitation_summary(&req),
            organizer: req.organizer.clone(),
            attendees: req.invitees.clone(),
            method: InvitationMethod::Request,
        };
        let booked = self.calendars.get_mut(&req.organizer).and_then(|a| a.add_event(inv.clone()));
        if let Err(e) = booked {
            self.escalate(rid, EscalationReason::CalendarInaccessible, EscalationSource::Tier1, &e.to_string(), now)?;
            return Ok(());
        }
        let ics = render_invitation(&inv).expect("agent builds valid invitations");
        {
            let r = self.req_mut(rid)?;
            r.chosen = Some(chosen.clone());
            r.invitation = Some(inv.clone());
            r.state = RequestState::Scheduled;
        }
        self.cancel_timers(rid, None);
        let when = chosen.attrs(1, 1).display();
        for to in req.participants().map(str::to_string).collect::<Vec<_>>() {
            let body = format!(
                "Hi {},\n\n\"{}\" is scheduled for {} ({} minutes). The invitation is attached.\n\n{}",
                display_name(&to),
                req.subject,
                when,
                chosen.duration_minutes,
                self.config.assistant_name
            );
            self.send(Some(rid), MessageKind::Invitation, &to, &req.subject, body, None, vec![Attachment::invitation(&ics)], now)?;
        }
        if via_expert {
            self.dispatch(rid, TERMINATE_EVENT, json!({}), now)
        } else {
            self.dispatch(rid, EV_SCHEDULED, json!({}), now)
        }
    }

    fn update_invitation(&mut self, rid: &str, option: TimeOption, now: Timestamp) -> Result<(), WorkflowError> {
        let req = self.req(rid)?.clone();
        let mut inv = req.invitation.clone().expect("checked by caller");
        inv.start = option.start;
        inv.end = option.end();
        inv.method = InvitationMethod::Request;
        if let Err(e) = self.calendars.get_mut(&req.organizer).and_then(|a| a.update_event(inv.clone())) {
            self.escalate(rid, EscalationReason::CalendarInaccessible, EscalationSource::Tier1, &e.to_string(), now)?;
            return Ok(());
        }
        let ics = render_invitation(&inv).expect("agent builds valid invitations");
        {
            let r = self.req_mut(rid)?;
            r.invitation = Some(inv);
            r.chosen = Some(option.clone());
        }
        let when = option.attrs(1, 1).display();
        for to in req.participants().map(str::to_string).collect::<Vec<_>>() {
            let body = format!(
                "Hi {},\n\n\"{}\" has moved to {}. The updated invitation is attached.\n\n{}",
                display_name(&to),
                req.subject,
                when,
                self.config.assistant_name
            );
            self.send(Some(rid), MessageKind::InvitationUpdate, &to, &req.subject, body, None, vec![Attachment::invitation(&ics)], now)?;
        }
        Ok(())
    }

    /// Ends the request and tells everyone who has heard about it.
    pub fn cancel_request(&mut self, rid: &str, reason: &str, now: Timestamp) -> Result<(), WorkflowError> {
        let req = self.req(rid)?.clone();
        if req.state == RequestState::Cancelled {
            return Err(WorkflowError::TerminalRequest(rid.to_string(), req.state));
        }
        self.cancel_timers(rid, None);
        let mut attachment = Vec::new();
        if let Some(inv) = &req.invitation {
            if let Ok(acct) = self.calendars.get_mut(&req.organizer) {
                let _ = acct.cancel_event(&inv.uid);
            }
            let mut cancel = inv.clone();
            cancel.method = InvitationMethod::Cancel;
            attachment.push(Attachment::invitation(&render_invitation(&cancel).expect("valid invitation")));
        }
        self.req_mut(rid)?.state = RequestState::Cancelled;
        let mut to: Vec<String> = vec![req.organizer.clone()];
        to.extend(req.ballots.iter().map(|b| self.ballots[b].invitee.clone()));
        if req.invitation.is_some() {
            for i in &req.invitees {
                if !to.contains(i) {
                    to.push(i.clone());
                }
            }
        }
        for addr in to {
            let body = format!(
                "Hi {},\n\n\"{}\" has been cancelled. {}\n\n{}",
                display_name(&addr),
                req.subject,
                reason,
                self.config.assistant_name
            );
            self.send(Some(rid), MessageKind::Cancellation, &addr, &req.subject, body, None, attachment.clone(), now)?;
        }
        self.dispatch(rid, TERMINATE_EVENT, json!({}), now)
    }

    // ---- timers -------------------------------------------------------------

    fn add_timer(&mut self, due: Timestamp, rid: &str, bid: &str, kind: TimerKind) {
        let id = self.next_timer;
        self.next_timer += 1;
        self.timers.insert(id, Timer { id, due, request_id: rid.into(), ballot_id: bid.into(), kind });
    }

    fn cancel_timers(&mut self, rid: &str, ballot: Option<&str>) {
        self.timers.retain(|_, t| !(t.request_id == rid && ballot.is_none_or(|b| t.ballot_id == b)));
    }

    /// Earliest instant at which [`Agent::advance`] has work to do.
    pub fn next_due(&self) -> Option<Timestamp> {
        let timer = self.timers.values().map(|t| t.due).min();
        match (timer, self.board.next_wakeup()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Fires every timer due at or before `now` and expires task leases.
    pub fn advance(&mut self, now: Timestamp) -> Result<(), WorkflowError> {
        self.board.tick(now);
        loop {
            let next = self.timers.values().filter(|t| t.due <= now).min_by_key(|t| (t.due, t.id)).cloned();
            let Some(t) = next else { break };
            self.timers.remove(&t.id);
            self.fire(t, now)?;
        }
        Ok(())
    }

    fn fire(&mut self, t: Timer, now: Timestamp) -> Result<(), WorkflowError> {
        let rid = t.request_id.as_str();
        let req = self.req(rid)?.clone();
        if req.state.is_terminal() {
            return Ok(());
        }
        if t.kind == TimerKind::FollowUp {
            if req.state == RequestState::EscalatedTier3 && req.open_macrotask.is_none() {
                self.req_mut(rid)?.events += 1;
                self.ensure_macrotask(rid, now)?;
            }
            return Ok(());
        }
        if req.state == RequestState::EscalatedTier3 || !self.ballots[&t.ballot_id].is_open() {
            return Ok(());
        }
        self.req_mut(rid)?.events += 1;
        let b = self.ballots[&t.ballot_id].clone();
        match t.kind {
            TimerKind::Reminder(n) => {
                let n = n.min(2);
                let body = format!(
                    "Hi {},\n\nJust a reminder: could you let me know which of the proposed times work for you?\n\n{}",
                    display_name(&b.invitee),
                    self.config.assistant_name
                );
                let parent = b.message_ids.first().cloned();
                let mid = self.send(Some(rid), MessageKind::Reminder, &b.invitee, &format!("Re: {}", req.subject), body, parent.as_deref(), vec![], now)?;
                let bm = self.ballots.get_mut(&t.ballot_id).unwrap();
                bm.reminders_sent = bm.reminders_sent.max(n);
                bm.message_ids.push(mid);
            }
            TimerKind::Warning => {
                if !req.warning_sent {
                    let r = self.req_mut(rid)?;
                    r.warning_sent = true;
                    r.escalations.push(EscalationRecord {
                        reason: EscalationReason::AttendeeTimeout,
                        source: EscalationSource::Timer,
                        occurred_at: now,
                        detail: format!("{} has not answered", b.invitee),
                    });
                    let body = format!(
                        "Hi {},\n\n{} has not answered about \"{}\". I will cancel the request unless you reply \
                         \"keep\" to keep the meeting. Reply \"cancel\" to cancel it now.\n\n{}",
                        display_name(&req.organizer),
                        display_name(&b.invitee),
                        req.subject,
                        self.config.assistant_name
                    );
                    self.send(Some(rid), MessageKind::Warning, &req.organizer.clone(), &req.subject, body, None, vec![], now)?;
                }
            }
            TimerKind::Cancel => {
                if !req.organizer_keep && req.open_macrotask.is_none() {
                    self.ballots.get_mut(&t.ballot_id).unwrap().outcome = Some(BallotOutcome::TimedOut);
                    let reason = format!("{} did not respond.", display_name(&b.invitee));
                    self.cancel_request(rid, &reason, now)?;
                }
            }
            TimerKind::Timeout => {
                self.ballots.get_mut(&t.ballot_id).unwrap().outcome = Some(BallotOutcome::TimedOut);
                self.escalate(
                    rid,
                    EscalationReason::AttendeeTimeout,
                    EscalationSource::Timer,
                    &format!("{} has not answered", b.invitee),
                    now,
                )?;
            }
            TimerKind::FollowUp => unreachable!(),
        }
        Ok(())
    }

    // ---- worker API -----------------------------------------------------------

    pub fn claim_next(&mut self, worker: &str, tier: Tier, now: Timestamp) -> Result<Option<Task>, TaskError> {
        self.advance(now)?;
        Ok(self.board.claim_next(worker, tier, now))
    }

    pub fn get_task(&self, task_id: &str) -> Result<Task, TaskError> {
        self.board.get(task_id).cloned()
    }

    pub fn submit(&mut self, task_id: &str, worker: &str, output: TaskOutput, now: Timestamp) -> Result<Task, TaskError> {
        self.board.check_submit(task_id, worker, &output, now)?;
        let ctx = self.task_ctx.get(task_id).cloned().ok_or_else(|| TaskError::UnknownTask(task_id.into()))?;
        let parsed = self.parse_answer(&ctx, &output)?;
        self.board.complete(task_id, worker, output.clone(), now)?;
        self.apply_answer(task_id, worker, ctx, parsed, output, now)?;
        self.get_task(task_id)
    }

    fn parse_answer(&self, ctx: &TaskContext, output: &TaskOutput) -> Result<Answer, TaskError> {
        let bad = |m: String| Err(TaskError::SchemaMismatch(m));
        match (ctx, output) {
            (TaskContext::Intent { .. }, TaskOutput::Intent { label }) => {
                if let IntentLabel::ExistingMeeting(r) = label {
                    if !self.requests.contains_key(r) {
                        return bad(format!("no request {r}"));
                    }
                }
                Ok(Answer::Intent(label.clone()))
            }
            (TaskContext::Field { request_id, field, .. }, TaskOutput::Field { value }) => match field {
                Field::Duration => {
                    let v = value.trim();
                    let minutes = v.parse::<u32>().ok().or_else(|| {
                        scan(v, "").into_iter().find_map(|e| match e.value {
                            TimeValue::Minutes(m) => Some(m),
                            _ => None,
                        })
                    });
                    match minutes.filter(|m| *m > 0) {
                        Some(m) => Ok(Answer::Minutes(m)),
                        None => bad(format!("{v:?} is not a duration")),
                    }
                }
                Field::Window => {
                    let req = self.requests.get(request_id).ok_or_else(|| TaskError::UnknownTask(request_id.clone()))?;
                    let w = scan(value, "")
                        .into_iter()
                        .filter(|e| e.kind == TimeKind::Date)
                        .find_map(|e| self.window_for(&e.value, &req.organizer, req.created_at));
                    match w {
                        Some(w) => Ok(Answer::Window(w)),
                        None => bad(format!("{value:?} is not a date the extractor understands")),
                    }
                }
                Field::Attendees => {
                    let addrs: Vec<String> = value
                        .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
                        .filter(|s| s.contains('@'))
                        .map(|s| s.trim().to_lowercase())
                        .collect();
                    if addrs.is_empty() {
                        return bad("no addresses given".into());
                    }
                    if let Some(a) = addrs.iter().find(|a| !self.mail.is_registered(a)) {
                        return bad(format!("unknown address {a}"));
                    }
                    Ok(Answer::Attendees(addrs))
                }
                Field::InviteePhone => Ok(Answer::Phone(value.trim().to_string())),
            },
            (TaskContext::Ballot { .. }, TaskOutput::Selections { selections }) => Ok(Answer::Selections(selections.clone())),
            _ => bad("answer does not fit the task".into()),
        }
    }

    fn apply_answer(
        &mut self,
        task_id: &str,
        worker: &str,
        ctx: TaskContext,
        answer: Answer,
        output: TaskOutput,
        now: Timestamp,
    ) -> Result<(), WorkflowError> {
        match (ctx, answer) {
            (TaskContext::Intent { message_id, matched }, Answer::Intent(label)) => match label {
                IntentLabel::NewMeeting => {
                    let rid = self.create_request_for_task(task_id, &message_id, now)?;
                    self.run_intake(&rid, now)?;
                }
                IntentLabel::ExistingMeeting(rid) => {
                    self.board.get_mut(task_id)?.request_id = Some(rid.clone());
                    self.route_existing(&rid, &message_id, now)?;
                }
                IntentLabel::NotScheduling => {
                    if let Some(rid) = matched {
                        let sender = self.mail.message(&message_id).map(|m| m.from_addr.to_lowercase()).unwrap_or_default();
                        let answered = self.requests[&rid]
                            .ballots
                            .iter()
                            .any(|b| self.ballots[b].invitee.to_lowercase() == sender);
                        if answered && self.requests[&rid].state != RequestState::Cancelled {
                            self.board.get_mut(task_id)?.request_id = Some(rid.clone());
                            self.attach_message(&rid, &message_id)?;
                            self.escalate(
                                &rid,
                                EscalationReason::MultipleOrOutOfBoundResponses,
                                EscalationSource::Tier2,
                                "a participant sent mail that is not about scheduling",
                                now,
                            )?;
                        }
                    }
                }
            },
            (TaskContext::Field { request_id, field, invitee, .. }, answer) => {
                let rid = request_id.as_str();
                self.req_mut(rid)?.events += 1;
                let key = match (&field, &invitee) {
                    (Field::InviteePhone, Some(i)) => format!("phone:{i}"),
                    _ => field_key(field),
                };
                if !self.req_mut(rid)?.pending_fields.remove(&key) {
                    return Ok(());
                }
                {
                    let r = self.req_mut(rid)?;
                    r.partial_outputs.push(json!({ "task": task_id, "output": output }));
                    match answer {
                        Answer::Minutes(m) => {
                            r.constraints.duration_minutes = m;
                            r.constraints.confidence.duration = FieldConfidence::WorkerConfirmed;
                        }
                        Answer::Window(w) => {
                            r.constraints.window = Some(w);
                            r.constraints.confidence.window = FieldConfidence::WorkerConfirmed;
                        }
                        Answer::Attendees(a) => {
                            r.invitees = a;
                            r.constraints.confidence.attendees = FieldConfidence::WorkerConfirmed;
                        }
                        Answer::Phone(p) => {
                            if let Some(i) = &invitee {
                                r.constraints.invitee_phones.insert(i.clone(), p);
                            }
                        }
                        _ => {}
                    }
                }
                let state = self.req(rid)?.state;
                if field == Field::InviteePhone {
                    self.maybe_responses_ready(rid, now)?;
                } else if state == RequestState::Extracting && self.req(rid)?.pending_fields.is_empty() {
                    self.req_mut(rid)?.state = RequestState::Proposing;
                    self.dispatch(rid, EV_CONSTRAINTS_READY, json!({}), now)?;
                }
            }
            (TaskContext::Ballot { ballot_id, .. }, Answer::Selections(sel)) => {
                let b = self.ballots[&ballot_id].clone();
                let rid = b.request_id.clone();
                self.req_mut(&rid)?.events += 1;
                let attrs: Vec<_> = b.options.iter().enumerate().map(|(i, o)| o.attrs(i + 1, b.options.len())).collect();
                let suggested = match self.board.get(task_id)?.suggestions.clone() {
                    Some(Suggestion::BallotSelections { selections, .. }) => Some(selections),
                    _ => None,
                };
                let text = b.response_text.clone().unwrap_or_default();
                self.corpus.record_verdict(&ballot_id, &text, &attrs, suggested.as_deref(), &sel, worker);
                if b.pending_task.as_deref() != Some(task_id) || self.req(&rid)?.state.is_terminal() {
                    return Ok(());
                }
                self.record_selections(&ballot_id, sel, now)?;
                if self.req(&rid)?.state == RequestState::EscalatedTier3 {
                    self.ensure_macrotask(&rid, now)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn create_request_for_task(&mut self, task_id: &str, mid: &str, now: Timestamp) -> Result<String, WorkflowError> {
        let rid = self.create_request(mid, now)?;
        self.board.get_mut(task_id)?.request_id = Some(rid.clone());
        Ok(rid)
    }

    pub fn cant_answer(&mut self, task_id: &str, worker: &str, now: Timestamp) -> Result<CantAnswerReceipt, TaskError> {
        self.board.check_cant_answer(task_id, worker, now)?;
        let ctx = self.task_ctx.get(task_id).cloned().ok_or_else(|| TaskError::UnknownTask(task_id.into()))?;
        let task = self.board.get(task_id)?.clone();
        let (rid, reason) = match &ctx {
            TaskContext::Intent { message_id, matched } => match matched {
                Some(r) if self.requests.get(r).is_some_and(|q| q.state != RequestState::Cancelled) => {
                    self.attach_message(r, message_id)?;
                    (r.clone(), EscalationReason::Other)
                }
                _ => (self.create_request_for_task(task_id, message_id, now)?, EscalationReason::Other),
            },
            TaskContext::Field { request_id, field, invitee, .. } => {
                let key = match (field, invitee) {
                    (Field::InviteePhone, Some(i)) => format!("phone:{i}"),
                    _ => field_key(*field),
                };
                self.req_mut(request_id)?.pending_fields.remove(&key);
                let reason = match field {
                    Field::Window => EscalationReason::ProposeTimesEscalation,
                    Field::Attendees => EscalationReason::DetermineAttendeesEscalation,
                    Field::Duration | Field::InviteePhone => EscalationReason::Other,
                };
                (request_id.clone(), reason)
            }
            TaskContext::Ballot { ballot_id, .. } => {
                let b = self.ballots.get_mut(ballot_id).expect("ballot exists");
                if b.pending_task.as_deref() == Some(task_id) {
                    b.pending_task = None;
                }
                (b.request_id.clone(), EscalationReason::BallotProcessingEscalation)
            }
            TaskContext::Macro { .. } => return Err(TaskError::WrongTier(task_id.into())),
        };
        {
            let r = self.req_mut(&rid)?;
            r.events += 1;
            r.partial_outputs.push(json!({
                "task": task_id,
                "kind": task.kind,
                "suggestions": task.suggestions,
                "escalated_by": worker,
            }));
        }
        let macro_id = match self.escalate(&rid, reason, EscalationSource::Tier2, "a worker could not answer", now) {
            Ok(id) => id,
            Err(WorkflowError::TerminalRequest(..)) => {
                // the request ended meanwhile; the macrotask only records the attempt
                let payload = self.macro_payload(&rid)?;
                let t = Task::new(Some(rid.clone()), TaskKind::Macrotask, payload, now);
                let id = self.board.enqueue(t)?;
                self.task_ctx.insert(id.clone(), TaskContext::Macro { request_id: rid.clone() });
                id
            }
            Err(e) => return Err(e.into()),
        };
        self.board.escalate(task_id, worker, &macro_id, now)?;
        Ok(CantAnswerReceipt { task: self.get_task(task_id)?, macrotask_id: macro_id })
    }

    pub fn macro_action(&mut self, task_id: &str, worker: &str, action: MacroAction, now: Timestamp) -> Result<Task, TaskError> {
        self.board.check_macro(task_id, worker, now)?;
        let rid = match self.task_ctx.get(task_id) {
            Some(TaskContext::Macro { request_id }) => request_id.clone(),
            _ => return Err(TaskError::WrongTier(task_id.into())),
        };
        let req = self.requests.get(&rid).cloned().ok_or_else(|| TaskError::UnknownTask(rid.clone()))?;
        let invalid = |m: &str| Err(TaskError::InvalidAction(m.to_string()));
        match &action {
            MacroAction::SendMessage { to, body } => {
                if !self.mail.is_registered(to) {
                    return invalid("recipient is not a known address");
                }
                if body.trim().is_empty() {
                    return invalid("message body is empty");
                }
            }
            MacroAction::SendInvitation { option } => {
                if option.is_none() {
                    return invalid("SendInvitation needs the agreed option");
                }
                if req.state.is_terminal() {
                    return invalid("the request is already finished; use UpdateInvitation to move a meeting");
                }
            }
            MacroAction::UpdateInvitation { option } => {
                if option.is_none() {
                    return invalid("UpdateInvitation needs the new option");
                }
                if req.invitation.is_none() || req.state != RequestState::Scheduled {
                    return invalid("no invitation has been sent for this request");
                }
            }
            // closing an already cancelled request only finishes the task
            MacroAction::Cancel { .. } => {}
            MacroAction::PushBack { delay_minutes } => {
                if *delay_minutes == 0 {
                    return invalid("PushBack needs a positive delay");
                }
            }
        }
        if let Some(o) = match &action {
            MacroAction::SendInvitation { option } | MacroAction::UpdateInvitation { option } => option.as_ref(),
            _ => None,
        } {
            if o.duration_minutes == 0 {
                return invalid("option has no duration");
            }
        }

        self.board.finish_macro(task_id, worker, action.clone(), now)?;
        self.req_mut(&rid)?.events += 1;
        if !matches!(action, MacroAction::PushBack { .. }) && req.open_macrotask.as_deref() == Some(task_id) {
            self.req_mut(&rid)?.open_macrotask = None;
        }
        match action {
            MacroAction::SendMessage { to, body } => {
                let parent = req.thread.iter().rev().find(|m| {
                    self.mail.message(m).is_some_and(|e| e.from_addr.eq_ignore_ascii_case(&to) || e.is_addressed_to(&to))
                });
                let parent = parent.cloned();
                self.send(Some(&rid), MessageKind::ExpertMessage, &to, &format!("Re: {}", req.subject), body, parent.as_deref(), vec![], now)?;
                if self.req(&rid)?.state == RequestState::EscalatedTier3 {
                    let offset = self.calendars.get(&req.organizer).ok().and_then(|a| a.offset().ok()).unwrap_or_else(|| {
                        parse_offset("+00:00").expect("utc parses")
                    });
                    let due = next_within_hours(
                        now + Duration::hours(EXPERT_FOLLOW_UP_HOURS),
                        offset,
                        self.business_hours_of(&req.organizer),
                        &self.prefs_of(&req.organizer).work_days,
                    );
                    self.add_timer(due, &rid, "", TimerKind::FollowUp);
                }
            }
            MacroAction::SendInvitation { option } => {
                self.finalize(&rid, option.expect("checked"), true, now)?;
            }
            MacroAction::UpdateInvitation { option } => {
                self.update_invitation(&rid, option.expect("checked"), now)?;
            }
            MacroAction::Cancel { reason } => {
                if req.state != RequestState::Cancelled {
                    self.cancel_request(&rid, &reason, now)?;
                }
            }
            MacroAction::PushBack { .. } => {}
        }
        self.get_task(task_id)
    }

    // ---- persistence ----------------------------------------------------------

    /// Writes agent state, mailboxes, the task board and engine snapshots.
    pub fn save(&self, dir: &Path) -> Result<(), WorkflowError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("agent.json"), serde_json::to_vec_pretty(self)?)?;
        std::fs::write(dir.join("taskboard.json"), serde_json::to_vec_pretty(&self.board)?)?;
        self.mail.save(&dir.join("mail"))?;
        let engine_dir = dir.join("engine");
        if self.engine_dir.as_deref() != Some(engine_dir.as_path()) {
            if engine_dir.exists() {
                std::fs::remove_dir_all(&engine_dir)?;
            }
            let store = FileStore::open(&engine_dir)?;
            self.engine.export_to(&store)?;
        }
        Ok(())
    }

    /// Restores an agent written by [`Agent::save`]; the engine keeps running
    /// on the saved snapshot directory.
    pub fn load(dir: &Path) -> Result<Self, WorkflowError> {
        let mut agent: Agent = serde_json::from_slice(&std::fs::read(dir.join("agent.json"))?)?;
        agent.board = serde_json::from_slice(&std::fs::read(dir.join("taskboard.json"))?)?;
        agent.mail = crate::mailroom::Mailroom::load(&dir.join("mail"))?;
        let engine_dir = dir.join("engine");
        let store: Arc<dyn SnapshotStore> = Arc::new(FileStore::open(&engine_dir)?);
        let engine = Engine::new(store);
        install_definitions(&engine, agent.max_version)?;
        for rid in agent.requests.keys() {
            engine.resume(rid)?;
        }
        agent.engine = engine;
        agent.engine_dir = Some(engine_dir);
        Ok(agent)
    }
}

#[derive(Debug, Clone)]
enum Answer {
    Intent(IntentLabel),
    Minutes(u32),
    Window(Window),
    Attendees(Vec<String>),
    Phone(String),
    Selections(Vec<bool>),
}

fn field_key(f: Field) -> String {
    match f {
        Field::Window => "window",
        Field::Duration => "duration",
        Field::Attendees => "attendees",
        Field::InviteePhone => "phone",
    }
    .to_string()
}

fn location_hint(body: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\b(?:at|in) (?:the )?([A-Z][A-Za-z']+(?: [A-Z][A-Za-z']+)*)").unwrap());
    let skip = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday", "Cal"];
    re.captures_iter(body)
        .map(|c| c[1].to_string())
        .find(|s| !skip.iter().any(|d| s.starts_with(d)) && normalize_subject(s).len() > 2)
}
