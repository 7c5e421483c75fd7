use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calendar::AnonymizedCalendarView;
use crate::mailroom::{EmailMessage, Invitation};
use crate::tier1::Suggestion;
use crate::workflow::{EscalationReason, TimeOption};
use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Micro,
    Macro,
}

impl std::str::FromStr for Tier {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "micro" => Ok(Tier::Micro),
            "macro" => Ok(Tier::Macro),
            other => Err(format!("unknown tier {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Window,
    Duration,
    Attendees,
    InviteePhone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "field", rename_all = "snake_case")]
pub enum TaskKind {
    ClassifyIntent,
    ExtractField(Field),
    InterpretBallotResponse,
    Macrotask,
}

impl TaskKind {
    pub fn tier(self) -> Tier {
        match self {
            TaskKind::Macrotask => Tier::Macro,
            _ => Tier::Micro,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TaskStatus {
    Queued,
    Claimed { worker: String, claimed_at: Timestamp, lease_expiry: Timestamp },
    Done,
    Escalated,
    Returned { until: Timestamp },
}

/// What the worker may answer with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionSchema {
    /// Pick exactly one labeled choice.
    Choice { options: Vec<ChoiceOption> },
    /// One checkbox per ballot option; the answer is a boolean per box.
    Checkboxes { labels: Vec<String> },
    TextField { field: Field, hint: String },
    /// The five expert actions.
    MacroActions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceOption {
    pub label: String,
    pub value: IntentLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "request_id", rename_all = "snake_case")]
pub enum IntentLabel {
    NewMeeting,
    ExistingMeeting(String),
    NotScheduling,
}

/// Everything a worker sees. Which fields may be filled is decided by tier
/// and checked by [`TaskPayload::validate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub instructions: String,
    /// The single message a microtask is about.
    #[serde(default)]
    pub email: Option<EmailMessage>,
    #[serde(default)]
    pub actions: Option<ActionSchema>,
    /// Macro only: every message of the request.
    #[serde(default)]
    pub thread: Vec<EmailMessage>,
    /// Macro only: collected constraints, ballots and partial outputs.
    #[serde(default)]
    pub collected: Option<Value>,
    /// Macro only: the invitation, if one was sent.
    #[serde(default)]
    pub invitation: Option<Invitation>,
    /// Macro only: busy intervals, no titles or attendees.
    #[serde(default)]
    pub calendar: Option<AnonymizedCalendarView>,
    #[serde(default)]
    pub reasons: Vec<EscalationReason>,
}

impl TaskPayload {
    /// Micro payloads hold only instructions, the originating email and the
    /// action options. Macro payloads hold full context and need a thread.
    pub fn validate(&self, tier: Tier) -> Result<(), String> {
        match tier {
            Tier::Micro => {
                if self.email.is_none() {
                    return Err("micro payload needs the originating email".into());
                }
                if self.actions.is_none() {
                    return Err("micro payload needs action options".into());
                }
                let extra = [
                    (!self.thread.is_empty(), "thread"),
                    (self.collected.is_some(), "collected info"),
                    (self.invitation.is_some(), "invitation"),
                    (self.calendar.is_some(), "calendar data"),
                    (!self.reasons.is_empty(), "escalation reasons"),
                ];
                if let Some((_, what)) = extra.iter().find(|(present, _)| *present) {
                    return Err(format!("micro payload may not carry {what}"));
                }
                Ok(())
            }
            Tier::Macro => {
                if self.email.is_some() {
                    return Err("macro payload carries the full thread, not a single email".into());
                }
                if self.thread.is_empty() {
                    return Err("macro payload needs the thread".into());
                }
                if self.actions != Some(ActionSchema::MacroActions) {
                    return Err("macro payload must offer the macro actions".into());
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MacroAction {
    SendMessage { to: String, body: String },
    SendInvitation { option: Option<TimeOption> },
    Cancel { reason: String },
    UpdateInvitation { option: Option<TimeOption> },
    PushBack { delay_minutes: u32 },
}

impl MacroAction {
    pub fn name(&self) -> &'static str {
        match self {
            MacroAction::SendMessage { .. } => "SendMessage",
            MacroAction::SendInvitation { .. } => "SendInvitation",
            MacroAction::Cancel { .. } => "Cancel",
            MacroAction::UpdateInvitation { .. } => "UpdateInvitation",
            MacroAction::PushBack { .. } => "PushBack",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskOutput {
    Intent { label: IntentLabel },
    Field { value: String },
    Selections { selections: Vec<bool> },
    Macro { action: MacroAction },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub request_id: Option<String>,
    pub tier: Tier,
    pub kind: TaskKind,
    pub payload: TaskPayload,
    pub suggestions: Option<Suggestion>,
    pub status: TaskStatus,
    pub output: Option<TaskOutput>,
    pub work_seconds: f64,
    pub created_at: Timestamp,
    /// Micro task whose escalation created this macrotask.
    #[serde(default)]
    pub predecessors: Vec<String>,
    /// Macrotask created by (or absorbing) this micro task's escalation.
    #[serde(default)]
    pub successor: Option<String>,
    /// Every macro action taken on this task, push-backs included.
    #[serde(default)]
    pub history: Vec<MacroAction>,
}

impl Task {
    pub fn new(request_id: Option<String>, kind: TaskKind, payload: TaskPayload, now: Timestamp) -> Self {
        Self {
            task_id: String::new(),
            request_id,
            tier: kind.tier(),
            kind,
            payload,
            suggestions: None,
            status: TaskStatus::Queued,
            output: None,
            work_seconds: 0.0,
            created_at: now,
            predecessors: Vec::new(),
            successor: None,
            history: Vec::new(),
        }
    }

    pub fn claimant(&self) -> Option<&str> {
        match &self.status {
            TaskStatus::Claimed { worker, .. } => Some(worker),
            _ => None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.status, TaskStatus::Done | TaskStatus::Escalated)
    }

    /// Checks an answer against this task's action schema.
    pub fn check_output(&self, out: &TaskOutput) -> Result<(), String> {
        match (&self.kind, out, &self.payload.actions) {
            (TaskKind::ClassifyIntent, TaskOutput::Intent { .. }, _) => Ok(()),
            (TaskKind::ExtractField(_), TaskOutput::Field { value }, _) if !value.trim().is_empty() => Ok(()),
            (TaskKind::InterpretBallotResponse, TaskOutput::Selections { selections }, Some(ActionSchema::Checkboxes { labels })) => {
                if selections.len() == labels.len() {
                    Ok(())
                } else {
                    Err(format!("expected {} selections, got {}", labels.len(), selections.len()))
                }
            }
            (TaskKind::Macrotask, TaskOutput::Macro { .. }, _) => Ok(()),
            (kind, _, _) => Err(format!("output does not match a {kind:?} task")),
        }
    }
}
