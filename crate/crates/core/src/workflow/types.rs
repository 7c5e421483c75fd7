use std::collections::BTreeSet;

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::calendar::parse_offset;
use crate::mailroom::Invitation;
use crate::tier1::OptionAttrs;
use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RequestState {
    Intake,
    Extracting,
    Proposing,
    AwaitingResponses,
    Negotiating,
    Scheduled,
    Cancelled,
    EscalatedTier3,
}

impl RequestState {
    pub fn is_terminal(self) -> bool {
        matches!(self, RequestState::Scheduled | RequestState::Cancelled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Modality {
    InPerson,
    Phone,
    VideoCall,
    #[default]
    Unspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FieldConfidence {
    Automated,
    WorkerConfirmed,
    #[default]
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub earliest: Timestamp,
    pub latest: Timestamp,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintConfidence {
    pub duration: FieldConfidence,
    pub window: FieldConfidence,
    pub modality: FieldConfidence,
    pub attendees: FieldConfidence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeetingConstraints {
    pub duration_minutes: u32,
    /// `None` while the window is still being extracted.
    pub window: Option<Window>,
    pub modality: Modality,
    pub location_hint: Option<String>,
    pub needs_invitee_phone: bool,
    #[serde(default)]
    pub invitee_phones: std::collections::BTreeMap<String, String>,
    pub confidence: ConstraintConfidence,
}

impl Default for MeetingConstraints {
    fn default() -> Self {
        Self {
            duration_minutes: 30,
            window: None,
            modality: Modality::Unspecified,
            location_hint: None,
            needs_invitee_phone: false,
            invitee_phones: Default::default(),
            confidence: ConstraintConfidence::default(),
        }
    }
}

/// A candidate meeting time. `tz` is the organizer's offset, used only for
/// rendering.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeOption {
    pub start: Timestamp,
    pub duration_minutes: u32,
    #[serde(default = "utc")]
    pub tz: String,
}

fn utc() -> String {
    "+00:00".into()
}

impl TimeOption {
    pub fn end(&self) -> Timestamp {
        self.start + Duration::minutes(i64::from(self.duration_minutes))
    }

    pub fn attrs(&self, ordinal: usize, of: usize) -> OptionAttrs {
        let offset = parse_offset(&self.tz).unwrap_or_else(|_| chrono::FixedOffset::east_opt(0).unwrap());
        OptionAttrs::from_local(self.start.with_timezone(&offset), ordinal, of)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BallotOutcome {
    SelectionsReceived,
    AllRejected,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot {
    pub ballot_id: String,
    pub request_id: String,
    pub invitee: String,
    pub options: Vec<TimeOption>,
    pub response_text: Option<String>,
    pub selections: Option<Vec<bool>>,
    pub reminders_sent: u8,
    pub issued_at: Timestamp,
    pub deadline: Timestamp,
    /// Ballot email first, then reminders.
    pub message_ids: Vec<String>,
    pub outcome: Option<BallotOutcome>,
    /// A reply is being interpreted by a worker.
    #[serde(default)]
    pub pending_task: Option<String>,
}

impl Ballot {
    pub fn is_open(&self) -> bool {
        self.outcome.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EscalationReason {
    MultipleOrOutOfBoundResponses,
    NoAcceptableTime,
    AttendeeTimeout,
    BallotProcessingEscalation,
    CalendarInaccessible,
    ProposeTimesEscalation,
    DetermineAttendeesEscalation,
    Other,
}

impl EscalationReason {
    pub const ALL: [EscalationReason; 8] = [
        EscalationReason::MultipleOrOutOfBoundResponses,
        EscalationReason::NoAcceptableTime,
        EscalationReason::AttendeeTimeout,
        EscalationReason::BallotProcessingEscalation,
        EscalationReason::CalendarInaccessible,
        EscalationReason::ProposeTimesEscalation,
        EscalationReason::DetermineAttendeesEscalation,
        EscalationReason::Other,
    ];

    /// Description shown to the expert worker.
    pub fn describe(self) -> &'static str {
        match self {
            EscalationReason::MultipleOrOutOfBoundResponses => {
                "Multiple or out of bound email responses from an attendee."
            }
            EscalationReason::NoAcceptableTime => "None of the proposed times were acceptable to everyone.",
            EscalationReason::AttendeeTimeout => "Timed out while waiting for a response from an attendee.",
            EscalationReason::BallotProcessingEscalation => "A worker could not interpret a ballot response.",
            EscalationReason::CalendarInaccessible => "Cannot access the organizer's calendar.",
            EscalationReason::ProposeTimesEscalation => "No suitable times could be proposed.",
            EscalationReason::DetermineAttendeesEscalation => "The attendees could not be determined.",
            EscalationReason::Other => "Other.",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EscalationSource {
    Tier1,
    Tier2,
    Timer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscalationRecord {
    pub reason: EscalationReason,
    pub source: EscalationSource,
    pub occurred_at: Timestamp,
    #[serde(default)]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeetingRequest {
    pub request_id: String,
    /// Subscriber id, which is also the organizer's address.
    pub organizer: String,
    pub invitees: Vec<String>,
    pub subject: String,
    pub state: RequestState,
    pub constraints: MeetingConstraints,
    /// Every message sent or received for this request.
    pub message_ids: BTreeSet<String>,
    /// Same messages in arrival order.
    pub thread: Vec<String>,
    pub pinned_version: u32,
    pub escalations: Vec<EscalationRecord>,
    pub created_at: Timestamp,
    pub ballots: Vec<String>,
    pub options: Vec<TimeOption>,
    pub chosen: Option<TimeOption>,
    pub invitation: Option<Invitation>,
    pub open_macrotask: Option<String>,
    /// Micro tasks still outstanding, by kind label.
    #[serde(default)]
    pub pending_fields: BTreeSet<String>,
    #[serde(default)]
    pub warning_sent: bool,
    #[serde(default)]
    pub organizer_keep: bool,
    #[serde(default)]
    pub appointment: bool,
    /// Tier-1 suggestions and micro outputs carried into macrotasks.
    #[serde(default)]
    pub partial_outputs: Vec<serde_json::Value>,
    /// Workflow events delivered to this request's instance.
    #[serde(default)]
    pub events: u32,
}

impl MeetingRequest {
    pub fn participants(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.organizer.as_str()).chain(self.invitees.iter().map(String::as_str))
    }

    pub fn has_reason(&self, r: EscalationReason) -> bool {
        self.escalations.iter().any(|e| e.reason == r)
    }
}
