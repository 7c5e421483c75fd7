//! The scheduling workflow as engine definitions. Every version shares the
//! same phase graph; versions differ in their follow-up timer plans.

use serde::{Deserialize, Serialize};

use super::config::TimerConfig;
use crate::engine::{StepDef, WorkflowDefinition};

pub const EV_RECEIVED: &str = "received";
pub const EV_CONSTRAINTS_READY: &str = "constraints_ready";
pub const EV_OPTIONS_READY: &str = "options_ready";
pub const EV_RESPONSES_READY: &str = "responses_ready";
pub const EV_AGREED: &str = "agreed";
pub const EV_SCHEDULED: &str = "scheduled";

pub const ACT_EXTRACT: &str = "extract_constraints";
pub const ACT_PROPOSE: &str = "propose_times";
pub const ACT_BALLOTS: &str = "issue_ballots";
pub const ACT_RESOLVE: &str = "resolve_agreement";
pub const ACT_FINALIZE: &str = "finalize";
pub const ACT_CLOSE: &str = "close_request";

pub const ACTIONS: [&str; 6] = [ACT_EXTRACT, ACT_PROPOSE, ACT_BALLOTS, ACT_RESOLVE, ACT_FINALIZE, ACT_CLOSE];

pub const LATEST_VERSION: u32 = 2;

pub fn definition(version: u32) -> WorkflowDefinition {
    WorkflowDefinition {
        version,
        steps: vec![
            StepDef::immediate("intake", &[], ACT_EXTRACT),
            StepDef::on_event("constraints", &["intake"], EV_CONSTRAINTS_READY, ACT_PROPOSE),
            StepDef::on_event("proposal", &["constraints"], EV_OPTIONS_READY, ACT_BALLOTS),
            StepDef::on_event("responses", &["proposal"], EV_RESPONSES_READY, ACT_RESOLVE),
            StepDef::on_event("agreement", &["responses"], EV_AGREED, ACT_FINALIZE),
            StepDef::on_event("done", &["agreement"], EV_SCHEDULED, ACT_CLOSE),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "n", rename_all = "snake_case")]
pub enum TimerKind {
    Reminder(u8),
    /// Tells the organizer the request will be cancelled.
    Warning,
    Cancel,
    /// Hands a silent invitee to an expert instead of cancelling.
    Timeout,
    /// Reopens expert work when a message sent by an expert goes unanswered.
    FollowUp,
}

/// Follow-up timers installed with every ballot, as hours after issue.
/// Version 1 reminds once and then escalates; version 2 reminds twice,
/// warns the organizer and cancels automatically.
pub fn timer_plan(version: u32, t: &TimerConfig) -> Vec<(TimerKind, u32)> {
    match version {
        1 => vec![(TimerKind::Reminder(1), t.reminder1_hours), (TimerKind::Timeout, t.warning_hours)],
        _ => vec![
            (TimerKind::Reminder(1), t.reminder1_hours),
            (TimerKind::Reminder(2), t.reminder2_hours),
            (TimerKind::Warning, t.warning_hours),
            (TimerKind::Cancel, t.cancel_hours),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definitions_validate() {
        for v in 1..=LATEST_VERSION {
            let order = definition(v).validate().unwrap();
            assert_eq!(order, ["intake", "constraints", "proposal", "responses", "agreement", "done"]);
        }
    }

    #[test]
    fn plans_are_increasing() {
        for v in 1..=LATEST_VERSION {
            let plan = timer_plan(v, &TimerConfig::default());
            assert!(plan.windows(2).all(|w| w[0].1 < w[1].1));
        }
    }
}
