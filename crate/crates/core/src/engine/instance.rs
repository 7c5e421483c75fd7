use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::definition::{Trigger, WorkflowDefinition};
use super::EngineError;
use crate::Timestamp;

/// Reserved event kind that skips every unfinished step.
pub const TERMINATE_EVENT: &str = "$terminate";

pub type Blackboard = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepState {
    Blocked,
    Ready,
    AwaitingEvent,
    Done,
    Skipped,
}

impl StepState {
    pub fn is_settled(self) -> bool {
        matches!(self, StepState::Done | StepState::Skipped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowEvent {
    pub event_id: String,
    pub instance_id: String,
    pub kind: String,
    #[serde(default)]
    pub payload: Value,
    pub occurred_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EmittedAction {
    pub instance_id: String,
    pub version: u32,
    pub step_id: String,
    pub action_id: String,
    /// Per-instance sequence number; `(instance_id, seq)` identifies an action.
    pub seq: u64,
    pub event_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowInstance {
    pub instance_id: String,
    pub definition_version: u32,
    pub step_states: BTreeMap<String, StepState>,
    pub blackboard: Blackboard,
    pub event_inbox_cursor: u64,
    pub processed_events: BTreeSet<String>,
    /// Actions persisted but not yet handed to the caller.
    pub outbox: Vec<EmittedAction>,
    pub next_action_seq: u64,
}

impl WorkflowInstance {
    pub(crate) fn new(instance_id: String, defn: &WorkflowDefinition) -> Self {
        let step_states = defn
            .steps
            .iter()
            .map(|s| {
                let st = if s.depends_on.is_empty() { StepState::Ready } else { StepState::Blocked };
                (s.step_id.clone(), st)
            })
            .collect();
        Self {
            instance_id,
            definition_version: defn.version,
            step_states,
            blackboard: Blackboard::new(),
            event_inbox_cursor: 0,
            processed_events: BTreeSet::new(),
            outbox: Vec::new(),
            next_action_seq: 0,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.step_states.values().all(|s| s.is_settled())
    }

    pub fn steps_in(&self, state: StepState) -> BTreeSet<String> {
        self.step_states.iter().filter(|(_, s)| **s == state).map(|(k, _)| k.clone()).collect()
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("instance state is always serializable")
    }

    fn emit(&mut self, defn: &WorkflowDefinition, step_id: &str, event_id: &str) -> EmittedAction {
        let step = defn.step(step_id).expect("validated definition");
        let action = EmittedAction {
            instance_id: self.instance_id.clone(),
            version: self.definition_version,
            step_id: step_id.to_string(),
            action_id: step.action_id.clone(),
            seq: self.next_action_seq,
            event_id: event_id.to_string(),
        };
        self.next_action_seq += 1;
        action
    }

    /// Applies one new event. `run_step` is invoked for each step that
    /// completes so it can write to the blackboard. Returns the actions of
    /// completed steps in completion order.
    pub(crate) fn apply(
        &mut self,
        defn: &WorkflowDefinition,
        event: &WorkflowEvent,
        run_step: &dyn Fn(&str, &Blackboard, &WorkflowEvent) -> Blackboard,
    ) -> Vec<EmittedAction> {
        self.processed_events.insert(event.event_id.clone());
        self.event_inbox_cursor += 1;
        if let Value::Object(map) = &event.payload {
            for (k, v) in map {
                self.blackboard.insert(k.clone(), v.clone());
            }
        }
        let mut out = Vec::new();
        if event.kind == TERMINATE_EVENT {
            for st in self.step_states.values_mut() {
                if !st.is_settled() {
                    *st = StepState::Skipped;
                }
            }
            return out;
        }

        // Steps that were ready before this event arms their wait first.
        let armed: Vec<String> = self.steps_in(StepState::Ready).into_iter().collect();
        for id in &armed {
            if matches!(defn.step(id).map(|s| &s.trigger), Some(Trigger::AwaitEvent(_))) {
                self.step_states.insert(id.clone(), StepState::AwaitingEvent);
            }
        }
        let waiting: Vec<String> = self.steps_in(StepState::AwaitingEvent).into_iter().collect();
        for id in waiting {
            let step = defn.step(&id).expect("validated definition");
            if step.trigger == Trigger::AwaitEvent(event.kind.clone()) {
                self.complete(defn, &id, event, run_step, &mut out);
            }
        }

        loop {
            let blocked: Vec<String> = self.steps_in(StepState::Blocked).into_iter().collect();
            for id in blocked {
                let step = defn.step(&id).expect("validated definition");
                if step.depends_on.iter().all(|d| self.step_states[d].is_settled()) {
                    self.step_states.insert(id, StepState::Ready);
                }
            }
            let ready: Vec<String> = self.steps_in(StepState::Ready).into_iter().collect();
            if ready.is_empty() {
                break;
            }
            for id in ready {
                match &defn.step(&id).expect("validated definition").trigger {
                    Trigger::Immediate => self.complete(defn, &id, event, run_step, &mut out),
                    Trigger::AwaitEvent(_) => {
                        self.step_states.insert(id, StepState::AwaitingEvent);
                    }
                }
            }
        }
        out
    }

    fn complete(
        &mut self,
        defn: &WorkflowDefinition,
        step_id: &str,
        event: &WorkflowEvent,
        run_step: &dyn Fn(&str, &Blackboard, &WorkflowEvent) -> Blackboard,
        out: &mut Vec<EmittedAction>,
    ) {
        let action = self.emit(defn, step_id, &event.event_id);
        let writes = run_step(&action.action_id, &self.blackboard, event);
        self.blackboard.extend(writes);
        self.step_states.insert(step_id.to_string(), StepState::Done);
        out.push(action);
    }
}

/// Snapshot file layout: a `sha256:<hex>` line followed by the canonical JSON.
pub fn encode_snapshot(inst: &WorkflowInstance) -> Vec<u8> {
    let body = inst.canonical_bytes();
    let mut out = format!("sha256:{}\n", hex::encode(Sha256::digest(&body))).into_bytes();
    out.extend_from_slice(&body);
    out
}

pub fn decode_snapshot(instance_id: &str, bytes: &[u8]) -> Result<WorkflowInstance, EngineError> {
    let corrupt = |why: &str| EngineError::SnapshotCorrupt(instance_id.to_string(), why.to_string());
    let nl = bytes.iter().position(|b| *b == b'\n').ok_or_else(|| corrupt("missing header"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| corrupt("header not utf-8"))?;
    let expected = header.strip_prefix("sha256:").ok_or_else(|| corrupt("bad header"))?;
    let body = &bytes[nl + 1..];
    if hex::encode(Sha256::digest(body)) != expected {
        return Err(corrupt("checksum mismatch"));
    }
    serde_json::from_slice(body).map_err(|e| corrupt(&e.to_string()))
}
