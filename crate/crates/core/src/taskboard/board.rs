use std::collections::{BTreeMap, BTreeSet, VecDeque};

use chrono::Duration;
use serde::{Deserialize, Serialize};

use super::task::{MacroAction, Task, TaskOutput, TaskStatus, Tier};
use super::TaskError;
use crate::Timestamp;

pub const DEFAULT_LEASE_MINUTES: i64 = 10;

/// Per-tier FIFO queues with leased claims. All transitions go through
/// `&mut self`, so callers serialize access with one lock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Board {
    tasks: BTreeMap<String, Task>,
    micro: VecDeque<String>,
    macro_q: VecDeque<String>,
    workers: BTreeSet<String>,
    next_id: u64,
    lease_minutes: i64,
}

impl Default for Board {
    fn default() -> Self {
        Self::new(DEFAULT_LEASE_MINUTES)
    }
}

impl Board {
    pub fn new(lease_minutes: i64) -> Self {
        Self {
            tasks: BTreeMap::new(),
            micro: VecDeque::new(),
            macro_q: VecDeque::new(),
            workers: BTreeSet::new(),
            next_id: 1,
            lease_minutes,
        }
    }

    fn queue(&mut self, tier: Tier) -> &mut VecDeque<String> {
        match tier {
            Tier::Micro => &mut self.micro,
            Tier::Macro => &mut self.macro_q,
        }
    }

    pub fn queued_ids(&self, tier: Tier) -> Vec<String> {
        match tier {
            Tier::Micro => self.micro.iter().cloned().collect(),
            Tier::Macro => self.macro_q.iter().cloned().collect(),
        }
    }

    /// Validates the payload policy and appends to the tier's queue.
    pub fn enqueue(&mut self, mut task: Task) -> Result<String, TaskError> {
        task.tier = task.kind.tier();
        task.payload.validate(task.tier).map_err(TaskError::PayloadPolicyViolation)?;
        let prefix = match task.tier {
            Tier::Micro => "mt",
            Tier::Macro => "MT",
        };
        let id = format!("{prefix}{:05}", self.next_id);
        self.next_id += 1;
        task.task_id = id.clone();
        task.status = TaskStatus::Queued;
        self.queue(task.tier).push_back(id.clone());
        self.tasks.insert(id.clone(), task);
        Ok(id)
    }

    pub fn register_worker(&mut self, worker: &str) {
        self.workers.insert(worker.to_string());
    }

    pub fn workers(&self) -> impl Iterator<Item = &str> {
        self.workers.iter().map(String::as_str)
    }

    /// Expired leases go back to the front of their queue; pushed-back
    /// tasks whose delay has passed rejoin at the back.
    pub fn tick(&mut self, now: Timestamp) {
        let mut expired: Vec<(Timestamp, String, Tier)> = Vec::new();
        let mut returned: Vec<(Timestamp, String, Tier)> = Vec::new();
        for t in self.tasks.values() {
            match &t.status {
                TaskStatus::Claimed { lease_expiry, .. } if *lease_expiry <= now => {
                    expired.push((*lease_expiry, t.task_id.clone(), t.tier))
                }
                TaskStatus::Returned { until } if *until <= now => returned.push((*until, t.task_id.clone(), t.tier)),
                _ => {}
            }
        }
        // latest expiry pushed first so the oldest claim ends up at the head
        expired.sort();
        for (_, id, tier) in expired.into_iter().rev() {
            self.tasks.get_mut(&id).unwrap().status = TaskStatus::Queued;
            self.queue(tier).push_front(id);
        }
        returned.sort();
        for (_, id, tier) in returned {
            self.tasks.get_mut(&id).unwrap().status = TaskStatus::Queued;
            self.queue(tier).push_back(id);
        }
    }

    /// Next moment a lease expires or a pushed-back task returns.
    pub fn next_wakeup(&self) -> Option<Timestamp> {
        self.tasks
            .values()
            .filter_map(|t| match &t.status {
                TaskStatus::Claimed { lease_expiry, .. } => Some(*lease_expiry),
                TaskStatus::Returned { until } => Some(*until),
                _ => None,
            })
            .min()
    }

    pub fn claim_next(&mut self, worker: &str, tier: Tier, now: Timestamp) -> Option<Task> {
        self.tick(now);
        self.register_worker(worker);
        let id = self.queue(tier).pop_front()?;
        let lease_expiry = now + Duration::minutes(self.lease_minutes);
        let t = self.tasks.get_mut(&id).expect("queued ids exist");
        t.status = TaskStatus::Claimed { worker: worker.to_string(), claimed_at: now, lease_expiry };
        Some(t.clone())
    }

    pub fn get(&self, id: &str) -> Result<&Task, TaskError> {
        self.tasks.get(id).ok_or_else(|| TaskError::UnknownTask(id.to_string()))
    }

    pub fn get_mut(&mut self, id: &str) -> Result<&mut Task, TaskError> {
        self.tasks.get_mut(id).ok_or_else(|| TaskError::UnknownTask(id.to_string()))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    /// Checks that `worker` holds a live claim; returns the claim time.
    fn check_claim(&mut self, id: &str, worker: &str, now: Timestamp) -> Result<Timestamp, TaskError> {
        self.tick(now);
        let t = self.get(id)?;
        if t.is_terminal() {
            return Err(TaskError::AlreadyTerminal(id.to_string()));
        }
        match &t.status {
            TaskStatus::Claimed { worker: w, claimed_at, .. } if w == worker => Ok(*claimed_at),
            _ => Err(TaskError::NotClaimant { task_id: id.to_string(), worker: worker.to_string() }),
        }
    }

    fn charge(&mut self, id: &str, claimed_at: Timestamp, now: Timestamp) {
        let t = self.tasks.get_mut(id).unwrap();
        t.work_seconds += (now - claimed_at).num_milliseconds() as f64 / 1000.0;
    }

    /// Validates a micro answer; the caller applies it and then calls
    /// [`Board::complete`].
    pub fn check_submit(&mut self, id: &str, worker: &str, output: &TaskOutput, now: Timestamp) -> Result<(), TaskError> {
        self.check_claim(id, worker, now)?;
        let t = self.get(id)?;
        if t.tier != Tier::Micro {
            return Err(TaskError::WrongTier(id.to_string()));
        }
        t.check_output(output).map_err(TaskError::SchemaMismatch)
    }

    pub fn complete(&mut self, id: &str, worker: &str, output: TaskOutput, now: Timestamp) -> Result<(), TaskError> {
        let claimed_at = self.check_claim(id, worker, now)?;
        self.charge(id, claimed_at, now);
        let t = self.tasks.get_mut(id).unwrap();
        t.output = Some(output);
        t.status = TaskStatus::Done;
        Ok(())
    }

    pub fn check_cant_answer(&mut self, id: &str, worker: &str, now: Timestamp) -> Result<(), TaskError> {
        self.check_claim(id, worker, now)?;
        if self.get(id)?.tier != Tier::Micro {
            return Err(TaskError::WrongTier(id.to_string()));
        }
        Ok(())
    }

    /// Marks a micro task escalated and links it to its macro successor.
    pub fn escalate(&mut self, id: &str, worker: &str, successor: &str, now: Timestamp) -> Result<(), TaskError> {
        let claimed_at = self.check_claim(id, worker, now)?;
        self.charge(id, claimed_at, now);
        let t = self.tasks.get_mut(id).unwrap();
        t.status = TaskStatus::Escalated;
        t.successor = Some(successor.to_string());
        if let Some(m) = self.tasks.get_mut(successor) {
            if !m.predecessors.iter().any(|p| p == id) {
                m.predecessors.push(id.to_string());
            }
        }
        Ok(())
    }

    pub fn check_macro(&mut self, id: &str, worker: &str, now: Timestamp) -> Result<(), TaskError> {
        self.check_claim(id, worker, now)?;
        if self.get(id)?.tier != Tier::Macro {
            return Err(TaskError::WrongTier(id.to_string()));
        }
        Ok(())
    }

    /// Records a macro action. PushBack returns the task to the queue after
    /// the delay; anything else finishes it.
    pub fn finish_macro(&mut self, id: &str, worker: &str, action: MacroAction, now: Timestamp) -> Result<(), TaskError> {
        let claimed_at = self.check_claim(id, worker, now)?;
        self.charge(id, claimed_at, now);
        let t = self.tasks.get_mut(id).unwrap();
        t.history.push(action.clone());
        if let MacroAction::PushBack { delay_minutes } = action {
            t.status = TaskStatus::Returned { until: now + Duration::minutes(i64::from(delay_minutes)) };
        } else {
            t.output = Some(TaskOutput::Macro { action });
            t.status = TaskStatus::Done;
        }
        Ok(())
    }

    /// Closes a task that no longer needs an answer (its request ended).
    pub fn withdraw(&mut self, id: &str) {
        if let Some(t) = self.tasks.get_mut(id) {
            if !t.is_terminal() {
                t.status = TaskStatus::Done;
                let tier = t.tier;
                self.queue(tier).retain(|q| q != id);
            }
        }
    }

    /// Replaces the payload of a task that has not finished yet.
    pub fn refresh_payload(&mut self, id: &str, payload: super::task::TaskPayload) -> Result<(), TaskError> {
        let t = self.get_mut(id)?;
        let tier = t.tier;
        payload.validate(tier).map_err(TaskError::PayloadPolicyViolation)?;
        t.payload = payload;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mailroom::EmailMessage;
    use crate::taskboard::task::{ActionSchema, Field, TaskKind, TaskPayload};
    use chrono::{TimeZone, Utc};

    fn now() -> Timestamp {
        Utc.with_ymd_and_hms(2016, 4, 4, 9, 0, 0).unwrap()
    }

    fn micro() -> Task {
        let email = EmailMessage {
            message_id: "m1".into(),
            in_reply_to: None,
            references: vec![],
            from_addr: "a@x".into(),
            to_addrs: vec!["cal@x".into()],
            cc_addrs: vec![],
            subject: "hi".into(),
            body: "meet?".into(),
            sent_at: now(),
            attachments: vec![],
        };
        let payload = TaskPayload {
            instructions: "How long?".into(),
            email: Some(email),
            actions: Some(ActionSchema::TextField { field: Field::Duration, hint: "minutes".into() }),
            ..Default::default()
        };
        Task::new(Some("r1".into()), TaskKind::ExtractField(Field::Duration), payload, now())
    }

    #[test]
    fn fifo_and_lease_expiry() {
        let mut b = Board::default();
        let a = b.enqueue(micro()).unwrap();
        let c = b.enqueue(micro()).unwrap();
        let t = b.claim_next("w1", Tier::Micro, now()).unwrap();
        assert_eq!(t.task_id, a);
        assert_eq!(b.queued_ids(Tier::Micro), [c.clone()]);
        let later = now() + Duration::minutes(11);
        let again = b.claim_next("w2", Tier::Micro, later).unwrap();
        assert_eq!(again.task_id, a);
        assert!(b.claim_next("w3", Tier::Macro, later).is_none());
    }

    #[test]
    fn submit_checks_claimant_and_schema() {
        let mut b = Board::default();
        let id = b.enqueue(micro()).unwrap();
        b.claim_next("w1", Tier::Micro, now()).unwrap();
        let out = TaskOutput::Field { value: "45".into() };
        assert!(matches!(b.check_submit(&id, "w2", &out, now()), Err(TaskError::NotClaimant { .. })));
        let bad = TaskOutput::Selections { selections: vec![true] };
        assert!(matches!(b.check_submit(&id, "w1", &bad, now()), Err(TaskError::SchemaMismatch(_))));
        b.check_submit(&id, "w1", &out, now()).unwrap();
        b.complete(&id, "w1", out, now() + Duration::seconds(40)).unwrap();
        let t = b.get(&id).unwrap();
        assert_eq!(t.status, TaskStatus::Done);
        assert_eq!(t.work_seconds, 40.0);
        assert!(matches!(b.check_cant_answer(&id, "w1", now()), Err(TaskError::AlreadyTerminal(_))));
    }

    #[test]
    fn micro_payload_with_calendar_is_rejected() {
        let mut b = Board::default();
        let mut t = micro();
        t.payload.calendar = Some(Default::default());
        assert!(matches!(b.enqueue(t), Err(TaskError::PayloadPolicyViolation(_))));
        assert!(b.queued_ids(Tier::Micro).is_empty());
    }
}
