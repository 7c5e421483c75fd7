use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use super::agent::Agent;
use crate::clock::Clock;
use crate::taskboard::{CantAnswerReceipt, MacroAction, Task, TaskApi, TaskError, TaskOutput, Tier};

/// Shared front desk for workers: one lock around the agent, a clock, and an
/// optional directory the agent is saved to after every change.
#[derive(Clone)]
pub struct Desk {
    agent: Arc<Mutex<Agent>>,
    clock: Arc<dyn Clock>,
    snapshot_dir: Option<PathBuf>,
}

impl Desk {
    pub fn new(agent: Agent, clock: Arc<dyn Clock>, snapshot_dir: Option<PathBuf>) -> Self {
        Self { agent: Arc::new(Mutex::new(agent)), clock, snapshot_dir }
    }

    pub fn lock(&self) -> MutexGuard<'_, Agent> {
        self.agent.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn persist(&self, agent: &Agent) -> Result<(), TaskError> {
        match &self.snapshot_dir {
            Some(dir) => agent.save(dir).map_err(TaskError::from),
            None => Ok(()),
        }
    }

    fn with<T>(&self, f: impl FnOnce(&mut Agent, chrono::DateTime<chrono::Utc>) -> Result<T, TaskError>) -> Result<T, TaskError> {
        let mut agent = self.lock();
        let now = self.clock.now();
        let out = f(&mut agent, now)?;
        self.persist(&agent)?;
        Ok(out)
    }
}

impl TaskApi for Desk {
    fn claim_next(&self, worker: &str, tier: Tier) -> Result<Option<Task>, TaskError> {
        self.with(|a, now| a.claim_next(worker, tier, now))
    }

    fn submit(&self, task_id: &str, worker: &str, output: TaskOutput) -> Result<Task, TaskError> {
        self.with(|a, now| a.submit(task_id, worker, output, now))
    }

    fn cant_answer(&self, task_id: &str, worker: &str) -> Result<CantAnswerReceipt, TaskError> {
        self.with(|a, now| a.cant_answer(task_id, worker, now))
    }

    fn macro_action(&self, task_id: &str, worker: &str, action: MacroAction) -> Result<Task, TaskError> {
        self.with(|a, now| a.macro_action(task_id, worker, action, now))
    }

    fn get(&self, task_id: &str) -> Result<Task, TaskError> {
        self.lock().get_task(task_id)
    }
}
