//! Tier-2 microtask and Tier-3 macrotask queues and the worker HTTP API.

mod board;
pub mod http;
mod task;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use board::{Board, DEFAULT_LEASE_MINUTES};
pub use task::{
    ActionSchema, ChoiceOption, Field, IntentLabel, MacroAction, Task, TaskKind, TaskOutput, TaskPayload, TaskStatus,
    Tier,
};

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail")]
pub enum TaskError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("{worker} does not hold the claim on {task_id}")]
    NotClaimant { task_id: String, worker: String },
    #[error("task {0} is already finished")]
    AlreadyTerminal(String),
    #[error("output does not match the task schema: {0}")]
    SchemaMismatch(String),
    #[error("payload policy violation: {0}")]
    PayloadPolicyViolation(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("task {0} is on the other tier")]
    WrongTier(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl TaskError {
    pub fn http_status(&self) -> u16 {
        match self {
            TaskError::UnknownTask(_) => 404,
            TaskError::NotClaimant { .. } | TaskError::AlreadyTerminal(_) => 409,
            TaskError::SchemaMismatch(_)
            | TaskError::PayloadPolicyViolation(_)
            | TaskError::InvalidAction(_)
            | TaskError::WrongTier(_) => 422,
            TaskError::Internal(_) => 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CantAnswerReceipt {
    pub task: Task,
    pub macrotask_id: String,
}

/// The worker-facing operations, implemented over the scheduling agent so
/// every answer also advances the owning request.
pub trait TaskApi: Send + Sync {
    fn claim_next(&self, worker: &str, tier: Tier) -> Result<Option<Task>, TaskError>;
    fn submit(&self, task_id: &str, worker: &str, output: TaskOutput) -> Result<Task, TaskError>;
    fn cant_answer(&self, task_id: &str, worker: &str) -> Result<CantAnswerReceipt, TaskError>;
    fn macro_action(&self, task_id: &str, worker: &str, action: MacroAction) -> Result<Task, TaskError>;
    fn get(&self, task_id: &str) -> Result<Task, TaskError>;
}
