//! Meeting-request state, the scheduling workflow and the agent that runs it.

mod agent;
pub mod config;
pub mod definitions;
mod desk;
mod types;

pub use agent::{display_name, Agent, MessageKind, MessageTag, TaskContext, Timer, WorkflowError};
pub use config::{AgentConfig, ConfigError};
pub use definitions::TimerKind;
pub use desk::Desk;
pub use types::*;
