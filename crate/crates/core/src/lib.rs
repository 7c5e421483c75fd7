//! Meeting scheduling over email, handled by a three-tier pipeline: automated
//! microtasks, human microtasks, and expert macrotasks.
//!
//! The crate is organized around the pieces of that pipeline:
//!
//! * [`mailroom`] - simulated mail transport, thread matching, and `.ics` invitations.
//! * [`engine`] - versioned dependency-graph workflow engine with durable snapshots.
//! * [`workflow`] - the scheduling workflow itself (the [`workflow::Agent`]).
//! * [`tier1`] - ballot-response classifier and time-expression heuristics.
//! * [`taskboard`] - microtask/macrotask queues with leases and the worker HTTP API.
//! * [`calendar`] - subscriber calendars, free-slot search, anonymized views.
//! * [`sim`] - deterministic discrete-event scenarios and run metrics.

pub mod calendar;
pub mod checks;
pub mod cli;
pub mod clock;
pub mod engine;
pub mod mailroom;
pub mod sim;
pub mod taskboard;
pub mod tier1;
pub mod workflow;

/// All instants are stored UTC-normalized.
pub type Timestamp = chrono::DateTime<chrono::Utc>;
