//! Event-driven execution of versioned workflow definitions.
//!
//! A definition is a dependency graph of steps. An instance is pinned to the
//! newest definition registered when it starts and keeps that version for
//! its whole life, so newer definitions only affect newer instances.
//!
//! Every dispatch persists the instance (state, processed event ids and the
//! outbox of emitted actions) before the actions are released to the caller.
//! Event ids are idempotence keys: replaying one is a no-op.

mod definition;
mod instance;
mod store;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};

use thiserror::Error;

pub use definition::{StepDef, Trigger, WorkflowDefinition};
pub use instance::{
    decode_snapshot, encode_snapshot, Blackboard, EmittedAction, StepState, WorkflowEvent, WorkflowInstance,
    TERMINATE_EVENT,
};
pub use store::{FileStore, MemoryStore, SnapshotStore};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("dependency cycle among steps {0:?}")]
    CycleDetected(Vec<String>),
    #[error("definition version {0} already registered")]
    DuplicateVersion(u32),
    #[error("invalid definition: {0}")]
    InvalidDefinition(String),
    #[error("no workflow definition registered")]
    NoDefinition,
    #[error("definition version {0} is not registered")]
    UnknownVersion(u32),
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("instance {0} already exists")]
    DuplicateInstance(String),
    #[error("event {event_id} targets {target}, not {instance}")]
    WrongInstance { event_id: String, target: String, instance: String },
    #[error("no snapshot for instance {0}")]
    SnapshotMissing(String),
    #[error("snapshot for {0} is corrupt: {1}")]
    SnapshotCorrupt(String, String),
    #[error("engine stopped at injected crash point {0:?}")]
    Crashed(CrashPoint),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Fault-injection points inside [`Engine::dispatch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// The event was journaled but the new state never reached the store.
    BeforePersist,
    /// The new state and outbox are durable, but no action was released.
    AfterPersist,
}

/// Pure step body: reads the blackboard and the triggering event, returns
/// blackboard writes.
pub type StepFn = Arc<dyn Fn(&Blackboard, &WorkflowEvent) -> Blackboard + Send + Sync>;

pub struct Engine {
    definitions: RwLock<BTreeMap<u32, Arc<WorkflowDefinition>>>,
    instances: Mutex<BTreeMap<String, Arc<Mutex<WorkflowInstance>>>>,
    step_fns: RwLock<BTreeMap<String, StepFn>>,
    store: Arc<dyn SnapshotStore>,
    crash_at: Mutex<Option<(CrashPoint, u64)>>,
    crashed: Mutex<Option<CrashPoint>>,
    dispatch_count: Mutex<u64>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("versions", &self.versions())
            .field("instances", &self.instances.lock().unwrap().len())
            .finish()
    }
}

impl Engine {
    pub fn new(store: Arc<dyn SnapshotStore>) -> Self {
        Self {
            definitions: RwLock::new(BTreeMap::new()),
            instances: Mutex::new(BTreeMap::new()),
            step_fns: RwLock::new(BTreeMap::new()),
            store,
            crash_at: Mutex::new(None),
            crashed: Mutex::new(None),
            dispatch_count: Mutex::new(0),
        }
    }

    pub fn in_memory() -> Self {
        Self::new(Arc::new(MemoryStore::new()))
    }

    pub fn store(&self) -> &Arc<dyn SnapshotStore> {
        &self.store
    }

    pub fn register(&self, defn: WorkflowDefinition) -> Result<(), EngineError> {
        defn.validate()?;
        let mut defs = self.definitions.write().unwrap();
        if defs.contains_key(&defn.version) {
            return Err(EngineError::DuplicateVersion(defn.version));
        }
        defs.insert(defn.version, Arc::new(defn));
        Ok(())
    }

    pub fn versions(&self) -> Vec<u32> {
        self.definitions.read().unwrap().keys().copied().collect()
    }

    pub fn latest_version(&self) -> Option<u32> {
        self.definitions.read().unwrap().keys().next_back().copied()
    }

    pub fn definition(&self, version: u32) -> Option<Arc<WorkflowDefinition>> {
        self.definitions.read().unwrap().get(&version).cloned()
    }

    /// Attaches a blackboard-writing body to every step whose `action_id`
    /// matches. Steps without a body only emit their action.
    pub fn register_step_fn(&self, action_id: &str, f: StepFn) {
        self.step_fns.write().unwrap().insert(action_id.to_string(), f);
    }

    /// Arms a crash at `point` during the `nth` (0-based) subsequent dispatch
    /// that processes a new event.
    pub fn inject_crash(&self, point: CrashPoint, nth: u64) {
        let base = *self.dispatch_count.lock().unwrap();
        *self.crash_at.lock().unwrap() = Some((point, base + nth));
    }

    fn check_alive(&self) -> Result<(), EngineError> {
        match *self.crashed.lock().unwrap() {
            Some(p) => Err(EngineError::Crashed(p)),
            None => Ok(()),
        }
    }

    /// Creates an instance pinned to the latest version. Its root steps are
    /// Ready; the initial event is journaled, and runs once dispatched.
    pub fn start_instance(&self, initial_event: &WorkflowEvent) -> Result<String, EngineError> {
        self.check_alive()?;
        let version = self.latest_version().ok_or(EngineError::NoDefinition)?;
        let defn = self.definition(version).expect("latest exists");
        let id = initial_event.instance_id.clone();
        if id.is_empty() {
            return Err(EngineError::InvalidDefinition("initial event needs an instance id".into()));
        }
        let mut map = self.instances.lock().unwrap();
        if map.contains_key(&id) || self.store.get_snapshot(&id)?.is_some() {
            return Err(EngineError::DuplicateInstance(id));
        }
        let inst = WorkflowInstance::new(id.clone(), &defn);
        self.store.put_snapshot(&id, &encode_snapshot(&inst))?;
        self.store.append_journal(&id, initial_event)?;
        map.insert(id.clone(), Arc::new(Mutex::new(inst)));
        Ok(id)
    }

    fn slot(&self, instance_id: &str) -> Result<Arc<Mutex<WorkflowInstance>>, EngineError> {
        let mut map = self.instances.lock().unwrap();
        if let Some(s) = map.get(instance_id) {
            return Ok(s.clone());
        }
        let bytes = self
            .store
            .get_snapshot(instance_id)?
            .ok_or_else(|| EngineError::UnknownInstance(instance_id.to_string()))?;
        let inst = decode_snapshot(instance_id, &bytes)?;
        let slot = Arc::new(Mutex::new(inst));
        map.insert(instance_id.to_string(), slot.clone());
        Ok(slot)
    }

    /// Processes one event for its instance and returns the released actions:
    /// any outbox left over from an interrupted dispatch, then the actions of
    /// steps completed by this event.
    pub fn dispatch(&self, event: &WorkflowEvent) -> Result<Vec<EmittedAction>, EngineError> {
        self.check_alive()?;
        let slot = self.slot(&event.instance_id)?;
        let mut inst = slot.lock().unwrap();
        if inst.instance_id != event.instance_id {
            return Err(EngineError::WrongInstance {
                event_id: event.event_id.clone(),
                target: event.instance_id.clone(),
                instance: inst.instance_id.clone(),
            });
        }
        if inst.processed_events.contains(&event.event_id) {
            return self.release(&mut inst);
        }

        let defn = self
            .definition(inst.definition_version)
            .ok_or(EngineError::UnknownVersion(inst.definition_version))?;
        let fns = self.step_fns.read().unwrap().clone();
        let run_step = move |action_id: &str, bb: &Blackboard, ev: &WorkflowEvent| -> Blackboard {
            fns.get(action_id).map(|f| f(bb, ev)).unwrap_or_default()
        };

        let nth = {
            let mut c = self.dispatch_count.lock().unwrap();
            let n = *c;
            *c += 1;
            n
        };
        let crash = self.crash_at.lock().unwrap().filter(|(_, at)| *at == nth).map(|(p, _)| p);

        self.store.append_journal(&inst.instance_id, event)?;
        let mut next = inst.clone();
        let actions = next.apply(&defn, event, &run_step);
        next.outbox.extend(actions);
        if crash == Some(CrashPoint::BeforePersist) {
            return Err(self.crash(CrashPoint::BeforePersist));
        }
        self.store.put_snapshot(&next.instance_id, &encode_snapshot(&next))?;
        *inst = next;
        if crash == Some(CrashPoint::AfterPersist) {
            return Err(self.crash(CrashPoint::AfterPersist));
        }
        self.release(&mut inst)
    }

    fn crash(&self, p: CrashPoint) -> EngineError {
        *self.crashed.lock().unwrap() = Some(p);
        EngineError::Crashed(p)
    }

    fn release(&self, inst: &mut WorkflowInstance) -> Result<Vec<EmittedAction>, EngineError> {
        if inst.outbox.is_empty() {
            return Ok(Vec::new());
        }
        let out = std::mem::take(&mut inst.outbox);
        self.store.put_snapshot(&inst.instance_id, &encode_snapshot(inst))?;
        Ok(out)
    }

    /// Releases actions stranded in the outbox by a crash.
    pub fn release_pending(&self, instance_id: &str) -> Result<Vec<EmittedAction>, EngineError> {
        self.check_alive()?;
        let slot = self.slot(instance_id)?;
        let mut inst = slot.lock().unwrap();
        self.release(&mut inst)
    }

    pub fn persist(&self, instance_id: &str) -> Result<(), EngineError> {
        let slot = self.slot(instance_id)?;
        let inst = slot.lock().unwrap();
        self.store.put_snapshot(instance_id, &encode_snapshot(&inst))
    }

    /// Reloads an instance from its last snapshot, replacing any in-memory copy.
    pub fn resume(&self, instance_id: &str) -> Result<WorkflowInstance, EngineError> {
        let bytes = self
            .store
            .get_snapshot(instance_id)?
            .ok_or_else(|| EngineError::SnapshotMissing(instance_id.to_string()))?;
        let inst = decode_snapshot(instance_id, &bytes)?;
        self.instances
            .lock()
            .unwrap()
            .insert(instance_id.to_string(), Arc::new(Mutex::new(inst.clone())));
        Ok(inst)
    }

    /// Copy of the live state, loading it from the store if needed.
    pub fn instance(&self, instance_id: &str) -> Result<WorkflowInstance, EngineError> {
        Ok(self.slot(instance_id)?.lock().unwrap().clone())
    }

    pub fn instance_ids(&self) -> Vec<String> {
        self.instances.lock().unwrap().keys().cloned().collect()
    }

    /// Writes every live instance to another store.
    pub fn export_to(&self, target: &dyn SnapshotStore) -> Result<(), EngineError> {
        let map = self.instances.lock().unwrap();
        for (id, slot) in map.iter() {
            let inst = slot.lock().unwrap();
            target.put_snapshot(id, &encode_snapshot(&inst))?;
            for ev in self.store.journal(id)? {
                target.append_journal(id, &ev)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use serde_json::json;

    fn ev(inst: &str, id: &str, kind: &str) -> WorkflowEvent {
        WorkflowEvent {
            event_id: id.into(),
            instance_id: inst.into(),
            kind: kind.into(),
            payload: json!({}),
            occurred_at: Utc.with_ymd_and_hms(2016, 4, 5, 9, 0, 0).unwrap(),
        }
    }

    fn chain(version: u32) -> WorkflowDefinition {
        WorkflowDefinition {
            version,
            steps: vec![
                StepDef::immediate("s1", &[], "first"),
                StepDef::on_event("s2", &["s1"], "go", "second"),
                StepDef::immediate("s3", &["s2"], "third"),
            ],
        }
    }

    #[test]
    fn newest_version_routes_new_instances() {
        let e = Engine::in_memory();
        assert!(matches!(e.start_instance(&ev("i0", "e0", "start")), Err(EngineError::NoDefinition)));
        e.register(chain(1)).unwrap();
        e.register(chain(2)).unwrap();
        assert!(matches!(e.register(chain(2)), Err(EngineError::DuplicateVersion(2))));
        let id = e.start_instance(&ev("i1", "e0", "start")).unwrap();
        assert_eq!(e.instance(&id).unwrap().definition_version, 2);
    }

    #[test]
    fn single_step_is_ready_immediately() {
        let e = Engine::in_memory();
        e.register(WorkflowDefinition { version: 1, steps: vec![StepDef::immediate("only", &[], "a")] }).unwrap();
        let id = e.start_instance(&ev("i", "e0", "start")).unwrap();
        assert_eq!(e.instance(&id).unwrap().steps_in(StepState::Ready).len(), 1);
    }

    #[test]
    fn linear_chain_runs_and_terminates() {
        let e = Engine::in_memory();
        e.register(chain(1)).unwrap();
        let id = e.start_instance(&ev("i", "e0", "start")).unwrap();
        let inst = e.instance(&id).unwrap();
        assert_eq!(inst.steps_in(StepState::Ready).into_iter().collect::<Vec<_>>(), ["s1"]);

        let a = e.dispatch(&ev("i", "e0", "start")).unwrap();
        assert_eq!(a.iter().map(|x| x.action_id.as_str()).collect::<Vec<_>>(), ["first"]);
        assert_eq!(e.instance(&id).unwrap().step_states["s2"], StepState::AwaitingEvent);

        assert!(e.dispatch(&ev("i", "e1", "unrelated")).unwrap().is_empty());
        let a = e.dispatch(&ev("i", "e2", "go")).unwrap();
        assert_eq!(a.iter().map(|x| x.action_id.as_str()).collect::<Vec<_>>(), ["second", "third"]);
        assert!(e.instance(&id).unwrap().is_terminal());
        // duplicate delivery emits nothing
        assert!(e.dispatch(&ev("i", "e2", "go")).unwrap().is_empty());
    }

    #[test]
    fn terminate_skips_remaining_steps() {
        let e = Engine::in_memory();
        e.register(chain(1)).unwrap();
        e.start_instance(&ev("i", "e0", "start")).unwrap();
        e.dispatch(&ev("i", "e0", "start")).unwrap();
        assert!(e.dispatch(&ev("i", "e1", TERMINATE_EVENT)).unwrap().is_empty());
        let inst = e.instance("i").unwrap();
        assert!(inst.is_terminal());
        assert_eq!(inst.step_states["s2"], StepState::Skipped);
        assert_eq!(inst.step_states["s1"], StepState::Done);
    }

    #[test]
    fn unknown_instance() {
        let e = Engine::in_memory();
        e.register(chain(1)).unwrap();
        assert!(matches!(e.dispatch(&ev("nope", "x", "go")), Err(EngineError::UnknownInstance(_))));
    }

    #[test]
    fn persist_resume_and_corruption() {
        let store = MemoryStore::new();
        let e = Engine::new(Arc::new(store.clone()));
        e.register(chain(1)).unwrap();
        e.start_instance(&ev("i", "e0", "start")).unwrap();
        e.dispatch(&ev("i", "e0", "start")).unwrap();
        e.persist("i").unwrap();
        let before = e.instance("i").unwrap().canonical_bytes();
        assert_eq!(e.resume("i").unwrap().canonical_bytes(), before);
        assert!(matches!(e.resume("missing"), Err(EngineError::SnapshotMissing(_))));

        store.tamper("i", |b| {
            let n = b.len();
            b[n - 2] ^= 0x01;
        });
        assert!(matches!(e.resume("i"), Err(EngineError::SnapshotCorrupt(..))));
    }

    #[test]
    fn step_functions_write_the_blackboard() {
        let e = Engine::in_memory();
        e.register(chain(1)).unwrap();
        e.register_step_fn(
            "second",
            Arc::new(|bb: &Blackboard, _ev: &WorkflowEvent| {
                let n = bb.get("n").and_then(|v| v.as_i64()).unwrap_or(0);
                Blackboard::from([("doubled".to_string(), json!(n * 2))])
            }),
        );
        e.start_instance(&ev("i", "e0", "start")).unwrap();
        e.dispatch(&ev("i", "e0", "start")).unwrap();
        let mut go = ev("i", "e1", "go");
        go.payload = json!({"n": 21});
        e.dispatch(&go).unwrap();
        assert_eq!(e.instance("i").unwrap().blackboard["doubled"], json!(42));
    }
}
