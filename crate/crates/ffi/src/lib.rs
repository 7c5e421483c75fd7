//! C ABI for the scheduling agent.
//!
//! Conventions:
//! * Every function returns an [`MsStatus`]; results come back through out
//!   pointers.
//! * Handles are opaque and must be released with their `_free` function.
//! * Strings passed in are NUL-terminated UTF-8. Strings handed out are
//!   owned by the caller and released with [`ms_string_free`].
//! * Structured values cross the boundary as JSON text.
//! * After a non-OK status, [`ms_last_error`] describes the failure on the
//!   calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use meetsched::checks::{self, Criterion};
use meetsched::clock::RebasedClock;
use meetsched::mailroom::{parse_invitation, render_invitation, Invitation};
use meetsched::sim::{self, WorkerMode};
use meetsched::taskboard::{MacroAction, TaskApi, TaskError, TaskOutput, Tier};
use meetsched::tier1::{default_classifier, BallotClassifier, OptionAttrs};
use meetsched::workflow::{Agent, Desk};

/// Result of every exported call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    NotFound = 4,
    Conflict = 5,
    Invalid = 6,
    Io = 7,
    CheckFailed = 8,
    Internal = 9,
}

/// Trained ballot-response classifier.
pub struct MsClassifier {
    inner: BallotClassifier,
}

/// Worker view of a saved agent: claim, answer and act on tasks.
pub struct MsDesk {
    inner: Desk,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Fail(MsStatus, String);

impl Fail {
    fn new(status: MsStatus, msg: impl std::fmt::Display) -> Self {
        Fail(status, msg.to_string())
    }
}

impl From<TaskError> for Fail {
    fn from(e: TaskError) -> Self {
        let status = match e {
            TaskError::UnknownTask(_) => MsStatus::NotFound,
            TaskError::NotClaimant { .. } | TaskError::AlreadyTerminal(_) => MsStatus::Conflict,
            TaskError::Internal(_) => MsStatus::Internal,
            _ => MsStatus::Invalid,
        };
        Fail::new(status, e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MsStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(MsStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::new(MsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn json<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> Result<T, Fail> {
    serde_json::from_str(s).map_err(|e| Fail::new(MsStatus::InvalidJson, format!("{what}: {e}")))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::new(MsStatus::NullArgument, "out is null"));
    }
    let c = CString::new(s).map_err(|_| Fail::new(MsStatus::Internal, "output contains NUL"))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn put_json<T: serde::Serialize>(out: *mut *mut c_char, v: &T) -> Result<(), Fail> {
    let s = serde_json::to_string(v).map_err(|e| Fail::new(MsStatus::Internal, e))?;
    put_string(out, s)
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (always
/// NUL-terminated when `len > 0`) and returns the full message length.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn ms_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ms_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---- classifier

/// The classifier trained on the bundled synthetic corpus.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_classifier_default(out: *mut *mut MsClassifier) -> MsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::new(MsStatus::NullArgument, "out is null"));
        }
        *out = Box::into_raw(Box::new(MsClassifier { inner: default_classifier().clone() }));
        Ok(())
    })
}

/// Loads a model saved by `meetsched train-classifier`.
///
/// # Safety
/// `model_json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_classifier_from_json(model_json: *const c_char, out: *mut *mut MsClassifier) -> MsStatus {
    guard(|| {
        let s = text(model_json, "model_json")?;
        if out.is_null() {
            return Err(Fail::new(MsStatus::NullArgument, "out is null"));
        }
        let inner = BallotClassifier::from_json(s).map_err(|e| Fail::new(MsStatus::InvalidJson, e))?;
        *out = Box::into_raw(Box::new(MsClassifier { inner }));
        Ok(())
    })
}

/// Classifies a ballot reply against a JSON array of options. Writes the
/// decision (per-option probabilities and selections) as JSON.
///
/// # Safety
/// `clf` must be a live handle; string arguments NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_classifier_classify(
    clf: *const MsClassifier,
    response: *const c_char,
    options_json: *const c_char,
    out: *mut *mut c_char,
) -> MsStatus {
    guard(|| {
        let clf = clf.as_ref().ok_or_else(|| Fail::new(MsStatus::NullArgument, "classifier is null"))?;
        let response = text(response, "response")?;
        let options: Vec<OptionAttrs> = json(text(options_json, "options_json")?, "options_json")?;
        let decision =
            clf.inner.classify_response(response, &options).map_err(|e| Fail::new(MsStatus::Invalid, e))?;
        put_json(out, &serde_json::json!({ "selections": decision.selections(), "confident": decision.confident(), "decision": decision }))
    })
}

/// # Safety
/// `clf` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ms_classifier_free(clf: *mut MsClassifier) {
    if !clf.is_null() {
        drop(Box::from_raw(clf));
    }
}

// ---- desk

/// Opens a state directory written by `meetsched simulate` or `serve`.
/// Changes made through the handle are saved back to it.
///
/// # Safety
/// `state_dir` must be NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_desk_open(state_dir: *const c_char, out: *mut *mut MsDesk) -> MsStatus {
    guard(|| {
        let dir = Path::new(text(state_dir, "state_dir")?);
        if out.is_null() {
            return Err(Fail::new(MsStatus::NullArgument, "out is null"));
        }
        if !dir.join("agent.json").exists() {
            return Err(Fail::new(MsStatus::NotFound, format!("no saved state in {}", dir.display())));
        }
        let agent = Agent::load(dir).map_err(|e| Fail::new(MsStatus::Io, e))?;
        let base = agent.mailroom().transcript().iter().map(|m| m.sent_at).max().unwrap_or_else(chrono_now);
        let desk = Desk::new(agent, Arc::new(RebasedClock::new(base)), Some(dir.to_path_buf()));
        *out = Box::into_raw(Box::new(MsDesk { inner: desk }));
        Ok(())
    })
}

fn chrono_now() -> meetsched::Timestamp {
    use meetsched::clock::{Clock, SystemClock};
    SystemClock.now()
}

fn tier(s: &str) -> Result<Tier, Fail> {
    s.parse().map_err(|e: String| Fail::new(MsStatus::Invalid, e))
}

/// Claims the next task of `tier` ("micro" or "macro"). Writes the task as
/// JSON, or null when the queue is empty.
///
/// # Safety
/// `desk` must be a live handle; strings NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_desk_claim_next(
    desk: *const MsDesk,
    worker: *const c_char,
    tier_name: *const c_char,
    out: *mut *mut c_char,
) -> MsStatus {
    guard(|| {
        let desk = desk.as_ref().ok_or_else(|| Fail::new(MsStatus::NullArgument, "desk is null"))?;
        let worker = text(worker, "worker")?;
        let t = tier(text(tier_name, "tier")?)?;
        match desk.inner.claim_next(worker, t)? {
            Some(task) => put_json(out, &task),
            None => {
                if out.is_null() {
                    return Err(Fail::new(MsStatus::NullArgument, "out is null"));
                }
                *out = ptr::null_mut();
                Ok(())
            }
        }
    })
}

/// Submits a microtask answer (`TaskOutput` JSON).
///
/// # Safety
/// `desk` must be a live handle; strings NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_desk_submit(
    desk: *const MsDesk,
    task_id: *const c_char,
    worker: *const c_char,
    output_json: *const c_char,
    out: *mut *mut c_char,
) -> MsStatus {
    guard(|| {
        let desk = desk.as_ref().ok_or_else(|| Fail::new(MsStatus::NullArgument, "desk is null"))?;
        let output: TaskOutput = json(text(output_json, "output_json")?, "output_json")?;
        let task = desk.inner.submit(text(task_id, "task_id")?, text(worker, "worker")?, output)?;
        put_json(out, &task)
    })
}

/// Presses "I can't answer" on a claimed microtask.
///
/// # Safety
/// `desk` must be a live handle; strings NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_desk_cant_answer(
    desk: *const MsDesk,
    task_id: *const c_char,
    worker: *const c_char,
    out: *mut *mut c_char,
) -> MsStatus {
    guard(|| {
        let desk = desk.as_ref().ok_or_else(|| Fail::new(MsStatus::NullArgument, "desk is null"))?;
        let receipt = desk.inner.cant_answer(text(task_id, "task_id")?, text(worker, "worker")?)?;
        put_json(out, &receipt)
    })
}

/// Executes an expert action (`MacroAction` JSON) on a claimed macrotask.
///
/// # Safety
/// `desk` must be a live handle; strings NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_desk_macro_action(
    desk: *const MsDesk,
    task_id: *const c_char,
    worker: *const c_char,
    action_json: *const c_char,
    out: *mut *mut c_char,
) -> MsStatus {
    guard(|| {
        let desk = desk.as_ref().ok_or_else(|| Fail::new(MsStatus::NullArgument, "desk is null"))?;
        let action: MacroAction = json(text(action_json, "action_json")?, "action_json")?;
        let task = desk.inner.macro_action(text(task_id, "task_id")?, text(worker, "worker")?, action)?;
        put_json(out, &task)
    })
}

/// Writes one request (state, escalations, invitation) as JSON.
///
/// # Safety
/// `desk` must be a live handle; strings NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_desk_request(desk: *const MsDesk, request_id: *const c_char, out: *mut *mut c_char) -> MsStatus {
    guard(|| {
        let desk = desk.as_ref().ok_or_else(|| Fail::new(MsStatus::NullArgument, "desk is null"))?;
        let rid = text(request_id, "request_id")?;
        let agent = desk.inner.lock();
        let req = agent.request(rid).ok_or_else(|| Fail::new(MsStatus::NotFound, format!("unknown request {rid}")))?;
        put_json(out, req)
    })
}

/// # Safety
/// `desk` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ms_desk_free(desk: *mut MsDesk) {
    if !desk.is_null() {
        drop(Box::from_raw(desk));
    }
}

// ---- one-shot operations

/// Runs a catalog scenario with scripted workers; writes the run metrics as
/// JSON. When `out_dir` is non-null the run's files are exported there.
///
/// # Safety
/// `scenario` must be NUL-terminated; `out_dir` NUL-terminated or null; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_simulate(
    scenario: *const c_char,
    seed: u64,
    out_dir: *const c_char,
    out: *mut *mut c_char,
) -> MsStatus {
    guard(|| {
        let cfg = sim::resolve(text(scenario, "scenario")?, seed).map_err(|e| Fail::new(MsStatus::Invalid, e))?;
        let run = sim::run(&cfg, WorkerMode::Scripted).map_err(|e| Fail::new(MsStatus::Internal, e))?;
        if !out_dir.is_null() {
            run.export(Path::new(text(out_dir, "out_dir")?)).map_err(|e| Fail::new(MsStatus::Io, e))?;
        }
        put_json(out, &run.metrics)
    })
}

/// Renders an `Invitation` (JSON) as an iCalendar document.
///
/// # Safety
/// `invitation_json` must be NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_ics_render(invitation_json: *const c_char, out: *mut *mut c_char) -> MsStatus {
    guard(|| {
        let inv: Invitation = json(text(invitation_json, "invitation_json")?, "invitation_json")?;
        let doc = render_invitation(&inv).map_err(|e| Fail::new(MsStatus::Invalid, e))?;
        put_string(out, doc)
    })
}

/// Parses an iCalendar document into `Invitation` JSON.
///
/// # Safety
/// `ics` must be NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_ics_parse(ics: *const c_char, out: *mut *mut c_char) -> MsStatus {
    guard(|| {
        let inv = parse_invitation(text(ics, "ics")?).map_err(|e| Fail::new(MsStatus::Invalid, e))?;
        put_json(out, &inv)
    })
}

/// Runs one acceptance check by name (as accepted by `meetsched check`).
/// The report is written even when the check fails, in which case the
/// status is `CheckFailed`.
///
/// # Safety
/// `name` must be NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_check(name: *const c_char, out: *mut *mut c_char) -> MsStatus {
    guard(|| {
        let name = text(name, "name")?;
        let c = Criterion::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Fail::new(MsStatus::NotFound, format!("unknown check {name}")))?;
        let report = checks::run(c);
        put_json(out, &report)?;
        if report.passed {
            Ok(())
        } else {
            Err(Fail::new(MsStatus::CheckFailed, format!("check {name} failed")))
        }
    })
}
