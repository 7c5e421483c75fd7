use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use meetsched_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    ms_string_free(p);
    s
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { ms_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string()
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(ms_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported_not_dereferenced() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ms_ics_parse(ptr::null(), &mut out) }, MsStatus::NullArgument);
    assert!(last_error().contains("ics"));
    assert_eq!(unsafe { ms_classifier_default(ptr::null_mut()) }, MsStatus::NullArgument);
    unsafe {
        ms_string_free(ptr::null_mut());
        ms_classifier_free(ptr::null_mut());
        ms_desk_free(ptr::null_mut());
    }
}

#[test]
fn last_error_truncates_safely() {
    let mut out = ptr::null_mut();
    let bad = c("{not json");
    assert_eq!(unsafe { ms_ics_render(bad.as_ptr(), &mut out) }, MsStatus::InvalidJson);
    let mut small = [0 as c_char; 4];
    let full = unsafe { ms_last_error(small.as_mut_ptr(), small.len()) };
    assert!(full > 3);
    assert_eq!(unsafe { CStr::from_ptr(small.as_ptr()) }.to_bytes().len(), 3);
}

#[test]
fn ics_round_trip_through_the_abi() {
    let inv = r#"{"uid":"r1-1@assistant.example","start":"2016-04-11T14:00:00Z","end":"2016-04-11T14:30:00Z",
        "summary":"Budget, review; café","organizer":"a@corp.example","attendees":["b@corp.example"],"method":"Request"}"#;
    let inv_c = c(inv);
    let mut doc = ptr::null_mut();
    assert_eq!(unsafe { ms_ics_render(inv_c.as_ptr(), &mut doc) }, MsStatus::Ok);
    let doc = unsafe { take(doc) };
    assert!(doc.starts_with("BEGIN:VCALENDAR\r\n"));
    let doc_c = c(&doc);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { ms_ics_parse(doc_c.as_ptr(), &mut back) }, MsStatus::Ok);
    let back: serde_json::Value = serde_json::from_str(&unsafe { take(back) }).unwrap();
    let want: serde_json::Value = serde_json::from_str(inv).unwrap();
    assert_eq!(back, want);
}

#[test]
fn classifier_handle_classifies() {
    let mut clf = ptr::null_mut();
    assert_eq!(unsafe { ms_classifier_default(&mut clf) }, MsStatus::Ok);
    let options = r#"[
        {"ordinal":1,"of":2,"day_name":"monday","date":"2016-04-11","hour":14,"minute":0,"zone":"-05:00"},
        {"ordinal":2,"of":2,"day_name":"tuesday","date":"2016-04-12","hour":10,"minute":0,"zone":"-05:00"}]"#;
    let (reply, opts) = (c("Monday at 2pm works for me."), c(options));
    let mut out = ptr::null_mut();
    let status = unsafe { ms_classifier_classify(clf, reply.as_ptr(), opts.as_ptr(), &mut out) };
    assert_eq!(status, MsStatus::Ok, "{}", last_error());
    let v: serde_json::Value = serde_json::from_str(&unsafe { take(out) }).unwrap();
    assert_eq!(v["selections"], serde_json::json!([true, false]), "{v}");
    let bad = c("[{}]");
    assert_eq!(unsafe { ms_classifier_classify(clf, reply.as_ptr(), bad.as_ptr(), &mut out) }, MsStatus::InvalidJson);
    unsafe { ms_classifier_free(clf) };
}

#[test]
fn simulate_then_work_the_saved_desk() {
    let dir = tempfile::tempdir().unwrap();
    let (name, path) = (c("ballot_processing"), c(dir.path().to_str().unwrap()));
    let mut metrics = ptr::null_mut();
    assert_eq!(unsafe { ms_simulate(name.as_ptr(), 7, path.as_ptr(), &mut metrics) }, MsStatus::Ok);
    let m: serde_json::Value = serde_json::from_str(&unsafe { take(metrics) }).unwrap();
    assert_eq!(m["requests"], 1);

    let state = c(dir.path().join("state").to_str().unwrap());
    let mut desk = ptr::null_mut();
    assert_eq!(unsafe { ms_desk_open(state.as_ptr(), &mut desk) }, MsStatus::Ok, "{}", last_error());
    let (worker, micro) = (c("w1"), c("micro"));
    let mut task = ptr::null_mut();
    assert_eq!(unsafe { ms_desk_claim_next(desk, worker.as_ptr(), micro.as_ptr(), &mut task) }, MsStatus::Ok);
    // every task of the finished run is done, so the queue is empty
    assert!(task.is_null());
    let rid = c("R0001");
    let mut req = ptr::null_mut();
    assert_eq!(unsafe { ms_desk_request(desk, rid.as_ptr(), &mut req) }, MsStatus::Ok);
    let req: serde_json::Value = serde_json::from_str(&unsafe { take(req) }).unwrap();
    assert_eq!(req["request_id"], "R0001");
    let (missing, bogus_tier) = (c("MT9999"), c("mega"));
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ms_desk_cant_answer(desk, missing.as_ptr(), worker.as_ptr(), &mut out) }, MsStatus::NotFound);
    assert_eq!(unsafe { ms_desk_claim_next(desk, worker.as_ptr(), bogus_tier.as_ptr(), &mut out) }, MsStatus::Invalid);
    unsafe { ms_desk_free(desk) };

    let nowhere = c(dir.path().join("absent").to_str().unwrap());
    assert_eq!(unsafe { ms_desk_open(nowhere.as_ptr(), &mut desk) }, MsStatus::NotFound);
}

#[test]
fn checks_are_reachable() {
    let (good, bad) = (c("ics-round-trip"), c("no-such-check"));
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ms_check(good.as_ptr(), &mut out) }, MsStatus::Ok);
    let report: serde_json::Value = serde_json::from_str(&unsafe { take(out) }).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(unsafe { ms_check(bad.as_ptr(), &mut out) }, MsStatus::NotFound);
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("meetsched.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for f in [
        "ms_version", "ms_last_error", "ms_string_free", "ms_classifier_default", "ms_classifier_from_json",
        "ms_classifier_classify", "ms_classifier_free", "ms_desk_open", "ms_desk_claim_next", "ms_desk_submit",
        "ms_desk_cant_answer", "ms_desk_macro_action", "ms_desk_request", "ms_desk_free", "ms_simulate",
        "ms_ics_render", "ms_ics_parse", "ms_check",
    ] {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(h.contains("typedef struct MsDesk MsDesk;"));
    assert!(h.contains("MS_STATUS_OK = 0"));
}

/// Builds and runs a small C program against the header and the shared
/// library when a C compiler is available.
#[test]
fn c_program_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok()) else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let target_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = target_dir.join("libmeetsched_ffi.so");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "meetsched.h"
int main(void) {
    char *out = NULL;
    if (ms_ics_parse(NULL, &out) != MS_STATUS_NULL_ARGUMENT) return 1;
    char err[64];
    if (ms_last_error(err, sizeof err) == 0) return 2;
    MsClassifier *clf = NULL;
    if (ms_classifier_default(&clf) != MS_STATUS_OK || clf == NULL) return 3;
    ms_classifier_free(clf);
    if (ms_check("ics-round-trip", &out) != MS_STATUS_OK) return 4;
    if (strstr(out, "\"passed\":true") == NULL) return 5;
    ms_string_free(out);
    printf("%s\n", ms_version());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg("-L")
        .arg(target_dir)
        .arg("-lmeetsched_ffi")
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&bin).env("LD_LIBRARY_PATH", target_dir).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
