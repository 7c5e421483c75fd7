use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use meetsched::calendar::{CalendarAccount, CalendarStore};
use meetsched::clock::SimClock;
use meetsched::mailroom::EmailMessage;
use meetsched::taskboard::http::router;
use meetsched::workflow::{Agent, AgentConfig, Desk};

const ORGANIZER: &str = "alice@corp.example";

fn desk() -> Desk {
    let t0 = Utc.with_ymd_and_hms(2016, 4, 4, 14, 0, 0).unwrap();
    let mut cals = CalendarStore::new();
    let mut acct = CalendarAccount::new(ORGANIZER);
    acct.timezone = "-05:00".into();
    cals.insert(acct);
    let mut agent = Agent::new(AgentConfig::default(), cals);
    agent.register_address("bob@partner.example");
    let msg = EmailMessage {
        message_id: "<req1@corp.example>".into(),
        in_reply_to: None,
        references: vec![],
        from_addr: ORGANIZER.into(),
        to_addrs: vec!["bob@partner.example".into()],
        cc_addrs: vec!["cal@assistant.example".into()],
        subject: "Sync".into(),
        body: "Cal, please find 30 minutes for us next week.".into(),
        sent_at: t0,
        attachments: vec![],
    };
    agent.receive(msg, t0).unwrap();
    Desk::new(agent, Arc::new(SimClock::new(t0)), None)
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned())) };
    (status, v)
}

#[tokio::test]
async fn claim_submit_and_conflicts() {
    let app = router(Arc::new(desk()));
    let (s, task) = call(&app, "GET", "/api/tasks/next?tier=micro&worker=w1", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(task["kind"]["type"], "classify_intent");
    assert_eq!(task["status"]["worker"], "w1");
    // micro payloads show the single originating email and nothing else
    assert!(task["payload"]["email"].is_object());
    assert!(task["payload"]["calendar"].is_null());
    let id = task["task_id"].as_str().unwrap().to_string();

    // exclusive claim: nothing left for a second worker
    let (s, _) = call(&app, "GET", "/api/tasks/next?tier=micro&worker=w2", None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);

    let answer = json!({ "worker": "w2", "output": { "type": "intent", "label": { "type": "new_meeting" } } });
    let (s, err) = call(&app, "POST", &format!("/api/tasks/{id}/submit"), Some(answer)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(err["error"]["error"], "NotClaimant");

    let wrong = json!({ "worker": "w1", "output": { "type": "selections", "selections": [true] } });
    let (s, _) = call(&app, "POST", &format!("/api/tasks/{id}/submit"), Some(wrong)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let answer = json!({ "worker": "w1", "output": { "type": "intent", "label": { "type": "new_meeting" } } });
    let (s, done) = call(&app, "POST", &format!("/api/tasks/{id}/submit"), Some(answer.clone())).await;
    assert_eq!(s, StatusCode::OK, "{done}");
    assert_eq!(done["status"]["state"], "done");
    let (s, _) = call(&app, "POST", &format!("/api/tasks/{id}/submit"), Some(answer)).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, shown) = call(&app, "GET", &format!("/api/tasks/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(shown["task_id"], id);
    let (s, _) = call(&app, "GET", "/api/tasks/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn cant_answer_opens_a_macrotask_and_experts_act() {
    let app = router(Arc::new(desk()));
    let (_, task) = call(&app, "GET", "/api/tasks/next?tier=micro&worker=w1", None).await;
    let id = task["task_id"].as_str().unwrap();
    let (s, receipt) = call(&app, "POST", &format!("/api/tasks/{id}/cant-answer"), Some(json!({ "worker": "w1" }))).await;
    assert_eq!(s, StatusCode::OK, "{receipt}");
    let macro_id = receipt["macrotask_id"].as_str().unwrap().to_string();

    // the micro queue never hands out macrotasks
    let (s, _) = call(&app, "GET", "/api/tasks/next?tier=micro&worker=w1", None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, mt) = call(&app, "GET", "/api/tasks/next?tier=macro&worker=x1", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(mt["task_id"], macro_id);
    assert!(!mt["payload"]["thread"].as_array().unwrap().is_empty());
    assert!(mt["payload"]["email"].is_null());

    let push = json!({ "worker": "x1", "action": { "type": "push_back", "delay_minutes": 120 } });
    let (s, back) = call(&app, "POST", &format!("/api/tasks/{macro_id}/macro-action"), Some(push)).await;
    assert_eq!(s, StatusCode::OK, "{back}");
    assert_eq!(back["status"]["state"], "returned");
    // pushed back tasks stay out of the queue until the delay passes
    let (s, _) = call(&app, "GET", "/api/tasks/next?tier=macro&worker=x2", None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let app = router(Arc::new(desk()));
    let (s, _) = call(&app, "GET", "/api/tasks/next?tier=mega&worker=w1", None).await;
    assert!(s.is_client_error());
    let (s, _) = call(&app, "GET", "/api/tasks/next?tier=micro", None).await;
    assert!(s.is_client_error());
    let (_, task) = call(&app, "GET", "/api/tasks/next?tier=micro&worker=w1", None).await;
    let id = task["task_id"].as_str().unwrap();
    let (s, _) = call(&app, "POST", &format!("/api/tasks/{id}/submit"), Some(json!({ "worker": "w1" }))).await;
    assert!(s.is_client_error());
    let act = json!({ "worker": "w1", "action": { "type": "cancel", "reason": "x" } });
    let (s, err) = call(&app, "POST", &format!("/api/tasks/{id}/macro-action"), Some(act)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{err}");
}
