use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use parley_core::domain::load_domain_config_file;
use parley_core::engine::{init_session, Decision, Engine, Event, SessionSettings};
use parley_gateway::{router, Gateway};
use serde_json::{json, Value};
use tower::ServiceExt;

const STAFFING: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/staffing.json");

fn gateway() -> Arc<Gateway> {
    Arc::new(Gateway::new(Engine::default(), [load_domain_config_file(STAFFING).unwrap()]))
}

async fn call(g: &Arc<Gateway>, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = router(g.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn reply(field: &str) -> &'static str {
    match field {
        "primary_constraint" => "Work authorization. I need H-1B sponsorship.",
        "timezone" => "Yes, 6-hour overlap works.",
        "skills" | "seniority" => "8 years, Python and React.",
        "start_date" => "January.",
        "contract_type" => "Permanent.",
        "compensation" => "$90K to $110K.",
        "interview_availability" => "I can interview this week, Tuesday afternoon works.",
        "references" => "References are available on request.",
        "background_check" => "I'm happy to complete a background check.",
        other => panic!("no reply for {other}"),
    }
}

fn asks(step: &Value) -> Option<String> {
    step["actions"].as_array()?.iter().find_map(|a| a["asks"].as_str().map(str::to_string))
}

/// Create a staffing session and screen it until the $105K ask escalates.
async fn to_escalation(g: &Arc<Gateway>, id: &str) -> Value {
    let (st, mut step) = call(g, Method::POST, "/sessions", Some(json!({"domain_id": "staffing_senior_developer", "session_id": id}))).await;
    assert_eq!(st, StatusCode::OK, "{step}");
    for _ in 0..15 {
        if step["session"]["state"] == "NEGOTIATE" {
            break;
        }
        let field = asks(&step).expect("screening asks a question");
        let body = json!({"event": "counterparty_message", "text": reply(&field)});
        let (st, next) = call(g, Method::POST, &format!("/sessions/{id}/events"), Some(body)).await;
        assert_eq!(st, StatusCode::OK, "{next}");
        step = next;
    }
    assert_eq!(step["session"]["state"], "NEGOTIATE");
    let body = json!({"event": "counterparty_message", "text": "I'd prefer $105K given my 8 years of experience."});
    let (st, step) = call(g, Method::POST, &format!("/sessions/{id}/events"), Some(body)).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(step["session"]["state"], "ESCALATE");
    step
}

#[tokio::test]
async fn empty_store_lists_nothing() {
    let g = gateway();
    let (st, v) = call(&g, Method::GET, "/sessions", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v, json!([]));
}

#[tokio::test]
async fn escalation_payload_offers_three_options_and_approve_b_resumes() {
    let g = gateway();
    let step = to_escalation(&g, "w").await;
    let seq = step["session"]["pending_escalation"]["escalation_seq"].as_u64().unwrap();

    let (st, p) = call(&g, Method::GET, "/sessions/w/escalation", None).await;
    assert_eq!(st, StatusCode::OK);
    let ids: Vec<_> = p["options"].as_array().unwrap().iter().map(|o| o["option_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["A", "B", "C"]);
    assert_eq!(p["trigger"], "boundary_violation");

    let decision = json!({"decision": "approve", "option_id": "B", "escalation_seq": seq});
    let (st, v) = call(&g, Method::POST, "/sessions/w/decision", Some(decision.clone())).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["session"]["state"], "NEGOTIATE");

    let (st, err) = call(&g, Method::POST, "/sessions/w/decision", Some(decision)).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(err["code"], "CONFLICT");
    let decisions = |a: &Value| a.as_array().unwrap().iter().filter(|e| e["kind"] == "principal_decision").count();
    let (_, audit) = call(&g, Method::GET, "/sessions/w/audit?from=1", None).await;
    assert_eq!(decisions(&audit), 1);

    let (st, err) = call(&g, Method::GET, "/sessions/w/escalation", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "NOT_FOUND");
}

#[tokio::test]
async fn unknown_option_is_invalid_and_leaves_escalation_pending() {
    let g = gateway();
    to_escalation(&g, "z").await;
    let (st, err) = call(&g, Method::POST, "/sessions/z/decision", Some(json!({"decision": "approve", "option_id": "Z"}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "INVALID");
    let (_, s) = call(&g, Method::GET, "/sessions/z", None).await;
    assert_eq!(s["state"], "ESCALATE");
}

#[tokio::test]
async fn decline_via_c_is_terminal_and_refuses_feedback() {
    let g = gateway();
    to_escalation(&g, "c").await;
    let (st, v) = call(&g, Method::POST, "/sessions/c/decision", Some(json!({"decision": "approve", "option_id": "C"}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["session"]["state"], "NO_DEAL");
    assert_eq!(v["session"]["terminal"], true);

    let (st, err) = call(&g, Method::POST, "/sessions/c/feedback", Some(json!({"text": "Never offer relocation assistance"}))).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(err["code"], "TERMINAL");
    let (_, err) = call(&g, Method::GET, "/sessions/c/escalation", None).await;
    assert_eq!(err["code"], "TERMINAL");
    let (_, list) = call(&g, Method::GET, "/sessions", None).await;
    assert_eq!(list[0]["terminal"], true);
}

#[tokio::test]
async fn feedback_is_stored_and_audited() {
    let g = gateway();
    call(&g, Method::POST, "/sessions", Some(json!({"domain_id": "staffing_senior_developer", "session_id": "f"}))).await;
    let (st, ack) = call(&g, Method::POST, "/sessions/f/feedback", Some(json!({"text": "Never offer relocation assistance"}))).await;
    assert_eq!(st, StatusCode::OK, "{ack}");
    let seq = ack["seq"].as_u64().unwrap();
    let (_, tail) = call(&g, Method::GET, &format!("/sessions/f/audit?from={seq}"), None).await;
    assert_eq!(tail.as_array().unwrap().len(), 1);
    assert_eq!(tail[0]["kind"], "human_override");
    assert_eq!(tail[0]["payload"]["item"]["channel"], "human");
    assert!(tail[0]["timestamp"].is_string());

    let (st, err) = call(&g, Method::POST, "/sessions/f/feedback", Some(json!({"text": "   "}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "INVALID");
}

#[tokio::test]
async fn audit_reads() {
    let g = gateway();
    let (_, created) = call(&g, Method::POST, "/sessions", Some(json!({"domain_id": "staffing_senior_developer"}))).await;
    let id = created["session"]["session_id"].as_str().unwrap().to_string();
    let (_, full) = call(&g, Method::GET, &format!("/sessions/{id}/audit?from=1"), None).await;
    let (_, default) = call(&g, Method::GET, &format!("/sessions/{id}/audit"), None).await;
    assert_eq!(full, default);
    let n = full.as_array().unwrap().len();
    assert_eq!(full[0]["seq"], 1);
    assert_eq!(full[n - 1]["seq"].as_u64(), created["session"]["last_seq"].as_u64());
    let (st, beyond) = call(&g, Method::GET, &format!("/sessions/{id}/audit?from={}", n + 10), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(beyond, json!([]));
    let (st, err) = call(&g, Method::GET, "/sessions/nope/audit?from=1", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "NOT_FOUND");
}

#[tokio::test]
async fn bad_requests_carry_codes() {
    let g = gateway();
    let (st, err) = call(&g, Method::POST, "/sessions", Some(json!({"domain_id": "unknown"}))).await;
    assert_eq!((st, err["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("INVALID")));
    call(&g, Method::POST, "/sessions", Some(json!({"domain_id": "staffing_senior_developer", "session_id": "d"}))).await;
    let (st, err) = call(&g, Method::POST, "/sessions", Some(json!({"domain_id": "staffing_senior_developer", "session_id": "d"}))).await;
    assert_eq!((st, err["code"].as_str()), (StatusCode::CONFLICT, Some("CONFLICT")));
    let (_, err) = call(&g, Method::POST, "/sessions/d/decision", Some(json!({"decision": "decline"}))).await;
    assert_eq!(err["code"], "CONFLICT");
    let (_, err) = call(&g, Method::POST, "/sessions/d/events", Some(json!({"event": "principal_decision", "decision": "decline"}))).await;
    assert_eq!(err["code"], "INVALID");
    let (_, err) = call(&g, Method::POST, "/sessions/d/events", Some(json!({"nonsense": 1}))).await;
    assert_eq!(err["code"], "INVALID");
    let (_, err) = call(&g, Method::GET, "/sessions/d/escalation", None).await;
    assert_eq!(err["code"], "NOT_FOUND");
}

/// The API adds nothing unaudited: the same inputs in-process give the
/// same trail.
#[tokio::test]
async fn api_trail_matches_in_process_trail() {
    let g = gateway();
    to_escalation(&g, "p").await;
    call(&g, Method::POST, "/sessions/p/feedback", Some(json!({"text": "Keep it friendly"}))).await;
    call(&g, Method::POST, "/sessions/p/decision", Some(json!({"decision": "approve", "option_id": "B"}))).await;
    let (_, api_trail) = call(&g, Method::GET, "/sessions/p/audit", None).await;

    let engine = Engine::default();
    let config = Arc::new(load_domain_config_file(STAFFING).unwrap());
    let mut s = init_session(config, "p", BTreeMap::new(), SessionSettings::default());
    let mut out = serde_json::to_value(json!({"actions": engine.open(&mut s).unwrap()})).unwrap();
    while s.state.as_str() != "NEGOTIATE" {
        let field = asks(&out).unwrap();
        out = json!({"actions": engine.step(&mut s, Event::say(reply(&field))).unwrap()});
    }
    engine.step(&mut s, Event::say("I'd prefer $105K given my 8 years of experience.")).unwrap();
    engine.add_feedback(&mut s, serde_json::from_value(json!({"text": "Keep it friendly"})).unwrap()).unwrap();
    engine.step(&mut s, Event::PrincipalDecision(Decision::Approve { option_id: "B".into() })).unwrap();
    assert_eq!(api_trail, serde_json::to_value(s.audit.events()).unwrap());
}

#[tokio::test]
async fn racing_duplicate_decisions_apply_once() {
    let g = gateway();
    let step = to_escalation(&g, "r").await;
    let seq = step["session"]["pending_escalation"]["escalation_seq"].as_u64().unwrap();
    let ok: usize = std::thread::scope(|sc| {
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let g = g.clone();
                sc.spawn(move || {
                    let req = serde_json::from_value(json!({"decision": "approve", "option_id": "B", "escalation_seq": seq})).unwrap();
                    g.decide("r", req).is_ok()
                })
            })
            .collect();
        handles.into_iter().map(|h| usize::from(h.join().unwrap())).sum()
    });
    assert_eq!(ok, 1);
    let trail = g.audit("r", 1).unwrap();
    assert_eq!(trail.iter().filter(|e| e.kind == parley_core::engine::AuditKind::PrincipalDecision).count(), 1);
}
