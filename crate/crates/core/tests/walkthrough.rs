use std::collections::BTreeMap;
use std::sync::Arc;

use parley_core::domain::{load_domain_config_file, DomainConfig};
use parley_core::engine::{
    init_session, restore, snapshot, Action, AuditKind, Decision, Delivery, Engine, EngineError, Event, ProtocolState, Session,
    SessionSettings,
};
use parley_core::safety::{OptionEffect, Trigger};

const STAFFING: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/staffing.json");

fn config() -> Arc<DomainConfig> {
    Arc::new(load_domain_config_file(STAFFING).expect("staffing fixture loads"))
}

fn session() -> Session {
    init_session(config(), "walkthrough", BTreeMap::new(), SessionSettings::default())
}

fn sent(actions: &[Action]) -> Vec<String> {
    actions
        .iter()
        .filter_map(|a| match a {
            Action::Send { message, .. } => Some(message.text.clone()),
            _ => None,
        })
        .collect()
}

fn asked(actions: &[Action]) -> Option<String> {
    actions.iter().find_map(|a| match a {
        Action::Send { asks, .. } => asks.clone(),
        _ => None,
    })
}

/// Candidate replies keyed by the field the delegate asks about.
fn reply(field: &str) -> &'static str {
    match field {
        "primary_constraint" => "Work authorization\u{2014}I need H-1B sponsorship.",
        "timezone" => "Yes, 6-hour overlap works.",
        "skills" | "seniority" => "8 years, Python and React.",
        "start_date" => "January.",
        "contract_type" => "Permanent.",
        "compensation" => "$90K\u{2013}$110K.",
        "interview_availability" => "I can interview this week, Tuesday afternoon works.",
        "references" => "References are available on request.",
        "background_check" => "I'm happy to complete a background check.",
        other => panic!("no reply for {other}"),
    }
}

/// Drive the dialogue until the first escalation; returns the session and
/// the revealed count at which NEGOTIATE was entered.
fn run_to_boundary(engine: &Engine) -> (Session, Vec<String>) {
    let mut s = session();
    let mut out = engine.open(&mut s).unwrap();
    let mut transcript = sent(&out);
    let mut asked_about = asked(&out);
    let mut guard = 0;
    while s.state != ProtocolState::Negotiate {
        let field = asked_about.clone().expect("delegate asks a question while screening");
        out = engine.step(&mut s, Event::say(reply(&field))).unwrap();
        transcript.extend(sent(&out));
        asked_about = asked(&out);
        guard += 1;
        assert!(guard < 15, "screening did not converge");
    }
    out = engine.step(&mut s, Event::say("I'd prefer $105K given my 8 years of experience.")).unwrap();
    transcript.extend(sent(&out));
    assert_eq!(out.last(), Some(&Action::AwaitPrincipal { trigger: Trigger::BoundaryViolation }));
    (s, transcript)
}

fn gate_transition(s: &Session) -> serde_json::Value {
    s.audit
        .events()
        .iter()
        .find(|e| e.kind == AuditKind::Transition && e.payload["to"] == "NEGOTIATE")
        .expect("negotiate entered")
        .payload
        .clone()
}

#[test]
fn screening_follows_the_walkthrough_order() {
    let engine = Engine::default();
    let (s, transcript) = run_to_boundary(&engine);
    assert!(transcript[0].starts_with("Which constraint most shapes fit for this role? {Work authorization,"));
    let asks: Vec<String> = s
        .audit
        .events()
        .iter()
        .filter(|e| e.kind == AuditKind::Message && e.payload["speaker"] == "delegate")
        .filter_map(|e| e.payload["asks"].as_str().map(String::from))
        .collect();
    assert_eq!(asks, ["primary_constraint", "timezone", "skills", "start_date", "contract_type", "compensation"]);
}

#[test]
fn gate_crosses_at_eight_of_eleven() {
    let (s, _) = run_to_boundary(&Engine::default());
    let t = gate_transition(&s);
    assert_eq!(t["revealed_count"], 8);
    assert_eq!(t["required"], 11);
    assert!((t["tci"].as_f64().unwrap() - 8.0 / 11.0).abs() < 1e-12);
    // One fewer reveal never crossed the gate.
    let before: Vec<f64> = s
        .audit
        .events()
        .iter()
        .filter(|e| e.kind == AuditKind::TciUpdate)
        .map(|e| e.payload["tci"].as_f64().unwrap())
        .take_while(|t| *t < 0.7)
        .collect();
    assert!((before.last().unwrap() - 7.0 / 11.0).abs() < 1e-12);
}

#[test]
fn opening_offer_is_clean_and_inside_the_band() {
    let (s, _) = run_to_boundary(&Engine::default());
    let offer = s
        .audit
        .events()
        .iter()
        .find(|e| e.kind == AuditKind::Message && e.payload["intent"]["compensation"].is_object())
        .unwrap();
    assert_eq!(offer.payload["delivery"], "clean");
    assert_eq!(offer.payload["intent"]["compensation"]["min"], 90000.0);
    assert_eq!(offer.payload["intent"]["compensation"]["max"], 100000.0);
    assert_eq!(
        offer.payload["text"],
        "Based on what you've shared, we're exploring a $90K\u{2013}$100K range, subject to approval."
    );
}

#[test]
fn counteroffer_escalates_with_three_options() {
    let (s, _) = run_to_boundary(&Engine::default());
    assert_eq!(s.state, ProtocolState::Escalate);
    let p = &s.pending_escalation.as_ref().unwrap().payload;
    assert_eq!(p.trigger, Trigger::BoundaryViolation);
    let ids: Vec<&str> = p.options.iter().map(|o| o.option_id.as_str()).collect();
    assert_eq!(ids, ["A", "B", "C"]);
    assert_eq!(p.options[0].label, "Counter at $100K (top of approved band)");
    assert_eq!(p.options[1].label, "Request budget increase to $105K");
    assert_eq!(p.boundary_at_risk, "Counterparty requests $105K, approved band $80K\u{2013}$100K");
    assert_eq!(p.tci_ledger.revealed_count, 8);
    assert_eq!(p.tci_ledger.missing, ["interview_availability", "references", "background_check"]);
    assert!(p.approval_request.contains("A, B, or C"));
    match &p.options[1].effect {
        OptionEffect::ExtendBoundary { min_value, max_value, .. } => {
            assert_eq!((*min_value, *max_value), (80000.0, 105000.0));
        }
        e => panic!("unexpected effect {e:?}"),
    }
    // The binding reply was never delivered.
    assert!(s.history.iter().all(|m| !m.text.contains("We agree to")));
}

#[test]
fn approving_b_resumes_and_closes_with_final_approval() {
    let engine = Engine::default();
    let (mut s, _) = run_to_boundary(&engine);
    let out = engine.step(&mut s, Event::PrincipalDecision(Decision::Approve { option_id: "B".into() })).unwrap();
    assert_eq!(s.state, ProtocolState::Negotiate);
    match &out[0] {
        Action::Send { message, delivery, .. } => {
            assert_eq!(message.text, "We're open to discussing $105K, subject to approval.");
            assert_eq!(*delivery, Delivery::Rewritten);
        }
        a => panic!("unexpected {a:?}"),
    }
    assert!(s.feedback.human().any(|i| i.text.contains("$80K\u{2013}$105K")));

    let mut out = engine.step(&mut s, Event::say("$105K works for me.")).unwrap();
    let mut guard = 0;
    while s.state == ProtocolState::Negotiate {
        let field = asked(&out).expect("delegate asks about the remaining fields");
        out = engine.step(&mut s, Event::say(reply(&field))).unwrap();
        guard += 1;
        assert!(guard < 6);
    }
    assert_eq!(s.state, ProtocolState::Escalate);
    assert_eq!(s.pending_escalation.as_ref().unwrap().payload.trigger, Trigger::FinalApproval);
    engine.step(&mut s, Event::PrincipalDecision(Decision::Approve { option_id: "A".into() })).unwrap();
    assert_eq!(s.state, ProtocolState::Agree);
    assert!(s.round <= 20);
    let outcome = s.audit.events().iter().rev().find(|e| e.kind == AuditKind::Outcome).unwrap();
    assert_eq!(outcome.payload["agreed"]["value"], 105000.0);
}

#[test]
fn choosing_c_ends_without_a_deal() {
    let engine = Engine::default();
    let (mut s, _) = run_to_boundary(&engine);
    let out = engine.step(&mut s, Event::PrincipalDecision(Decision::Approve { option_id: "C".into() })).unwrap();
    assert_eq!(s.state, ProtocolState::NoDeal);
    assert_eq!(out.last(), Some(&Action::Closed { outcome: ProtocolState::NoDeal }));
    assert_eq!(
        engine.step(&mut s, Event::say("hello?")).unwrap_err(),
        EngineError::Terminal(ProtocolState::NoDeal)
    );
}

#[test]
fn approving_a_counters_at_the_top_of_the_band() {
    let engine = Engine::default();
    let (mut s, _) = run_to_boundary(&engine);
    let out = engine.step(&mut s, Event::PrincipalDecision(Decision::Approve { option_id: "A".into() })).unwrap();
    assert_eq!(sent(&out), ["We're exploring $100K for this role, subject to approval."]);
    assert_eq!(s.state, ProtocolState::Negotiate);
}

#[test]
fn decisions_are_validated() {
    let engine = Engine::default();
    let (mut s, _) = run_to_boundary(&engine);
    let before = s.clone();
    assert_eq!(
        engine.step(&mut s, Event::PrincipalDecision(Decision::Approve { option_id: "Z".into() })).unwrap_err(),
        EngineError::UnknownOption("Z".into())
    );
    assert_eq!(s, before);
    assert_eq!(engine.step(&mut s, Event::say("still there?")).unwrap_err(), EngineError::AwaitingPrincipal);
    engine.step(&mut s, Event::PrincipalDecision(Decision::Approve { option_id: "B".into() })).unwrap();
    assert_eq!(
        engine.step(&mut s, Event::PrincipalDecision(Decision::Approve { option_id: "B".into() })).unwrap_err(),
        EngineError::NoPendingEscalation
    );
}

#[test]
fn audit_is_gapless_with_one_event_per_transition() {
    let engine = Engine::default();
    let (mut s, _) = run_to_boundary(&engine);
    engine.step(&mut s, Event::PrincipalDecision(Decision::Approve { option_id: "C".into() })).unwrap();
    let seqs: Vec<u64> = s.audit.events().iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>());
    let transitions: Vec<(String, String)> = s
        .audit
        .events()
        .iter()
        .filter(|e| e.kind == AuditKind::Transition)
        .map(|e| (e.payload["from"].as_str().unwrap_or("-").to_string(), e.payload["to"].as_str().unwrap().to_string()))
        .collect();
    let expect = [("-", "START"), ("START", "STCC"), ("STCC", "SCREEN"), ("SCREEN", "NEGOTIATE"), ("NEGOTIATE", "ESCALATE"), ("ESCALATE", "NO_DEAL")];
    let expect: Vec<(String, String)> = expect.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    assert_eq!(transitions, expect);
}

#[test]
fn snapshot_round_trips_mid_negotiation() {
    let engine = Engine::default();
    let mut s = session();
    engine.open(&mut s).unwrap();
    for f in ["primary_constraint", "timezone", "skills", "start_date", "contract_type", "compensation"] {
        engine.step(&mut s, Event::say(reply(f))).unwrap();
    }
    assert_eq!(s.state, ProtocolState::Negotiate);
    let doc = snapshot(&s);
    let mut r = restore(&doc).unwrap();
    assert_eq!(r, s);
    let ev = Event::say("I'd prefer $105K given my 8 years of experience.");
    let a = engine.step(&mut s, ev.clone()).unwrap();
    let b = engine.step(&mut r, ev).unwrap();
    assert_eq!(a, b);
    assert_eq!(snapshot(&s), snapshot(&r));

    // Escalated sessions still await their decision after a restore.
    let r2 = restore(&snapshot(&r)).unwrap();
    assert_eq!(r2.state, ProtocolState::Escalate);
    assert!(r2.pending_escalation.is_some());
}

#[test]
fn corrupted_snapshots_are_refused() {
    let s = session();
    let doc = snapshot(&s);
    assert!(restore(&doc[..doc.len() / 2]).is_err());
    let tampered = doc.replacen("walkthrough", "walkthrougH", 1);
    assert!(matches!(restore(&tampered), Err(parley_core::engine::SnapshotError::Integrity { .. })));
}

#[test]
fn eager_delegate_is_held_at_the_gate() {
    let engine = Engine::default().with_delegate(parley_core::engine::NaiveDelegate { eager: true });
    let mut s = session();
    engine.open(&mut s).unwrap();
    let out = engine.step(&mut s, Event::say(reply("primary_constraint"))).unwrap();
    assert_eq!(s.state, ProtocolState::Screen);
    let texts = sent(&out);
    assert_eq!(texts.len(), 1);
    assert!(!texts[0].contains("$100K"), "offer leaked: {}", texts[0]);
    let blocked = s.audit.events().iter().find(|e| e.payload["kind"] == "premature_offer_blocked").unwrap();
    assert!(blocked.payload["error"].as_str().unwrap().contains("I1"));
}

#[test]
fn timeout_stalls_and_no_reply_recaps() {
    let engine = Engine::default();
    let mut s = session();
    engine.open(&mut s).unwrap();
    let out = engine.step(&mut s, Event::NoReply).unwrap();
    assert!(sent(&out)[0].starts_with("To recap"));
    engine.step(&mut s, Event::Timeout).unwrap();
    assert_eq!(s.state, ProtocolState::Stall);
}

#[test]
fn requesting_negotiate_below_the_gate_names_i1() {
    let mut s = session();
    Engine::default().open(&mut s).unwrap();
    s.request_transition(ProtocolState::Screen, "test").unwrap();
    match s.request_transition(ProtocolState::Negotiate, "test") {
        Err(EngineError::InvariantViolation { invariant, .. }) => assert_eq!(invariant, "I1"),
        r => panic!("unexpected {r:?}"),
    }
}
