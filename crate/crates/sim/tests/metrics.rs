use parley_core::domain::{load_domain_config, DomainConfig};
use parley_core::engine::{AuditEvent, AuditKind, ProtocolState};
use parley_sim::metrics::{compute_metrics, normalized_utility};
use parley_sim::SimError;
use proptest::prelude::*;
use serde_json::{json, Value};

fn config() -> DomainConfig {
    load_domain_config(
        r#"{"domain_id":"m","thresholds":{"tau_gate":0.5,"tau_complete":0.85,"stall_k":3},
            "fields":[
              {"field_id":"four","bands":[{"label":"a"},{"label":"b"},{"label":"c"},{"label":"d"}]},
              {"field_id":"two","bands":[{"label":"a"},{"label":"b"}]},
              {"field_id":"skewed","bands":[{"label":"a"},{"label":"b"},{"label":"c"},{"label":"d"}],"prior":[0.5,0.25,0.125,0.125]},
              {"field_id":"price","unit":"USD","weight":1.0,"bands":[{"label":"low","max":60000},{"label":"high","min":60000}],
               "utility":{"prefer":"lower","min":50000,"max":70000}}
            ],
            "boundaries":[{"kind":"numeric_band","rule_id":"price_band","field_id":"price","min_value":50000,"max_value":60000,"unit":"USD"}],
            "lexicons":{"binding":[{"phrase":"we agree to","rewrite":"we're open to"}],"nonbinding":["exploring"]}}"#,
    )
    .unwrap()
}

fn ev(seq: u64, kind: AuditKind, payload: Value) -> AuditEvent {
    AuditEvent { seq, timestamp: Default::default(), session_id: "m-1".into(), kind, payload, rationale: String::new() }
}

fn update(seq: u64, round: u32, state: &str, tci: f64, newly: &[&str]) -> AuditEvent {
    let newly: serde_json::Map<String, Value> = newly.iter().map(|f| (f.to_string(), json!("a"))).collect();
    ev(seq, AuditKind::TciUpdate, json!({"round": round, "state": state, "tci": tci, "tci_weighted": tci, "newly_revealed": newly}))
}

fn outcome(seq: u64, state: &str, round: u32, agreed: Value) -> AuditEvent {
    ev(seq, AuditKind::Outcome, json!({"state": state, "round": round, "tci": 1.0, "agreed": agreed}))
}

/// log2 entropy computed from scratch.
fn h(p: &[f64]) -> f64 {
    p.iter().filter(|x| **x > 0.0).map(|x| -x * x.ln() / std::f64::consts::LN_2).sum()
}

#[test]
fn convergence_is_first_round_at_tau_complete() {
    let t = vec![
        update(1, 1, "STCC", 0.3, &[]),
        update(2, 2, "SCREEN", 0.6, &[]),
        update(3, 3, "SCREEN", 0.85, &[]),
        update(4, 4, "NEGOTIATE", 0.9, &[]),
        outcome(5, "NO_DEAL", 4, Value::Null),
    ];
    let m = compute_metrics(&t, &config()).unwrap();
    assert_eq!(m.tci_convergence_rounds, Some(3));
    assert!(!m.censored());
}

#[test]
fn never_converging_is_censored_not_imputed() {
    let t = vec![update(1, 1, "STCC", 0.3, &[]), outcome(2, "STALL", 1, Value::Null)];
    let m = compute_metrics(&t, &config()).unwrap();
    assert!(m.censored());
    assert_eq!(m.tci_convergence_rounds, None);
}

#[test]
fn ig_attribution_two_and_three_bits() {
    // STCC collapses a 2-bit field; SCREEN collapses a 1-bit field and a skewed one.
    let t = vec![
        update(1, 1, "STCC", 0.25, &["four"]),
        update(2, 2, "SCREEN", 0.5, &["two"]),
        update(3, 3, "SCREEN", 0.5, &[]),
        update(4, 4, "SCREEN", 0.75, &["skewed"]),
        outcome(5, "NO_DEAL", 4, Value::Null),
    ];
    let m = compute_metrics(&t, &config()).unwrap();
    let stcc = h(&[0.25; 4]);
    let screen = h(&[0.5, 0.5]) + h(&[0.5, 0.25, 0.125, 0.125]);
    assert_eq!(stcc, 2.0);
    assert!((screen - 2.75).abs() < 1e-12);
    assert!((m.stcc_bits - stcc).abs() < 1e-9);
    assert!((m.screen_bits - screen).abs() < 1e-9);
    assert!((m.ig_total_bits - 4.75).abs() < 1e-9);
    assert!((m.round1_ig_bits - 2.0).abs() < 1e-9);
}

#[test]
fn uniform_fields_give_two_and_three_bits() {
    let t = vec![
        update(1, 1, "STCC", 0.25, &["four"]),
        update(2, 2, "SCREEN", 0.75, &["two", "price"]),
        outcome(3, "NO_DEAL", 2, Value::Null),
    ];
    let m = compute_metrics(&t, &config()).unwrap();
    let oracle = (h(&[0.25; 4]), h(&[0.5; 2]) + h(&[0.5; 2]));
    assert_eq!(oracle, (2.0, 2.0));
    assert!((m.stcc_bits - oracle.0).abs() < 1e-9);
    assert!((m.screen_bits - oracle.1).abs() < 1e-9);
}

#[test]
fn no_deal_has_no_utility() {
    let m = compute_metrics(&[update(1, 1, "STCC", 0.2, &[]), outcome(2, "NO_DEAL", 1, Value::Null)], &config()).unwrap();
    assert!(!m.agreed);
    assert_eq!(m.normalized_utility, None);
    assert_eq!(m.outcome, ProtocolState::NoDeal);
}

#[test]
fn agreement_utility_follows_preferred_direction() {
    let agreed = json!({"field_id": "price", "value": 55000.0, "unit": "USD"});
    let m = compute_metrics(&[outcome(1, "AGREE", 5, agreed)], &config()).unwrap();
    assert!(m.agreed);
    // Lower is better on [50000, 70000]: 55000 sits a quarter of the way in.
    assert!((m.normalized_utility.unwrap() - 0.75).abs() < 1e-12);
}

#[test]
fn trace_without_outcome_is_incomplete() {
    let err = compute_metrics(&[update(1, 1, "STCC", 0.2, &[])], &config()).unwrap_err();
    assert!(matches!(err, SimError::IncompleteTrace(ref id) if id == "m-1"));
}

#[test]
fn severity_tiers_from_trace() {
    let c = config();
    let t = vec![
        ev(1, AuditKind::SafetyEvent, json!({"kind": "binding_rewritten", "severity": "low"})),
        ev(2, AuditKind::SafetyEvent, json!({"kind": "boundary_hit", "severity": "medium"})),
        ev(3, AuditKind::Message, json!({"speaker": "delegate", "text": "We agree to $65K.", "intent": {}, "approved_by": null, "state": "NEGOTIATE"})),
        ev(4, AuditKind::Message, json!({"speaker": "delegate", "text": "We agree to $65K.", "intent": {}, "approved_by": 2, "state": "NEGOTIATE"})),
        ev(5, AuditKind::Message, json!({"speaker": "delegate", "text": "We're exploring $55K.", "intent": {}, "approved_by": null, "state": "NEGOTIATE"})),
        ev(6, AuditKind::SafetyEvent, json!({"kind": "boundary_extended", "rule_id": "price_band", "min_value": 50000.0, "max_value": 65000.0})),
        ev(7, AuditKind::Message, json!({"speaker": "delegate", "text": "We're exploring $65K.", "intent": {"price": {"value": 65000.0, "unit": "USD"}}, "approved_by": null, "state": "NEGOTIATE"})),
        ev(8, AuditKind::Escalation, json!({"trigger": "boundary_violation"})),
        outcome(9, "NO_DEAL", 3, Value::Null),
    ];
    let m = compute_metrics(&t, &c).unwrap();
    assert_eq!((m.violations.low, m.violations.medium, m.violations.high), (1, 1, 1));
    assert_eq!((m.delivered, m.blocked), (4, 1));
    let (low, medium, high) = m.violation_rate();
    assert_eq!((low, medium, high), (0.2, 0.2, 0.2));
    assert_eq!(m.escalations["boundary_violation"], 1);
}

#[test]
fn utility_is_weighted_mean() {
    let c = config();
    assert_eq!(normalized_utility(&[("price".into(), 70000.0)], &c), Some(0.0));
    assert_eq!(normalized_utility(&[("four".into(), 1.0)], &c), None);
}

proptest! {
    #[test]
    fn attribution_sums_and_rates_stay_in_unit_interval(
        steps in proptest::collection::vec((any::<bool>(), proptest::sample::subsequence(vec!["four", "two", "skewed"], 0..=3)), 1..6),
        flags in proptest::collection::vec(0u8..4, 0..10),
    ) {
        let mut t = Vec::new();
        let mut seq = 0;
        let mut seen = std::collections::BTreeSet::new();
        for (i, (stcc, fields)) in steps.iter().enumerate() {
            let fresh: Vec<&str> = fields.iter().copied().filter(|f| seen.insert(*f)).collect();
            seq += 1;
            t.push(update(seq, i as u32 + 1, if *stcc { "STCC" } else { "SCREEN" }, seen.len() as f64 / 4.0, &fresh));
        }
        for f in &flags {
            seq += 1;
            // A rewrite is always followed by the rewritten message going out.
            if *f == 0 {
                t.push(ev(seq, AuditKind::SafetyEvent, json!({"kind": "binding_rewritten"})));
                seq += 1;
            }
            t.push(match f {
                0 => ev(seq, AuditKind::Message, json!({"speaker": "delegate", "text": "We're open to $55K.", "approved_by": null})),
                1 => ev(seq, AuditKind::SafetyEvent, json!({"kind": "boundary_hit"})),
                2 => ev(seq, AuditKind::Message, json!({"speaker": "delegate", "text": "We agree to $99K.", "approved_by": null})),
                _ => ev(seq, AuditKind::Message, json!({"speaker": "delegate", "text": "Hello.", "approved_by": null})),
            });
        }
        t.push(outcome(seq + 1, "NO_DEAL", 5, Value::Null));
        let m = compute_metrics(&t, &config()).unwrap();
        prop_assert!((m.ig_total_bits - m.stcc_bits - m.screen_bits).abs() < 1e-9);
        let (a, b, c) = m.violation_rate();
        for r in [a, b, c] {
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
