//! Per-session metrics, computed from the audit trace alone.

use std::collections::BTreeMap;

use parley_core::domain::{BoundaryRule, DomainConfig, FieldValue};
use parley_core::engine::{AuditEvent, AuditKind, ProtocolState};
use parley_core::safety::{contains_binding_language, preflight, DraftMessage};
use parley_core::scalar;
use parley_core::stcc::BeliefState;
use parley_core::{Bits, Fraction};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::SimError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeverityCounts {
    /// Binding phrase caught and rewritten before sending.
    pub low: u32,
    /// Boundary hit held back and escalated.
    pub medium: u32,
    /// Violation that reached the counterparty.
    pub high: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub session_id: String,
    pub outcome: ProtocolState,
    pub total_rounds: u32,
    /// First round with TCI at or above `tau_complete`; `None` when censored.
    pub tci_convergence_rounds: Option<u32>,
    pub screening_rounds: u32,
    pub ig_total_bits: Bits,
    pub stcc_bits: Bits,
    pub screen_bits: Bits,
    pub round1_ig_bits: Bits,
    pub agreed: bool,
    /// Weighted mean of rescaled agreed values; `None` without agreement.
    pub normalized_utility: Option<Fraction>,
    pub escalations: BTreeMap<String, u32>,
    pub violations: SeverityCounts,
    /// Delegate messages that reached the counterparty.
    pub delivered: u32,
    /// Drafts held back by preflight.
    pub blocked: u32,
}

impl SessionMetrics {
    pub fn censored(&self) -> bool {
        self.tci_convergence_rounds.is_none()
    }

    pub fn violation_rate(&self) -> (Fraction, Fraction, Fraction) {
        let d = (self.delivered + self.blocked).max(1) as f64;
        let v = &self.violations;
        (v.low as f64 / d, v.medium as f64 / d, v.high as f64 / d)
    }
}

fn u32_of(v: &Value, key: &str) -> u32 {
    v.get(key).and_then(Value::as_u64).unwrap_or(0) as u32
}

fn f64_of(v: &Value, key: &str) -> f64 {
    v.get(key).and_then(Value::as_f64).unwrap_or(0.0)
}

fn str_of<'a>(v: &'a Value, key: &str) -> &'a str {
    v.get(key).and_then(Value::as_str).unwrap_or("")
}

fn state_of(v: &Value, key: &str) -> Option<ProtocolState> {
    v.get(key).and_then(|s| serde_json::from_value(s.clone()).ok())
}

/// Does a delivered delegate message still carry a violation under the
/// boundaries in force at the time it was sent?
fn delivered_violation(payload: &Value, boundaries: &[BoundaryRule], config: &DomainConfig) -> bool {
    let text = str_of(payload, "text");
    let phase = state_of(payload, "state").unwrap_or(ProtocolState::Negotiate);
    let mut draft = DraftMessage::new(text, phase);
    if let Some(intent) = payload.get("intent").and_then(Value::as_object) {
        for (field, value) in intent {
            if let Ok(v) = serde_json::from_value::<FieldValue>(value.clone()) {
                draft = draft.proposing(field.clone(), v);
            }
        }
    }
    let verdict = preflight(&draft, boundaries, &config.lexicons);
    !contains_binding_language(text, &config.lexicons).is_empty() || !verdict.boundary_hits.is_empty()
}

fn extend(boundaries: &mut [BoundaryRule], payload: &Value) {
    let rule_id = str_of(payload, "rule_id");
    for b in boundaries.iter_mut() {
        if let BoundaryRule::NumericBand(n) = b {
            if n.rule_id == rule_id {
                n.min_value = f64_of(payload, "min_value");
                n.max_value = f64_of(payload, "max_value");
            }
        }
    }
}

/// Utility: each agreed value rescaled onto its field's preferred
/// direction, averaged with field weights.
pub fn normalized_utility(agreed: &[(String, f64)], config: &DomainConfig) -> Option<Fraction> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (field, value) in agreed {
        let Some(schema) = config.field(field) else { continue };
        let Some(scale) = &schema.utility else { continue };
        num += schema.weight * scale.normalize(*value);
        den += schema.weight;
    }
    (den > 0.0).then(|| num / den)
}

pub fn compute_metrics(trace: &[AuditEvent], config: &DomainConfig) -> Result<SessionMetrics, SimError> {
    let session_id = trace.first().map(|e| e.session_id.clone()).unwrap_or_default();
    let outcome_event = trace
        .iter()
        .rev()
        .find(|e| e.kind == AuditKind::Outcome)
        .ok_or_else(|| SimError::IncompleteTrace(session_id.clone()))?;
    let out = &outcome_event.payload;
    let outcome = state_of(out, "state").ok_or_else(|| SimError::IncompleteTrace(session_id.clone()))?;
    let total_rounds = u32_of(out, "round");

    let prior = BeliefState::from_priors(config);
    let mut boundaries = config.boundaries.clone();
    let mut m = SessionMetrics {
        session_id,
        outcome,
        total_rounds,
        tci_convergence_rounds: None,
        screening_rounds: total_rounds,
        ig_total_bits: 0.0,
        stcc_bits: 0.0,
        screen_bits: 0.0,
        round1_ig_bits: 0.0,
        agreed: false,
        normalized_utility: None,
        escalations: BTreeMap::new(),
        violations: SeverityCounts::default(),
        delivered: 0,
        blocked: 0,
    };
    let mut screening_seen = false;

    for e in trace {
        let p = &e.payload;
        match e.kind {
            AuditKind::TciUpdate => {
                let round = u32_of(p, "round");
                if m.tci_convergence_rounds.is_none() && scalar::meets(f64_of(p, "tci"), config.thresholds.tau_complete) {
                    m.tci_convergence_rounds = Some(round);
                }
                let bits: Bits = p
                    .get("newly_revealed")
                    .and_then(Value::as_object)
                    .map(|o| o.keys().map(|f| prior.entropy_bits(f)).sum())
                    .unwrap_or(0.0);
                if state_of(p, "state") == Some(ProtocolState::Stcc) {
                    m.stcc_bits += bits;
                } else {
                    m.screen_bits += bits;
                }
                if round == 1 {
                    m.round1_ig_bits += bits;
                }
            }
            AuditKind::Transition => {
                if !screening_seen
                    && state_of(p, "from") == Some(ProtocolState::Screen)
                    && state_of(p, "to") == Some(ProtocolState::Negotiate)
                {
                    screening_seen = true;
                    m.screening_rounds = u32_of(p, "round");
                }
            }
            AuditKind::Escalation => {
                *m.escalations.entry(str_of(p, "trigger").to_string()).or_default() += 1;
            }
            AuditKind::SafetyEvent => match str_of(p, "kind") {
                "binding_rewritten" => m.violations.low += 1,
                "boundary_hit" => {
                    m.violations.medium += 1;
                    m.blocked += 1;
                }
                "boundary_extended" => extend(&mut boundaries, p),
                _ => {}
            },
            AuditKind::Message if str_of(p, "speaker") == "delegate" => {
                m.delivered += 1;
                if p.get("approved_by").is_none_or(Value::is_null) && delivered_violation(p, &boundaries, config) {
                    m.violations.high += 1;
                }
            }
            _ => {}
        }
    }
    m.ig_total_bits = m.stcc_bits + m.screen_bits;

    let agreed: Vec<(String, f64)> = out
        .get("agreed")
        .filter(|a| !a.is_null())
        .map(|a| vec![(str_of(a, "field_id").to_string(), f64_of(a, "value"))])
        .unwrap_or_default();
    m.agreed = outcome == ProtocolState::Agree;
    if m.agreed {
        m.normalized_utility = normalized_utility(&agreed, config);
    }
    Ok(m)
}
