use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::audit::{AuditKind, AuditLog, LogicalClock};
use super::state::edge_exists;
use super::{EngineError, ProtocolState};
use crate::dialogue::Message;
use crate::domain::{BoundaryRule, DomainConfig, FieldId, FieldValue, NumericBand, Quantity};
use crate::feedback::FeedbackStore;
use crate::safety::EscalationPayload;
use crate::scalar;
use crate::tci::{Ambiguity, TciLedger};

/// Per-session switches, mostly for baselines and ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionSettings {
    /// Open with the highest-gain multiple-choice question. When off the
    /// opener is open-ended.
    pub stcc_enabled: bool,
    /// Run safety preflight on outgoing drafts.
    pub preflight_enabled: bool,
    /// Risk budget for the opening question.
    pub rho: f64,
    pub budget_tokens: u32,
    pub tau_classify: f64,
    /// Adversarial phrase hits in one message that escalate immediately.
    pub strong_adversarial_hits: u32,
}

impl Default for SessionSettings {
    fn default() -> Self {
        SessionSettings {
            stcc_enabled: true,
            preflight_enabled: true,
            rho: 1.0,
            budget_tokens: 4000,
            tau_classify: 0.7,
            strong_adversarial_hits: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Negotiation {
    /// Field being bargained over: the first numeric authorization band.
    pub field_id: Option<FieldId>,
    pub last_offer: Option<FieldValue>,
    pub pending_ask: Option<Quantity>,
    pub agreed: Option<Quantity>,
}

impl Negotiation {
    pub fn offer_covers(&self, q: &Quantity) -> bool {
        match &self.last_offer {
            Some(FieldValue::Number(o)) => o.unit == q.unit && (o.value - q.value).abs() < 1e-9,
            Some(FieldValue::Range { min, max, unit }) => *unit == q.unit && *min <= q.value && q.value <= *max,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingEscalation {
    pub payload: EscalationPayload,
    pub resume_to: ProtocolState,
    pub escalation_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub config: Arc<DomainConfig>,
    pub metadata: BTreeMap<String, String>,
    pub settings: SessionSettings,
    pub state: ProtocolState,
    pub history: Vec<Message>,
    pub ledger: TciLedger,
    pub feedback: FeedbackStore,
    pub pending_escalation: Option<PendingEscalation>,
    pub round: u32,
    pub rounds_since_progress: u32,
    pub silent_rounds: u32,
    pub ambiguity_flags: Vec<Ambiguity>,
    /// Times each field has been asked about.
    pub asked: BTreeMap<FieldId, u32>,
    /// Authorization boundaries in force, including approved extensions.
    pub boundaries: Vec<BoundaryRule>,
    pub negotiation: Negotiation,
    pub adversarial_probes: u32,
    /// Ledger samples before this index are ignored for stall detection.
    pub stall_baseline: usize,
    pub clock: LogicalClock,
    pub audit: AuditLog,
}

/// Create a session at START. The first audit event records entry into START.
pub fn init_session(
    config: Arc<DomainConfig>,
    session_id: impl Into<String>,
    metadata: BTreeMap<String, String>,
    settings: SessionSettings,
) -> Session {
    let negotiated = config.numeric_bands().next().map(|b| b.field_id.clone());
    let mut s = Session {
        session_id: session_id.into(),
        metadata,
        settings,
        state: ProtocolState::Start,
        history: Vec::new(),
        ledger: TciLedger::new(&config),
        feedback: FeedbackStore::default(),
        pending_escalation: None,
        round: 0,
        rounds_since_progress: 0,
        silent_rounds: 0,
        ambiguity_flags: Vec::new(),
        asked: BTreeMap::new(),
        boundaries: config.boundaries.clone(),
        negotiation: Negotiation { field_id: negotiated, ..Default::default() },
        adversarial_probes: 0,
        stall_baseline: 0,
        clock: LogicalClock::default(),
        audit: AuditLog::default(),
        config,
    };
    let meta = json!(s.metadata);
    s.record(
        AuditKind::Transition,
        json!({"from": null, "to": ProtocolState::Start, "round": 0, "tci": 0.0, "tci_weighted": 0.0,
               "revealed_count": 0, "required": s.ledger.required, "metadata": meta}),
        "session initiated",
    );
    s
}

impl Session {
    pub fn record(&mut self, kind: AuditKind, payload: Value, rationale: impl Into<String>) -> u64 {
        let id = self.session_id.clone();
        self.audit.append(&id, &self.clock, kind, payload, rationale)
    }

    /// g(h): both the plain and weighted TCI reach `tau_gate`.
    pub fn gate_met(&self) -> bool {
        let t = self.config.thresholds.tau_gate;
        scalar::meets(self.ledger.tci, t) && scalar::meets(self.ledger.tci_weighted, t)
    }

    /// c(h): both the plain and weighted TCI reach `tau_complete`.
    pub fn complete(&self) -> bool {
        let t = self.config.thresholds.tau_complete;
        scalar::meets(self.ledger.tci, t) && scalar::meets(self.ledger.tci_weighted, t)
    }

    pub fn negotiated_band(&self) -> Option<&NumericBand> {
        let field = self.negotiation.field_id.as_deref()?;
        self.boundaries.iter().find_map(|b| match b {
            BoundaryRule::NumericBand(n) if n.field_id == field => Some(n),
            _ => None,
        })
    }

    pub fn is_stalled(&self) -> bool {
        let h = &self.ledger.history_of_tci;
        crate::tci::is_stalled(&h[self.stall_baseline.min(h.len())..], self.config.thresholds.stall_k as usize)
    }

    /// Move to `to` if the transition table and guards allow it, recording
    /// exactly one transition event. Entering SCREEN -> NEGOTIATE without the
    /// information gate is refused as an I1 violation.
    pub fn request_transition(&mut self, to: ProtocolState, reason: &str) -> Result<u64, EngineError> {
        let from = self.state;
        if !edge_exists(from, to) {
            return Err(EngineError::IllegalTransition { from, to });
        }
        if from == ProtocolState::Escalate {
            let resume = self.pending_escalation.as_ref().map(|p| p.resume_to);
            let ok = Some(to) == resume || matches!(to, ProtocolState::Screen | ProtocolState::Agree | ProtocolState::NoDeal | ProtocolState::Stall);
            if !ok {
                return Err(EngineError::IllegalTransition { from, to });
            }
        }
        if from == ProtocolState::Screen && to == ProtocolState::Negotiate && !self.gate_met() {
            return Err(EngineError::InvariantViolation {
                invariant: "I1".into(),
                detail: format!(
                    "cannot enter NEGOTIATE with TCI {:.3} (weighted {:.3}) below tau_gate {}",
                    self.ledger.tci, self.ledger.tci_weighted, self.config.thresholds.tau_gate
                ),
            });
        }
        self.state = to;
        let seq = self.record(
            AuditKind::Transition,
            json!({"from": from, "to": to, "round": self.round, "tci": self.ledger.tci,
                   "tci_weighted": self.ledger.tci_weighted, "revealed_count": self.ledger.revealed_count(),
                   "required": self.ledger.required}),
            reason,
        );
        if to != ProtocolState::Escalate {
            self.pending_escalation = None;
        }
        if to.is_closed() {
            self.record_outcome(reason);
        }
        Ok(seq)
    }

    fn record_outcome(&mut self, reason: &str) {
        let agreed = self.negotiation.agreed.clone();
        let field = self.negotiation.field_id.clone();
        let revealed: BTreeMap<&String, &String> = self.ledger.revealed.iter().map(|(k, v)| (k, &v.value)).collect();
        let payload = json!({"state": self.state, "round": self.round, "tci": self.ledger.tci,
            "agreed": agreed.map(|q| json!({"field_id": field, "value": q.value, "unit": q.unit})),
            "revealed": revealed});
        self.record(AuditKind::Outcome, payload, reason.to_string());
    }

    /// Close the log of a session left waiting on the principal, so its
    /// trace is complete. No-op unless the session is in ESCALATE without an
    /// outcome event.
    pub fn finalize_pending(&mut self) {
        if self.state == ProtocolState::Escalate && !self.audit.events().iter().any(|e| e.kind == AuditKind::Outcome) {
            self.record_outcome("awaiting principal decision at end of run");
        }
    }

    pub fn has_outcome(&self) -> bool {
        self.audit.events().iter().any(|e| e.kind == AuditKind::Outcome)
    }
}
