use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::Message;
use crate::domain::{FieldId, Quantity};
use crate::engine::ProtocolState;
use crate::tci::TciLedger;

/// Why a session was handed to the principal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    BoundaryViolation,
    PersistentAmbiguity,
    NegativeSentiment,
    AdversarialSuspected,
    BudgetStarvation,
    HumanCriticConflict,
    /// Agreed terms awaiting sign-off before the session may close.
    FinalApproval,
}

impl Trigger {
    pub const ALL: [Trigger; 7] = [
        Trigger::BoundaryViolation,
        Trigger::PersistentAmbiguity,
        Trigger::NegativeSentiment,
        Trigger::AdversarialSuspected,
        Trigger::BudgetStarvation,
        Trigger::HumanCriticConflict,
        Trigger::FinalApproval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::BoundaryViolation => "boundary_violation",
            Trigger::PersistentAmbiguity => "persistent_ambiguity",
            Trigger::NegativeSentiment => "negative_sentiment",
            Trigger::AdversarialSuspected => "adversarial_suspected",
            Trigger::BudgetStarvation => "budget_starvation",
            Trigger::HumanCriticConflict => "human_critic_conflict",
            Trigger::FinalApproval => "final_approval",
        }
    }
}

/// What approving an option does to the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum OptionEffect {
    /// Resume and propose exactly this value.
    CounterAt { field_id: FieldId, value: Quantity },
    /// Widen an authorization band, then resume.
    ExtendBoundary { rule_id: String, min_value: f64, max_value: f64 },
    EndSession,
    ResumeScreen,
    /// Resume where the session paused.
    Continue,
    /// Close on the terms summarized in the payload.
    ApproveTerms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationOption {
    pub option_id: String,
    pub label: String,
    pub tradeoff: String,
    pub effect: OptionEffect,
}

impl EscalationOption {
    pub fn new(id: &str, label: impl Into<String>, tradeoff: impl Into<String>, effect: OptionEffect) -> Self {
        EscalationOption { option_id: id.into(), label: label.into(), tradeoff: tradeoff.into(), effect }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub phase: ProtocolState,
    pub last_messages: Vec<Message>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub revealed: Vec<FieldId>,
    pub missing: Vec<FieldId>,
    pub revealed_count: usize,
    pub required: usize,
    pub tci: f64,
    pub tci_weighted: f64,
    /// TCI samples over the last stall window, oldest first.
    pub recent_tci: Vec<f64>,
}

impl LedgerSummary {
    pub fn of(ledger: &TciLedger, window: usize) -> Self {
        let h = &ledger.history_of_tci;
        LedgerSummary {
            revealed: ledger.revealed.keys().cloned().collect(),
            missing: ledger.missing.clone(),
            revealed_count: ledger.revealed_count(),
            required: ledger.required,
            tci: ledger.tci,
            tci_weighted: ledger.tci_weighted,
            recent_tci: h[h.len().saturating_sub(window)..].to_vec(),
        }
    }
}

/// Everything the principal needs to decide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationPayload {
    pub trigger: Trigger,
    pub state_snapshot: StateSnapshot,
    pub tci_ledger: LedgerSummary,
    pub boundary_at_risk: String,
    pub safety_events: Vec<String>,
    pub options: Vec<EscalationOption>,
    pub approval_request: String,
}

impl EscalationPayload {
    pub fn option(&self, id: &str) -> Option<&EscalationOption> {
        self.options.iter().find(|o| o.option_id == id)
    }
}

/// Session facts a payload is built from.
#[derive(Debug, Clone)]
pub struct EscalationContext<'a> {
    pub phase: ProtocolState,
    pub history: &'a [Message],
    pub ledger: &'a TciLedger,
    pub stall_window: usize,
    pub boundary_at_risk: String,
    pub safety_events: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum EscalationError {
    #[error("an escalation needs at least one option")]
    NoOptions,
    #[error("at most three options may be offered, got {0}")]
    TooManyOptions(usize),
    #[error("duplicate option id `{0}`")]
    DuplicateOption(String),
}

fn approval_request(options: &[EscalationOption]) -> String {
    let ids: Vec<&str> = options.iter().map(|o| o.option_id.as_str()).collect();
    let list = match ids.as_slice() {
        [one] => one.to_string(),
        [a, b] => format!("{a} or {b}"),
        [init @ .., last] => format!("{}, or {last}", init.join(", ")),
        [] => String::new(),
    };
    format!("Please approve {list}, or provide guidance.")
}

pub fn build_escalation_payload(
    ctx: EscalationContext<'_>,
    trigger: Trigger,
    options: Vec<EscalationOption>,
) -> Result<EscalationPayload, EscalationError> {
    if options.is_empty() {
        return Err(EscalationError::NoOptions);
    }
    if options.len() > 3 {
        return Err(EscalationError::TooManyOptions(options.len()));
    }
    for (i, o) in options.iter().enumerate() {
        if options[..i].iter().any(|p| p.option_id == o.option_id) {
            return Err(EscalationError::DuplicateOption(o.option_id.clone()));
        }
    }
    let h = ctx.history;
    let boundary_at_risk = if ctx.boundary_at_risk.is_empty() {
        "No authorization band at risk.".to_string()
    } else {
        ctx.boundary_at_risk
    };
    Ok(EscalationPayload {
        trigger,
        state_snapshot: StateSnapshot { phase: ctx.phase, last_messages: h[h.len().saturating_sub(3)..].to_vec() },
        tci_ledger: LedgerSummary::of(ctx.ledger, ctx.stall_window + 1),
        boundary_at_risk,
        safety_events: ctx.safety_events,
        approval_request: approval_request(&options),
        options,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::load_domain_config;

    fn ledger() -> TciLedger {
        let config = load_domain_config(include_str!("../../../../fixtures/staffing.json")).unwrap();
        TciLedger::new(&config)
    }

    fn ctx<'a>(history: &'a [Message], ledger: &'a TciLedger) -> EscalationContext<'a> {
        EscalationContext {
            phase: ProtocolState::Screen,
            history,
            ledger,
            stall_window: 3,
            boundary_at_risk: String::new(),
            safety_events: vec![],
        }
    }

    #[test]
    fn empty_options_are_refused() {
        let l = ledger();
        assert_eq!(build_escalation_payload(ctx(&[], &l), Trigger::PersistentAmbiguity, vec![]), Err(EscalationError::NoOptions));
    }

    #[test]
    fn duplicate_and_excess_options_are_refused() {
        let l = ledger();
        let o = |id: &str| EscalationOption::new(id, "x", "y", OptionEffect::Continue);
        assert_eq!(
            build_escalation_payload(ctx(&[], &l), Trigger::PersistentAmbiguity, vec![o("A"), o("A")]),
            Err(EscalationError::DuplicateOption("A".into()))
        );
        assert_eq!(
            build_escalation_payload(ctx(&[], &l), Trigger::PersistentAmbiguity, vec![o("A"), o("B"), o("C"), o("D")]),
            Err(EscalationError::TooManyOptions(4))
        );
    }

    #[test]
    fn payload_carries_the_minimum_content() {
        let l = ledger();
        let history: Vec<Message> = (1..=5).map(|t| Message::counterparty(t, format!("message {t}"))).collect();
        let o = |id: &str| EscalationOption::new(id, "x", "y", OptionEffect::Continue);
        let p = build_escalation_payload(ctx(&history, &l), Trigger::PersistentAmbiguity, vec![o("A"), o("B"), o("C")]).unwrap();
        assert_eq!(p.state_snapshot.last_messages.len(), 3);
        assert_eq!(p.state_snapshot.last_messages[0].text, "message 3");
        assert_eq!(p.tci_ledger.missing.len(), 11);
        assert_eq!(p.approval_request, "Please approve A, B, or C, or provide guidance.");
        assert!(!p.boundary_at_risk.is_empty());
    }
}
