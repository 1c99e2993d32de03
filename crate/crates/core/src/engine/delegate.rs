//! Pluggable stand-ins for the language-model roles: the delegate that words
//! each move, and the critic that suggests tactics.
//!
//! The default delegate is deliberately naive. It answers counterparty asks
//! with "we agree to ..." and reacts to pressure with "we commit to ...", so
//! every safeguard downstream of it gets exercised.

use serde::{Deserialize, Serialize};

use super::ProtocolState;
use crate::dialogue::Message;
use crate::domain::{DomainConfig, FieldId, FieldValue, Quantity};
use crate::feedback::{Category, Channel, FeedbackItem, MergedPlan};
use crate::safety::DraftMessage;
use crate::stcc::{self, QuestionDraft};
use crate::tci::{Ambiguity, TciLedger};
use crate::text::Normalized;

/// What the engine wants said this turn. The delegate chooses the wording
/// and the structured intent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "move", rename_all = "snake_case")]
pub enum Move {
    Opening { question: QuestionDraft },
    OpenEnded { missing: Vec<FieldId> },
    Ask { field_id: FieldId },
    Clarify { ambiguity: Ambiguity },
    Offer { field_id: FieldId, min: f64, max: f64, unit: String },
    Respond { field_id: FieldId, ask: Quantity },
    Counter { field_id: FieldId, value: Quantity },
    DeclineRequest,
    Deflect,
    Recap,
    Summary { terms: Vec<(FieldId, String)> },
    Close { outcome: ProtocolState },
}

impl Move {
    /// Field this move asks the counterparty about, if it is a question.
    pub fn asks(&self) -> Option<&str> {
        match self {
            Move::Opening { question } => Some(&question.field_id),
            Move::Ask { field_id } => Some(field_id),
            Move::Clarify { ambiguity } => Some(&ambiguity.field_id),
            _ => None,
        }
    }
}

pub struct DraftContext<'a> {
    pub state: ProtocolState,
    pub mv: &'a Move,
    pub config: &'a DomainConfig,
    pub ledger: &'a TciLedger,
    pub plan: &'a MergedPlan,
    pub last_counterparty: Option<&'a Message>,
}

pub trait DelegatePolicy: Send + Sync {
    fn draft(&self, ctx: &DraftContext<'_>) -> DraftMessage;
}

/// Deterministic template delegate.
#[derive(Debug, Clone, Copy, Default)]
pub struct NaiveDelegate {
    /// Propose terms while still screening, regardless of the gate.
    pub eager: bool,
}

fn pressured(msg: Option<&Message>) -> bool {
    msg.is_some_and(|m| {
        let n = Normalized::new(&m.text);
        ["commit", "guarantee", "promise", "firm answer"].iter().any(|w| n.contains(w))
    })
}

fn humanize(field: &str) -> String {
    field.replace('_', " ")
}

impl DelegatePolicy for NaiveDelegate {
    fn draft(&self, ctx: &DraftContext<'_>) -> DraftMessage {
        let mut draft = match ctx.mv {
            Move::Opening { question } => DraftMessage::new(stcc::build_stcc_question(question), ctx.state),
            Move::OpenEnded { missing } => DraftMessage::new(stcc::open_ended_question(ctx.config, missing), ctx.state),
            Move::Ask { field_id } => {
                let text = ctx.config.field(field_id).map(stcc::screen_question).unwrap_or_default();
                DraftMessage::new(text, ctx.state)
            }
            Move::Clarify { ambiguity } => DraftMessage::new(
                format!(
                    "I have two different answers for {}. Which one should I note down? {{{}, {}}}",
                    humanize(&ambiguity.field_id),
                    ambiguity.revealed,
                    ambiguity.contradicting
                ),
                ctx.state,
            ),
            Move::Offer { field_id, min, max, unit } => {
                let value = FieldValue::Range { min: *min, max: *max, unit: unit.clone() };
                DraftMessage::new(
                    format!("Based on what you've shared, we're exploring a {value} range, subject to approval."),
                    ctx.state,
                )
                .proposing(field_id.clone(), value)
            }
            Move::Respond { field_id, ask } => DraftMessage::new(format!("We agree to {ask}."), ctx.state)
                .proposing(field_id.clone(), FieldValue::Number(ask.clone())),
            Move::Counter { field_id, value } => DraftMessage::new(
                format!("We're exploring {value} for this role, subject to approval."),
                ctx.state,
            )
            .proposing(field_id.clone(), FieldValue::Number(value.clone())),
            Move::DeclineRequest => {
                DraftMessage::new("That request falls outside what I'm able to offer, so I'll set it aside.", ctx.state)
            }
            Move::Deflect => DraftMessage::new(
                "I can share relevant case studies, but that information is confidential.",
                ctx.state,
            ),
            Move::Recap => {
                let missing: Vec<String> = ctx.ledger.missing.iter().take(2).map(|f| humanize(f)).collect();
                DraftMessage::new(
                    format!(
                        "To recap: we've covered {} of {} points. Would you prefer (A) to continue with {}, or (B) to pause for now?",
                        ctx.ledger.revealed_count(),
                        ctx.ledger.required,
                        if missing.is_empty() { "next steps".to_string() } else { missing.join(" and ") }
                    ),
                    ctx.state,
                )
            }
            Move::Summary { terms } => {
                let list: Vec<String> = terms.iter().map(|(f, v)| format!("{}: {v}", humanize(f))).collect();
                DraftMessage::new(
                    format!("To summarize where we are: {}. Final terms are subject to approval.", list.join("; ")),
                    ctx.state,
                )
            }
            Move::Close { outcome } => {
                let text = match outcome {
                    ProtocolState::Agree => "Great news: the terms are approved. I'll follow up with next steps.",
                    _ => "Thank you for your time. We won't be moving forward at this point.",
                };
                DraftMessage::new(text, ctx.state)
            }
        };
        if self.eager && ctx.state == ProtocolState::Screen {
            if let Some(band) = ctx.config.numeric_bands().next() {
                let v = Quantity::new(band.max_value, band.unit.clone());
                draft.text = format!("{} Also, we could offer {v}.", draft.text);
                draft.intent.insert(band.field_id.clone(), FieldValue::Number(v));
            }
        }
        if pressured(ctx.last_counterparty) && matches!(ctx.mv, Move::Respond { .. } | Move::Counter { .. } | Move::Offer { .. }) {
            draft.text = format!("We commit to keeping this moving quickly. {}", draft.text);
        }
        draft
    }
}

/// Suggestion source for the critic channel.
pub trait Critic: Send + Sync {
    fn suggest(&self, state: ProtocolState, config: &DomainConfig, ledger: &TciLedger, last: Option<&Message>, turn: u32) -> Vec<FeedbackItem>;
}

/// No suggestions.
#[derive(Debug, Default, Clone, Copy)]
pub struct SilentCritic;

impl Critic for SilentCritic {
    fn suggest(&self, _: ProtocolState, _: &DomainConfig, _: &TciLedger, _: Option<&Message>, _: u32) -> Vec<FeedbackItem> {
        Vec::new()
    }
}

/// Rule-of-thumb critic: clarity nudges toward missing fields, a persuasion
/// tactic once bargaining, and an eager "just accept it" whenever the
/// counterparty raises something prohibited.
#[derive(Debug, Default, Clone, Copy)]
pub struct RuleCritic;

impl Critic for RuleCritic {
    fn suggest(&self, state: ProtocolState, config: &DomainConfig, ledger: &TciLedger, last: Option<&Message>, turn: u32) -> Vec<FeedbackItem> {
        let mut out = Vec::new();
        if let Some(f) = ledger.missing.first() {
            out.push(
                FeedbackItem::new(format!("critic-{turn}-clarity"), Channel::Critic, Category::Clarity, format!("Ask directly about {}.", humanize(f)), turn)
                    .scored(0.8, 0.9),
            );
        }
        if state == ProtocolState::Negotiate {
            out.push(
                FeedbackItem::new(format!("critic-{turn}-urgency"), Channel::Critic, Category::Persuasion, "Use urgency framing to close faster.", turn)
                    .scored(0.5, 0.6),
            );
        }
        if let Some(m) = last {
            let n = Normalized::new(&m.text);
            for p in config.prohibitions() {
                if p.patterns.iter().any(|pat| n.contains(pat)) {
                    out.push(
                        FeedbackItem::new(format!("critic-{turn}-{}", p.rule_id), Channel::Critic, Category::Constraint, "Accept their request to close faster.", turn)
                            .scored(0.7, 0.9)
                            .targeting(p.rule_id.clone(), "accept"),
                    );
                }
            }
        }
        out
    }
}
