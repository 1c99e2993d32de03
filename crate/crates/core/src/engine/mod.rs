//! The protocol engine: one labeled transition system per session, driven
//! by counterparty messages, principal input and timeouts.

mod audit;
mod delegate;
mod session;
mod snapshot;
mod state;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use audit::{parse_jsonl, to_jsonl_line, AuditEvent, AuditKind, AuditLog, AuditSink, JsonlSink, LogicalClock, MemorySink};
pub use delegate::{Critic, DelegatePolicy, DraftContext, Move, NaiveDelegate, RuleCritic, SilentCritic};
pub use session::{init_session, Negotiation, PendingEscalation, Session, SessionSettings};
pub use snapshot::{restore, snapshot, SnapshotError, SNAPSHOT_VERSION};
pub use state::{edge_exists, ProtocolState};

use crate::dialogue::{Message, Speaker};
use crate::domain::{BoundaryRule, FieldId, FieldValue, NumericBand, Quantity};
use crate::feedback::{Category, Channel, FeedbackItem, MergeError, MergedPlan, Target};
use crate::safety::{
    self, build_escalation_payload, moderator_classify, preflight, DraftMessage, EscalationContext, EscalationOption,
    LexiconModerator, Moderator, OptionEffect, SafetyVerdict, Trigger, CORE_LABELS,
};
use crate::stcc::{self, BeliefState};
use crate::tci::{ModelExtractor, NoModel};
use crate::text::Normalized;

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum EngineError {
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: ProtocolState, to: ProtocolState },
    #[error("invariant {invariant} violated: {detail}")]
    InvariantViolation { invariant: String, detail: String },
    #[error("session is in terminal state {0}")]
    Terminal(ProtocolState),
    #[error("session must be opened before it can take events")]
    NotOpened,
    #[error("session is waiting for a principal decision")]
    AwaitingPrincipal,
    #[error("no escalation is pending")]
    NoPendingEscalation,
    #[error("escalation has no option `{0}`")]
    UnknownOption(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    Approve { option_id: String },
    Decline,
    Guidance { text: String },
}

/// Human micro-feedback as submitted by the principal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackInput {
    pub text: String,
    #[serde(default = "default_category")]
    pub category: Category,
    #[serde(default)]
    pub target: Option<Target>,
}

fn default_category() -> Category {
    Category::Constraint
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    CounterpartyMessage {
        text: String,
        #[serde(default)]
        structured_values: Option<BTreeMap<FieldId, FieldValue>>,
    },
    PrincipalFeedback(FeedbackInput),
    PrincipalDecision(Decision),
    Timeout,
    /// A round passed without a counterparty reply.
    NoReply,
}

impl Event {
    pub fn say(text: impl Into<String>) -> Self {
        Event::CounterpartyMessage { text: text.into(), structured_values: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delivery {
    /// Passed preflight unchanged.
    Clean,
    /// Binding phrasing replaced before sending.
    Rewritten,
    /// Flagged, but sent on an explicit principal decision.
    Approved,
    /// Sent without preflight (ablation only).
    Unchecked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Send {
        message: Message,
        intent: BTreeMap<FieldId, FieldValue>,
        asks: Option<FieldId>,
        delivery: Delivery,
        approved_by: Option<u64>,
    },
    AwaitPrincipal { trigger: Trigger },
    Closed { outcome: ProtocolState },
}

pub type BusinessLogic = dyn Fn(&Session) -> bool + Send + Sync;

/// Stateless driver holding the pluggable roles. One engine can serve any
/// number of sessions; each session is mutated by one caller at a time.
#[derive(Clone)]
pub struct Engine {
    pub delegate: Arc<dyn DelegatePolicy>,
    pub extractor: Arc<dyn ModelExtractor>,
    /// `None` uses the lexicon moderator built from the session's config.
    pub moderator: Option<Arc<dyn Moderator>>,
    pub critic: Arc<dyn Critic>,
    /// Extra condition for entering NEGOTIATE beyond the information gate.
    pub business_logic: Arc<BusinessLogic>,
    pub sink: Option<Arc<dyn AuditSink>>,
}

impl Default for Engine {
    fn default() -> Self {
        Engine {
            delegate: Arc::new(NaiveDelegate::default()),
            extractor: Arc::new(NoModel),
            moderator: None,
            critic: Arc::new(RuleCritic),
            business_logic: Arc::new(|_| true),
            sink: None,
        }
    }
}

/// Work accumulated while handling one event.
struct Turn {
    moves: Vec<Move>,
    actions: Vec<Action>,
    plan: MergedPlan,
    approved_by: Option<u64>,
}

impl Turn {
    fn new(budget: u32) -> Self {
        Turn { moves: Vec::new(), actions: Vec::new(), plan: MergedPlan::empty(budget), approved_by: None }
    }
}

fn labels() -> Vec<String> {
    let mut l: Vec<String> = CORE_LABELS.iter().map(|s| s.to_string()).collect();
    l.extend(["hostile", "impasse"].map(String::from));
    l
}

/// Largest "nice" step (1, 2.5 or 5 times a power of ten) not above `x`.
fn nice_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let p = 10f64.powf(x.log10().floor());
    [5.0, 2.5, 1.0].into_iter().map(|m| m * p).find(|s| *s <= x).unwrap_or(p)
}

/// Opening range: the upper half of the band, lower end rounded down.
pub fn opening_range(band: &NumericBand) -> (f64, f64) {
    let half = (band.max_value - band.min_value) / 2.0;
    let step = nice_step(half);
    let lo = ((band.min_value + half) / step).floor() * step;
    (lo.max(band.min_value), band.max_value)
}

impl Engine {
    pub fn with_delegate(mut self, d: impl DelegatePolicy + 'static) -> Self {
        self.delegate = Arc::new(d);
        self
    }

    pub fn with_critic(mut self, c: impl Critic + 'static) -> Self {
        self.critic = Arc::new(c);
        self
    }

    pub fn with_sink(mut self, sink: Arc<dyn AuditSink>) -> Self {
        self.sink = Some(sink);
        self
    }

    /// START -> STCC: send the opening question.
    pub fn open(&self, s: &mut Session) -> Result<Vec<Action>, EngineError> {
        if s.state != ProtocolState::Start {
            return Err(EngineError::IllegalTransition { from: s.state, to: ProtocolState::Stcc });
        }
        let mark = s.audit.last_seq();
        s.request_transition(ProtocolState::Stcc, "session opened")?;
        let mut turn = Turn::new(s.settings.budget_tokens);
        let belief = BeliefState::from_priors(&s.config);
        let top = if s.settings.stcc_enabled {
            stcc::rank_attributes(&s.config, &belief, s.settings.rho).into_iter().next()
        } else {
            None
        };
        match top {
            Some(q) => {
                let text = stcc::build_stcc_question(&q);
                let violations = stcc::validate_neutral_compliance(&text, &s.config.lexicons);
                if violations.is_empty() {
                    turn.moves.push(Move::Opening { question: q });
                } else {
                    s.record(AuditKind::SafetyEvent, json!({"kind": "neutrality", "violations": violations}), "opening question not neutral");
                    turn.moves.push(Move::OpenEnded { missing: s.ledger.missing.clone() });
                }
            }
            None => turn.moves.push(Move::OpenEnded { missing: s.ledger.missing.clone() }),
        }
        self.flush(s, &mut turn)?;
        self.forward(s, mark);
        Ok(turn.actions)
    }

    pub fn step(&self, s: &mut Session, event: Event) -> Result<Vec<Action>, EngineError> {
        let mark = s.audit.last_seq();
        let out = match event {
            Event::PrincipalDecision(d) => self.apply_principal_decision(s, d),
            Event::PrincipalFeedback(f) => self.add_feedback(s, f).map(|_| Vec::new()),
            Event::Timeout => self.timeout(s),
            Event::NoReply => self.no_reply(s),
            Event::CounterpartyMessage { text, structured_values } => self.counterparty(s, text, structured_values),
        };
        self.forward(s, mark);
        out
    }

    fn forward(&self, s: &Session, mark: u64) {
        if let Some(sink) = &self.sink {
            // The in-session log stays authoritative; a failing sink is not
            // allowed to wedge the dialogue.
            let _ = sink.append(s.audit.since(mark + 1));
        }
    }

    fn live_check(&self, s: &Session) -> Result<(), EngineError> {
        match s.state {
            ProtocolState::Start => Err(EngineError::NotOpened),
            ProtocolState::Escalate => Err(EngineError::AwaitingPrincipal),
            st if st.is_closed() => Err(EngineError::Terminal(st)),
            _ => Ok(()),
        }
    }

    /// Store principal micro-feedback. Accepted in every state that is not
    /// closed, including ESCALATE, and applied from the next turn on.
    pub fn add_feedback(&self, s: &mut Session, f: FeedbackInput) -> Result<String, EngineError> {
        if s.state.is_closed() {
            return Err(EngineError::Terminal(s.state));
        }
        if f.text.trim().is_empty() {
            return Err(EngineError::Invalid("feedback text is empty".into()));
        }
        if f.category == Category::Persuasion {
            return Err(EngineError::Invalid("human feedback cannot be a persuasion tactic".into()));
        }
        let id = s.feedback.next_id("human");
        let mut item = FeedbackItem::new(id.clone(), Channel::Human, f.category, f.text, s.round);
        item.target = f.target;
        s.record(AuditKind::HumanOverride, json!({"item": item}), "principal feedback stored");
        s.feedback.push(item);
        Ok(id)
    }

    fn timeout(&self, s: &mut Session) -> Result<Vec<Action>, EngineError> {
        if s.state.is_closed() {
            return Err(EngineError::Terminal(s.state));
        }
        s.request_transition(ProtocolState::Stall, "timeout")?;
        Ok(vec![Action::Closed { outcome: ProtocolState::Stall }])
    }

    fn no_reply(&self, s: &mut Session) -> Result<Vec<Action>, EngineError> {
        self.live_check(s)?;
        s.round += 1;
        s.silent_rounds += 1;
        let mut turn = Turn::new(s.settings.budget_tokens);
        if s.silent_rounds >= s.config.thresholds.stall_k {
            s.request_transition(ProtocolState::Stall, "no counterparty reply for stall_k rounds")?;
            turn.actions.push(Action::Closed { outcome: ProtocolState::Stall });
            return Ok(turn.actions);
        }
        if self.round_limit(s, &mut turn)? {
            return Ok(turn.actions);
        }
        turn.moves.push(Move::Recap);
        self.flush(s, &mut turn)?;
        Ok(turn.actions)
    }

    fn counterparty(
        &self,
        s: &mut Session,
        text: String,
        structured: Option<BTreeMap<FieldId, FieldValue>>,
    ) -> Result<Vec<Action>, EngineError> {
        self.live_check(s)?;
        s.round += 1;
        s.silent_rounds = 0;
        let mut msg = Message::counterparty(s.round, text);
        msg.structured_values = structured;
        s.record(AuditKind::Message, json!({"turn": msg.turn, "speaker": Speaker::Counterparty, "text": msg.text,
            "structured_values": msg.structured_values}), "counterparty message received");
        s.history.push(msg);

        let config = s.config.clone();
        let obs = s.ledger.observe(&s.history, &config, self.extractor.as_ref());
        if obs.newly_revealed.is_empty() {
            s.rounds_since_progress += 1;
        } else {
            s.rounds_since_progress = 0;
        }
        let mut new_ambiguities = s.ledger.take_ambiguities();
        if matches!(s.state, ProtocolState::Negotiate | ProtocolState::Summarize) {
            // The negotiated value is expected to move while bargaining.
            let negotiated = s.negotiation.field_id.clone();
            new_ambiguities.retain(|a| Some(&a.field_id) != negotiated.as_ref());
        }
        s.ambiguity_flags.extend(new_ambiguities.iter().cloned());
        let revealed: BTreeMap<&String, &String> = s.ledger.revealed.iter().map(|(k, v)| (k, &v.value)).collect();
        let newly: BTreeMap<&String, &String> =
            obs.newly_revealed.iter().map(|f| (f, &s.ledger.revealed[f].value)).collect();
        let payload = json!({"round": s.round, "state": s.state, "tci": s.ledger.tci, "tci_weighted": s.ledger.tci_weighted,
            "revealed_count": s.ledger.revealed_count(), "required": s.ledger.required, "revealed": revealed,
            "newly_revealed": newly, "missing": s.ledger.missing, "soft_revealed": s.ledger.soft_revealed.keys().collect::<Vec<_>>(),
            "ambiguities": new_ambiguities});
        s.record(AuditKind::TciUpdate, payload, "ledger recomputed");

        let mut turn = Turn::new(s.settings.budget_tokens);

        // Moderator.
        let moderator: Arc<dyn Moderator> = match &self.moderator {
            Some(m) => m.clone(),
            None => Arc::new(LexiconModerator::new(config.lexicons.moderator.clone())),
        };
        let c = moderator_classify(&s.history, &labels(), s.settings.tau_classify, moderator.as_ref());
        if !c.evidence.is_empty() {
            s.record(AuditKind::SafetyEvent, json!({"kind": "moderator", "label": c.label, "confidence": c.confidence,
                "evidence": c.evidence}), "moderator classification");
        }
        match c.label.as_str() {
            "adversarial" => {
                let hits = c.evidence.get("adversarial").copied().unwrap_or(0);
                if hits >= s.settings.strong_adversarial_hits || s.adversarial_probes >= 1 {
                    return self.escalate_simple(s, turn, Trigger::AdversarialSuspected, "Counterparty is probing for confidential information.",
                        vec![format!("adversarial request ({:.2} confidence)", c.confidence)],
                        ("Deflect and continue", "Keeps the conversation going; the counterparty may probe again."));
                }
                s.adversarial_probes += 1;
                s.record(AuditKind::SafetyEvent, json!({"kind": "adversarial_probe_flagged", "confidence": c.confidence}),
                    "single probe deflected");
                turn.moves.push(Move::Deflect);
            }
            "hostile" => {
                return self.escalate_simple(s, turn, Trigger::NegativeSentiment, "Counterparty tone has turned hostile.",
                    vec![format!("hostile language ({:.2} confidence)", c.confidence)],
                    ("Continue with a neutral reply", "Preserves the relationship; may prolong a difficult exchange."));
            }
            _ => {}
        }

        // Feedback channels.
        let last = s.history.last().cloned();
        let mut safety_items = Vec::new();
        let text = Normalized::new(&last.as_ref().map(|m| m.text.clone()).unwrap_or_default());
        for p in config.prohibitions() {
            if let Some(pat) = p.patterns.iter().find(|pat| text.contains(pat)) {
                safety_items.push(
                    FeedbackItem::new(format!("safety-{}-{}", s.round, p.rule_id), Channel::Safety, Category::Warning,
                        format!("Counterparty raised `{pat}`, which is outside authorization."), s.round)
                        .targeting(p.rule_id.clone(), "refuse"),
                );
            }
        }
        let critic = self.critic.suggest(s.state, &config, &s.ledger, last.as_ref(), s.round);
        let gate = s.gate_met();
        match s.feedback.plan_turn(s.round, critic, safety_items, s.settings.budget_tokens, gate) {
            Ok(plan) => {
                if !plan.directives.is_empty() || !plan.excluded.is_empty() {
                    s.record(AuditKind::CriticSuggestion, json!({"directives": plan.directives, "excluded": plan.excluded,
                        "conflicts": plan.conflicts_resolved, "allocation": plan.allocation}), "channels merged");
                }
                let escalation = plan.escalation;
                turn.plan = plan;
                if let Some(trigger) = escalation {
                    let (what, event) = match trigger {
                        Trigger::HumanCriticConflict => ("Critic suggestions keep contradicting a standing instruction.", "repeated human/critic conflict"),
                        _ => ("Counterparty raised a prohibited term.", "safety signal overruled a critic suggestion"),
                    };
                    return self.escalate_simple(s, turn, trigger, what, vec![event.to_string()],
                        ("Decline that request and continue", "Stays within authorization; the counterparty may push back."));
                }
            }
            Err(MergeError::BudgetStarvation { required, budget }) => {
                return self.escalate_simple(s, turn, Trigger::BudgetStarvation, "Standing instructions exceed the context budget.",
                    vec![format!("human and safety items need {required} of {budget} tokens")],
                    ("Continue with instructions as they are", "Some instructions may be truncated."));
            }
            Err(MergeError::ZeroBudget) => return Err(EngineError::Invalid("budget must be positive".into())),
        }

        match s.state {
            ProtocolState::Stcc => {
                s.request_transition(ProtocolState::Screen, "opening question answered")?;
                self.screen_turn(s, turn)
            }
            ProtocolState::Screen => self.screen_turn(s, turn),
            ProtocolState::Negotiate => {
                let impasse = c.label == "impasse";
                self.negotiate_turn(s, turn, impasse)
            }
            ProtocolState::Summarize => self.summarize(s, turn),
            st => Err(EngineError::Terminal(st)),
        }
    }

    fn round_limit(&self, s: &mut Session, turn: &mut Turn) -> Result<bool, EngineError> {
        if s.round < s.config.thresholds.max_rounds || !s.state.is_active() {
            return Ok(false);
        }
        s.request_transition(ProtocolState::NoDeal, "round limit reached")?;
        turn.moves.push(Move::Close { outcome: ProtocolState::NoDeal });
        self.flush(s, turn)?;
        turn.actions.push(Action::Closed { outcome: ProtocolState::NoDeal });
        Ok(true)
    }

    fn next_question(&self, s: &Session) -> Option<FieldId> {
        let belief = BeliefState::from_ledger(&s.config, &s.ledger);
        stcc::rank_screen_fields(&s.config, &belief, &s.ledger.missing, &s.asked).into_iter().next()
    }

    fn screen_turn(&self, s: &mut Session, mut turn: Turn) -> Result<Vec<Action>, EngineError> {
        if let Some(amb) = (!s.ambiguity_flags.is_empty()).then(|| s.ambiguity_flags.remove(0)) {
            turn.moves.push(Move::Clarify { ambiguity: amb });
            return self.finish(s, turn);
        }
        if s.gate_met() && (self.business_logic)(s) {
            s.request_transition(ProtocolState::Negotiate, "information gate met")?;
            self.offer_or_continue(s, &mut turn);
            return self.finish(s, turn);
        }
        if s.is_stalled() {
            return self.escalate_stall(s, turn);
        }
        match self.next_question(s) {
            Some(f) => turn.moves.push(Move::Ask { field_id: f }),
            None => turn.moves.push(Move::OpenEnded { missing: s.ledger.missing.clone() }),
        }
        self.finish(s, turn)
    }

    fn offer_or_continue(&self, s: &Session, turn: &mut Turn) {
        if let (Some(band), None) = (s.negotiated_band(), &s.negotiation.last_offer) {
            let (min, max) = opening_range(band);
            turn.moves.push(Move::Offer { field_id: band.field_id.clone(), min, max, unit: band.unit.clone() });
        } else if let Some(f) = self.next_question(s) {
            turn.moves.push(Move::Ask { field_id: f });
        } else if let Some(offer) = s.negotiation.last_offer.clone() {
            let (field_id, value) = match offer {
                FieldValue::Number(q) => (s.negotiation.field_id.clone().unwrap_or_default(), q),
                FieldValue::Range { max, unit, .. } => (s.negotiation.field_id.clone().unwrap_or_default(), Quantity::new(max, unit)),
                FieldValue::Label(_) => return,
            };
            turn.moves.push(Move::Counter { field_id, value });
        }
    }

    fn counterparty_ask(&self, s: &Session) -> Option<Quantity> {
        let field = s.negotiation.field_id.as_deref()?;
        let unit = s.config.field(field).and_then(|f| f.unit.clone()).or_else(|| s.negotiated_band().map(|b| b.unit.clone()))?;
        let msg = s.history.last()?;
        match msg.value(field) {
            Some(FieldValue::Number(q)) => return Some(q.clone()),
            Some(FieldValue::Range { max, unit, .. }) => return Some(Quantity::new(*max, unit)),
            _ => {}
        }
        safety::scan_amounts(&msg.text)
            .into_iter()
            .filter(|q| q.unit == unit)
            .max_by(|a, b| a.value.total_cmp(&b.value))
    }

    fn negotiate_turn(&self, s: &mut Session, mut turn: Turn, impasse: bool) -> Result<Vec<Action>, EngineError> {
        if !s.ambiguity_flags.is_empty() {
            let amb = s.ambiguity_flags.remove(0);
            s.request_transition(ProtocolState::Screen, "contradictory answer; clarifying")?;
            turn.moves.push(Move::Clarify { ambiguity: amb });
            return self.finish(s, turn);
        }
        let limit = s.config.thresholds.max_rounds.saturating_sub(2);
        if impasse || s.round >= limit {
            let why = if impasse { "impasse detected" } else { "approaching round limit" };
            s.request_transition(ProtocolState::Summarize, why)?;
            return self.summarize(s, turn);
        }
        if let Some(q) = self.counterparty_ask(s) {
            if s.negotiation.offer_covers(&q) {
                s.negotiation.agreed = Some(q.clone());
                s.negotiation.pending_ask = None;
                s.record(AuditKind::SafetyEvent, json!({"kind": "terms_agreed", "value": q.value, "unit": q.unit}), "counterparty accepted the standing offer");
            } else if s.negotiation.agreed.is_none() {
                let field_id = s.negotiation.field_id.clone().unwrap_or_default();
                s.negotiation.pending_ask = Some(q.clone());
                turn.moves.push(Move::Respond { field_id, ask: q });
                return self.finish(s, turn);
            }
        }
        if s.negotiation.agreed.is_some() {
            if s.complete() {
                s.request_transition(ProtocolState::Summarize, "terms agreed and checklist complete")?;
                return self.summarize(s, turn);
            }
            if s.is_stalled() {
                return self.escalate_stall(s, turn);
            }
        }
        self.offer_or_continue(s, &mut turn);
        self.finish(s, turn)
    }

    /// In SUMMARIZE: restate terms and ask for final approval, or close
    /// without a deal when nothing was agreed.
    fn summarize(&self, s: &mut Session, mut turn: Turn) -> Result<Vec<Action>, EngineError> {
        let mut terms: Vec<(FieldId, String)> =
            s.ledger.revealed.iter().map(|(k, v)| (k.clone(), v.value.clone())).collect();
        let agreed = s.negotiation.agreed.clone();
        if let (Some(q), Some(f)) = (&agreed, &s.negotiation.field_id) {
            terms.retain(|(k, _)| k != f);
            terms.push((f.clone(), q.to_string()));
        }
        turn.moves.push(Move::Summary { terms });
        let Some(q) = agreed else {
            self.flush(s, &mut turn)?;
            if s.state == ProtocolState::Summarize {
                s.request_transition(ProtocolState::NoDeal, "no agreed terms to finalize")?;
                turn.moves.push(Move::Close { outcome: ProtocolState::NoDeal });
                self.flush(s, &mut turn)?;
                turn.actions.push(Action::Closed { outcome: ProtocolState::NoDeal });
            }
            return Ok(turn.actions);
        };
        self.flush(s, &mut turn)?;
        if s.state != ProtocolState::Summarize {
            return Ok(turn.actions);
        }
        let field = s.negotiation.field_id.clone().unwrap_or_default();
        let options = vec![
            EscalationOption::new("A", format!("Approve the summarized terms ({field} {q})"), "Closes the agreement on these terms.", OptionEffect::ApproveTerms),
            EscalationOption::new("B", "Decline the terms", "Ends this negotiation without an agreement.", OptionEffect::EndSession),
        ];
        let missing = s.ledger.missing.clone();
        let at_risk = if missing.is_empty() { String::new() } else { format!("Still missing: {}.", missing.join(", ")) };
        self.escalate(s, &mut turn, Trigger::FinalApproval, options, at_risk, Vec::new())?;
        Ok(turn.actions)
    }

    fn escalate_stall(&self, s: &mut Session, mut turn: Turn) -> Result<Vec<Action>, EngineError> {
        let k = s.config.thresholds.stall_k;
        let options = vec![
            EscalationOption::new("A", "Re-ask with a clarified question", "May recover the missing details; adds rounds.", OptionEffect::ResumeScreen),
            EscalationOption::new("B", "End the conversation", "Stops spending effort on an unproductive exchange.", OptionEffect::EndSession),
        ];
        let missing = s.ledger.missing.join(", ");
        self.escalate(s, &mut turn, Trigger::PersistentAmbiguity, options,
            format!("No new information for {k} rounds. Missing: {missing}."), vec![format!("TCI unchanged for {k} rounds")])?;
        Ok(turn.actions)
    }

    fn escalate_simple(
        &self,
        s: &mut Session,
        mut turn: Turn,
        trigger: Trigger,
        at_risk: &str,
        events: Vec<String>,
        continue_option: (&str, &str),
    ) -> Result<Vec<Action>, EngineError> {
        let options = vec![
            EscalationOption::new("A", continue_option.0, continue_option.1, OptionEffect::Continue),
            EscalationOption::new("B", "End the conversation", "Avoids further risk; no agreement is reached.", OptionEffect::EndSession),
        ];
        self.escalate(s, &mut turn, trigger, options, at_risk.to_string(), events)?;
        Ok(turn.actions)
    }

    fn escalate(
        &self,
        s: &mut Session,
        turn: &mut Turn,
        trigger: Trigger,
        options: Vec<EscalationOption>,
        boundary_at_risk: String,
        safety_events: Vec<String>,
    ) -> Result<(), EngineError> {
        let payload = build_escalation_payload(
            EscalationContext {
                phase: s.state,
                history: &s.history,
                ledger: &s.ledger,
                stall_window: s.config.thresholds.stall_k as usize,
                boundary_at_risk,
                safety_events,
            },
            trigger,
            options,
        )
        .map_err(|e| EngineError::Invalid(e.to_string()))?;
        let resume_to = s.state;
        s.request_transition(ProtocolState::Escalate, trigger.as_str())?;
        let seq = s.record(AuditKind::Escalation, json!({"trigger": trigger, "resume_to": resume_to, "payload": payload}), "principal notified; flow paused");
        s.pending_escalation = Some(PendingEscalation { payload, resume_to, escalation_seq: seq });
        turn.actions.push(Action::AwaitPrincipal { trigger });
        Ok(())
    }

    fn finish(&self, s: &mut Session, mut turn: Turn) -> Result<Vec<Action>, EngineError> {
        if s.state.is_active() && s.round >= s.config.thresholds.max_rounds {
            turn.moves.clear();
            self.round_limit(s, &mut turn)?;
            return Ok(turn.actions);
        }
        self.flush(s, &mut turn)?;
        Ok(turn.actions)
    }

    /// Draft the pending moves as one message, run it through preflight and
    /// either deliver it or escalate.
    fn flush(&self, s: &mut Session, turn: &mut Turn) -> Result<(), EngineError> {
        if turn.moves.is_empty() {
            return Ok(());
        }
        let moves = std::mem::take(&mut turn.moves);
        let mut draft = DraftMessage::new("", s.state);
        let mut asks = None;
        let last = s.history.iter().rev().find(|m| m.speaker == Speaker::Counterparty).cloned();
        for mv in &moves {
            let part = self.delegate.draft(&DraftContext {
                state: s.state,
                mv,
                config: &s.config,
                ledger: &s.ledger,
                plan: &turn.plan,
                last_counterparty: last.as_ref(),
            });
            if !part.text.is_empty() {
                if !draft.text.is_empty() {
                    draft.text.push(' ');
                }
                draft.text.push_str(&part.text);
            }
            draft.intent.extend(part.intent);
            if let Some(f) = mv.asks() {
                asks = Some(f.to_string());
            }
        }

        // I1 at the message level: no terms may be put forward while screening.
        let negotiated: Vec<&str> = s.boundaries.iter().filter_map(|b| match b {
            BoundaryRule::NumericBand(n) => Some(n.field_id.as_str()),
            _ => None,
        }).collect();
        if s.state == ProtocolState::Screen && draft.intent.keys().any(|k| negotiated.contains(&k.as_str())) {
            let refusal = s.request_transition(ProtocolState::Negotiate, "delegate proposed terms").err();
            s.record(AuditKind::SafetyEvent, json!({"kind": "premature_offer_blocked", "invariant": "I1",
                "error": refusal.map(|e| e.to_string()), "draft": draft.text}), "offer attempted before the information gate");
            if s.state != ProtocolState::Screen {
                // Gate was in fact met; proceed as a negotiation turn.
                draft.phase = s.state;
            } else {
                let f = self.next_question(s);
                let text = match f.as_deref().and_then(|f| s.config.field(f)) {
                    Some(schema) => stcc::screen_question(schema),
                    None => stcc::open_ended_question(&s.config, &s.ledger.missing),
                };
                asks = f;
                draft = DraftMessage::new(text, s.state);
            }
        }

        if !s.settings.preflight_enabled {
            self.deliver(s, turn, draft, asks, Delivery::Unchecked, None);
            return Ok(());
        }
        let verdict = preflight(&draft, &s.boundaries, &s.config.lexicons);
        if verdict.safe {
            self.deliver(s, turn, draft, asks, Delivery::Clean, None);
            return Ok(());
        }
        let approved = turn.approved_by;
        if verdict.boundary_hits.is_empty() {
            if let Some(rewritten) = verdict.rewritten_text.clone() {
                let again = preflight(&DraftMessage { text: rewritten.clone(), ..draft.clone() }, &s.boundaries, &s.config.lexicons);
                if again.safe {
                    s.record(AuditKind::SafetyEvent, json!({"kind": "binding_rewritten", "severity": "low",
                        "hits": verdict.binding_hits, "original": draft.text, "rewritten": rewritten}), "binding language rewritten before sending");
                    draft.text = rewritten;
                    self.deliver(s, turn, draft, asks, Delivery::Rewritten, None);
                    return Ok(());
                }
            }
        }
        if let Some(seq) = approved {
            let text = verdict.rewritten_text.clone().unwrap_or(draft.text.clone());
            s.record(AuditKind::SafetyEvent, json!({"kind": "approved_override", "verdict": verdict, "approved_by": seq}), "sent on principal approval");
            draft.text = text;
            self.deliver(s, turn, draft, asks, Delivery::Approved, Some(seq));
            return Ok(());
        }
        self.escalate_verdict(s, turn, &draft, verdict)
    }

    fn escalate_verdict(&self, s: &mut Session, turn: &mut Turn, draft: &DraftMessage, v: SafetyVerdict) -> Result<(), EngineError> {
        let mut events: Vec<String> = v.binding_hits.iter().map(|h| format!("binding phrase `{}` detected", h.phrase)).collect();
        events.extend(v.boundary_hits.iter().map(|h| format!("boundary `{}` hit by {}", h.rule_id, h.offending)));
        if let Some(r) = &v.rewrite_refused {
            events.push(format!("rewrite refused: {r}"));
        }
        s.record(AuditKind::SafetyEvent, json!({"kind": "boundary_hit", "severity": "medium", "verdict": v, "draft": draft.text}),
            "draft blocked by preflight");

        let band = s.negotiated_band().cloned();
        let field = s.negotiation.field_id.clone();
        let offending = field.as_ref().and_then(|f| match draft.intent.get(f) {
            Some(FieldValue::Number(q)) => Some(q.clone()),
            Some(FieldValue::Range { min, max, unit }) => {
                let b = band.as_ref()?;
                Some(Quantity::new(if *max > b.max_value { *max } else { *min }, unit))
            }
            _ => None,
        });
        let band_hit = band.as_ref().is_some_and(|b| v.boundary_hits.iter().any(|h| h.rule_id == b.rule_id));
        let (options, at_risk) = match (band, offending, field) {
            (Some(b), Some(q), Some(f)) if band_hit => {
                let edge = Quantity::new(b.clamp(q.value), &b.unit);
                let who = if s.negotiation.pending_ask.as_ref() == Some(&q) { "Counterparty requests" } else { "Draft proposes" };
                let edge_name = if q.value > b.max_value { "top" } else { "bottom" };
                (
                    vec![
                        EscalationOption::new("A", format!("Counter at {edge} ({edge_name} of approved band)"),
                            "Stays within authorization; the counterparty may decline.", OptionEffect::CounterAt { field_id: f.clone(), value: edge }),
                        EscalationOption::new("B", format!("Request budget increase to {q}"), "Meets the request; requires executive approval.",
                            OptionEffect::ExtendBoundary { rule_id: b.rule_id.clone(), min_value: b.min_value.min(q.value), max_value: b.max_value.max(q.value) }),
                        EscalationOption::new("C", "Decline and continue search", "Avoids exceeding the band; delays the outcome.", OptionEffect::EndSession),
                    ],
                    format!("{who} {q}, approved band {}", b.describe()),
                )
            }
            _ => (
                vec![
                    EscalationOption::new("A", "Decline that request and continue", "Stays within authorization; the counterparty may push back.", OptionEffect::Continue),
                    EscalationOption::new("B", "End the conversation", "Avoids further risk; no agreement is reached.", OptionEffect::EndSession),
                ],
                format!("Draft would breach {}", v.boundary_hits.iter().map(|h| h.rule_id.as_str()).collect::<Vec<_>>().join(", ")),
            ),
        };
        self.escalate(s, turn, Trigger::BoundaryViolation, options, at_risk, events)
    }

    fn deliver(&self, s: &mut Session, turn: &mut Turn, draft: DraftMessage, asks: Option<FieldId>, delivery: Delivery, approved_by: Option<u64>) {
        if let Some(f) = &asks {
            *s.asked.entry(f.clone()).or_default() += 1;
        }
        if let Some(field) = &s.negotiation.field_id {
            if let Some(v) = draft.intent.get(field) {
                if s.state == ProtocolState::Negotiate {
                    s.negotiation.last_offer = Some(v.clone());
                }
            }
        }
        let message = Message::new(s.round, Speaker::Delegate, draft.text);
        s.record(AuditKind::Message, json!({"turn": message.turn, "speaker": Speaker::Delegate, "text": message.text,
            "intent": draft.intent, "asks": asks, "delivery": delivery, "approved_by": approved_by, "state": s.state}), "delegate message sent");
        s.history.push(message.clone());
        turn.actions.push(Action::Send { message, intent: draft.intent, asks, delivery, approved_by });
    }

    /// Resolve a pending escalation. Approvals apply the option's effect and
    /// resume; declines end the session; guidance is stored as human
    /// feedback and the session resumes where it paused.
    pub fn apply_principal_decision(&self, s: &mut Session, d: Decision) -> Result<Vec<Action>, EngineError> {
        let pending = s.pending_escalation.clone().ok_or(EngineError::NoPendingEscalation)?;
        if s.state != ProtocolState::Escalate {
            return Err(EngineError::NoPendingEscalation);
        }
        let option = match &d {
            Decision::Approve { option_id } => {
                Some(pending.payload.option(option_id).cloned().ok_or_else(|| EngineError::UnknownOption(option_id.clone()))?)
            }
            Decision::Guidance { text } if text.trim().is_empty() => return Err(EngineError::Invalid("guidance text is empty".into())),
            _ => None,
        };
        let seq = s.record(AuditKind::PrincipalDecision, json!({"decision": d, "escalation_seq": pending.escalation_seq,
            "trigger": pending.payload.trigger, "option": option}), "principal decided");
        let mut turn = Turn::new(s.settings.budget_tokens);
        turn.approved_by = Some(seq);
        s.rounds_since_progress = 0;
        s.stall_baseline = s.ledger.history_of_tci.len().saturating_sub(1);

        let effect = match (&d, option) {
            (Decision::Decline, _) => OptionEffect::EndSession,
            (Decision::Guidance { text }, _) => {
                let id = s.feedback.next_id("human");
                let item = FeedbackItem::new(id, Channel::Human, Category::Constraint, text.clone(), s.round);
                s.record(AuditKind::HumanOverride, json!({"item": item, "source": "guidance"}), "principal guidance stored");
                s.feedback.push(item);
                OptionEffect::Continue
            }
            (_, Some(o)) => o.effect,
            (_, None) => OptionEffect::Continue,
        };
        let trigger = pending.payload.trigger;
        match effect {
            OptionEffect::EndSession => {
                s.request_transition(ProtocolState::NoDeal, "principal ended the session")?;
                turn.moves.push(Move::Close { outcome: ProtocolState::NoDeal });
                self.flush(s, &mut turn)?;
                turn.actions.push(Action::Closed { outcome: ProtocolState::NoDeal });
            }
            OptionEffect::ApproveTerms => {
                s.request_transition(ProtocolState::Agree, "principal approved final terms")?;
                turn.moves.push(Move::Close { outcome: ProtocolState::Agree });
                self.flush(s, &mut turn)?;
                turn.actions.push(Action::Closed { outcome: ProtocolState::Agree });
            }
            OptionEffect::ResumeScreen => {
                s.request_transition(ProtocolState::Screen, "principal asked to re-clarify")?;
                s.asked.clear();
                match self.next_question(s) {
                    Some(f) => turn.moves.push(Move::Ask { field_id: f }),
                    None => turn.moves.push(Move::OpenEnded { missing: s.ledger.missing.clone() }),
                }
                self.flush(s, &mut turn)?;
            }
            OptionEffect::CounterAt { field_id, value } => {
                self.inject(s, format!("Counter at {value} for {field_id}."), Target { key: field_id.clone(), stance: format!("counter:{}", value.value) });
                s.request_transition(pending.resume_to, "principal approved a counter")?;
                s.negotiation.pending_ask = None;
                turn.moves.push(Move::Counter { field_id, value });
                self.flush(s, &mut turn)?;
            }
            OptionEffect::ExtendBoundary { rule_id, min_value, max_value } => {
                let mut desc = String::new();
                for b in s.boundaries.iter_mut() {
                    if let BoundaryRule::NumericBand(n) = b {
                        if n.rule_id == rule_id {
                            n.min_value = min_value;
                            n.max_value = max_value;
                            desc = format!("Authorized band for {} is now {}.", n.field_id, n.describe());
                        }
                    }
                }
                self.inject(s, desc, Target { key: rule_id.clone(), stance: format!("{min_value}-{max_value}") });
                s.record(AuditKind::SafetyEvent, json!({"kind": "boundary_extended", "rule_id": rule_id, "min_value": min_value, "max_value": max_value}),
                    "authorization band widened by principal");
                s.request_transition(pending.resume_to, "principal extended the band")?;
                match (s.negotiation.pending_ask.clone(), s.negotiation.field_id.clone()) {
                    (Some(ask), Some(field_id)) => turn.moves.push(Move::Respond { field_id, ask }),
                    _ => self.offer_or_continue(s, &mut turn),
                }
                self.flush(s, &mut turn)?;
            }
            OptionEffect::Continue => {
                s.request_transition(pending.resume_to, "principal let the session continue")?;
                match trigger {
                    Trigger::AdversarialSuspected => turn.moves.push(Move::Deflect),
                    Trigger::BoundaryViolation => match (s.negotiation.pending_ask.take(), s.negotiated_band().cloned()) {
                        (Some(ask), Some(b)) => {
                            turn.moves.push(Move::Counter { field_id: b.field_id.clone(), value: Quantity::new(b.clamp(ask.value), &b.unit) });
                        }
                        _ => turn.moves.push(Move::DeclineRequest),
                    },
                    _ => {}
                }
                if !matches!(turn.moves.last(), Some(Move::Counter { .. })) {
                    match s.state {
                        ProtocolState::Summarize => {
                            let actions = self.summarize(s, turn)?;
                            return Ok(actions);
                        }
                        ProtocolState::Stcc | ProtocolState::Screen => match self.next_question(s) {
                            Some(f) => turn.moves.push(Move::Ask { field_id: f }),
                            None => turn.moves.push(Move::OpenEnded { missing: s.ledger.missing.clone() }),
                        },
                        _ => self.offer_or_continue(s, &mut turn),
                    }
                }
                self.flush(s, &mut turn)?;
            }
        }
        Ok(turn.actions)
    }

    fn inject(&self, s: &mut Session, text: String, target: Target) {
        let id = s.feedback.next_id("human");
        let mut item = FeedbackItem::new(id, Channel::Human, Category::Constraint, text, s.round);
        item.target = Some(target);
        s.record(AuditKind::HumanOverride, json!({"item": item, "source": "approved_option"}), "approved directive injected");
        s.feedback.push(item);
    }
}
