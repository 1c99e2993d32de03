//! Scripted counterparties.

use std::collections::BTreeMap;
use std::path::Path;

use parley_core::domain::{DomainConfig, FieldId, FieldValue, Quantity};
use parley_core::engine::{Action, Event};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaKind {
    Cooperative,
    Adversarial,
    Stalling,
    /// Replies only every other round.
    Slow,
}

impl PersonaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PersonaKind::Cooperative => "cooperative",
            PersonaKind::Adversarial => "adversarial",
            PersonaKind::Stalling => "stalling",
            PersonaKind::Slow => "slow",
        }
    }
}

/// One reply or a pool of interchangeable variants; the run's RNG picks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Replies {
    One(String),
    Pool(Vec<String>),
}

impl Replies {
    pub fn variants(&self) -> &[String] {
        match self {
            Replies::One(s) => std::slice::from_ref(s),
            Replies::Pool(v) => v,
        }
    }

    fn pick(&self, rng: &mut impl Rng) -> String {
        self.variants().choose(rng).cloned().unwrap_or_default()
    }
}

/// Bargaining stance on the negotiated field. The counterparty wants more,
/// opens at `opening` and will settle at `reservation` once it has asked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegotiationRule {
    pub field_id: FieldId,
    pub opening: f64,
    pub reservation: f64,
    /// `{value}` is replaced by the formatted amount.
    pub request: String,
    pub accept: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tactic {
    /// Free-form label (`probe`, `pressure`, ...), kept for reports.
    pub kind: String,
    /// Persona turn (1-based) at which the text is appended to the reply.
    pub turn: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Persona {
    pub persona_id: String,
    pub domain_id: String,
    pub kind: PersonaKind,
    #[serde(default)]
    pub replies: BTreeMap<FieldId, Replies>,
    /// Explicit refusals to answer, per field.
    #[serde(default)]
    pub withhold: BTreeMap<FieldId, Replies>,
    /// Refusal used for every field without a reply or withhold rule.
    #[serde(default)]
    pub default_withhold: Option<Replies>,
    pub negotiation: NegotiationRule,
    #[serde(default)]
    pub tactics: Vec<Tactic>,
    /// Reply when the delegate neither asks nor offers anything.
    pub idle: String,
}

impl Persona {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| SimError::Persona(format!("{}: {e}", path.display())))
    }

    /// Every required field must have a reply or a withhold rule.
    pub fn validate(&self, config: &DomainConfig) -> Result<(), SimError> {
        if self.domain_id != config.domain_id {
            return Err(SimError::Persona(format!(
                "persona `{}` targets domain `{}`, not `{}`",
                self.persona_id, self.domain_id, config.domain_id
            )));
        }
        for f in &config.fields {
            self.rule_for(&f.field_id).ok_or_else(|| SimError::MissingRule(f.field_id.clone()))?;
        }
        if config.field(&self.negotiation.field_id).is_none() {
            return Err(SimError::MissingRule(self.negotiation.field_id.clone()));
        }
        Ok(())
    }

    fn rule_for(&self, field: &str) -> Option<&Replies> {
        self.replies.get(field).or_else(|| self.withhold.get(field)).or(self.default_withhold.as_ref())
    }
}

/// A persona in play: its script plus what it has done so far this run.
#[derive(Debug, Clone)]
pub struct PersonaRun<'a> {
    pub persona: &'a Persona,
    pub unit: String,
    turns: u32,
    requested: bool,
    engine_rounds: u32,
    /// Latest question or offer not yet answered, kept across skipped rounds.
    pending: Option<Prompt>,
}

#[derive(Debug, Clone)]
struct Prompt {
    offered: Option<FieldValue>,
    asks: Option<FieldId>,
}

fn fill(template: &str, q: &Quantity) -> String {
    template.replace("{value}", &q.to_string())
}

impl<'a> PersonaRun<'a> {
    pub fn new(persona: &'a Persona, config: &DomainConfig) -> Self {
        let unit = config
            .field(&persona.negotiation.field_id)
            .and_then(|f| f.unit.clone())
            .or_else(|| config.numeric_bands().find(|b| b.field_id == persona.negotiation.field_id).map(|b| b.unit.clone()))
            .unwrap_or_default();
        PersonaRun { persona, unit, turns: 0, requested: false, engine_rounds: 0, pending: None }
    }

    /// React to the delegate's latest output.
    pub fn respond(&mut self, actions: &[Action], rng: &mut impl Rng) -> Result<Event, SimError> {
        self.engine_rounds += 1;
        let field = &self.persona.negotiation.field_id;
        let latest = actions.iter().rev().find_map(|a| match a {
            Action::Send { intent, asks, .. } if intent.contains_key(field) || asks.is_some() => {
                Some(Prompt { offered: intent.get(field).cloned(), asks: asks.clone() })
            }
            _ => None,
        });
        if latest.is_some() {
            self.pending = latest;
        }
        if self.persona.kind == PersonaKind::Slow && self.engine_rounds.is_multiple_of(2) {
            return Ok(Event::NoReply);
        }
        self.turns += 1;
        let mut text = match self.pending.take() {
            Some(Prompt { offered: Some(v), .. }) => self.bargain(&v),
            Some(Prompt { asks: Some(f), .. }) => {
                self.persona.rule_for(&f).ok_or(SimError::MissingRule(f))?.pick(rng)
            }
            _ => self.persona.idle.clone(),
        };
        for t in self.persona.tactics.iter().filter(|t| t.turn == self.turns) {
            text.push(' ');
            text.push_str(&t.text);
        }
        Ok(Event::CounterpartyMessage { text, structured_values: None })
    }

    fn bargain(&mut self, offered: &FieldValue) -> String {
        let n = &self.persona.negotiation;
        let (low, best) = match offered.bounds() {
            Some(b) => b,
            None => return self.persona.idle.clone(),
        };
        let q = |v: f64| Quantity::new(v, self.unit.clone());
        if best >= n.opening {
            fill(&n.accept, &q(n.opening.max(low)))
        } else if self.requested && best >= n.reservation {
            fill(&n.accept, &q(best))
        } else {
            self.requested = true;
            fill(&n.request, &q(n.opening))
        }
    }
}
