//! Opening-question selection by expected information gain, plus the
//! SCREEN follow-up order and neutral-phrasing checks.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::domain::{DomainConfig, FieldId, FieldSchema, Lexicons};
use crate::tci::TciLedger;
use crate::text::Normalized;
use crate::{scalar, Bits};

pub const OTHER_OPTION: &str = "Other/Not sure";

/// Gains closer than this rank as ties, so permuted priors with equal
/// entropy fall back to declaration order regardless of summation noise.
const TIE_RESOLUTION: f64 = 1e-9;

fn tie_key(bits: Bits) -> i64 {
    (bits / TIE_RESOLUTION).round() as i64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldBelief {
    pub field_id: FieldId,
    pub probabilities: Vec<f64>,
    pub revealed: bool,
}

/// Factored belief over the required fields, one band distribution each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub fields: Vec<FieldBelief>,
}

impl BeliefState {
    pub fn from_priors(config: &DomainConfig) -> Self {
        BeliefState {
            fields: config
                .fields
                .iter()
                .map(|f| FieldBelief { field_id: f.field_id.clone(), probabilities: f.prior.clone(), revealed: false })
                .collect(),
        }
    }

    /// Priors with every field the ledger has revealed collapsed onto its band.
    pub fn from_ledger(config: &DomainConfig, ledger: &TciLedger) -> Self {
        let mut b = Self::from_priors(config);
        for (id, r) in &ledger.revealed {
            if let Some(band) = config.field(id).and_then(|f| f.band_index(&r.value)) {
                b.reveal(id, band);
            }
        }
        b
    }

    pub fn get(&self, field: &str) -> Option<&FieldBelief> {
        self.fields.iter().find(|f| f.field_id == field)
    }

    /// Collapse `field` onto one band.
    pub fn reveal(&mut self, field: &str, band: usize) {
        if let Some(f) = self.fields.iter_mut().find(|f| f.field_id == field) {
            let n = f.probabilities.len();
            f.probabilities = (0..n).map(|i| if i == band { 1.0 } else { 0.0 }).collect();
            f.revealed = true;
        }
    }

    pub fn entropy_bits(&self, field: &str) -> Bits {
        match self.get(field) {
            Some(f) if !f.revealed => scalar::entropy_bits(&f.probabilities),
            _ => 0.0,
        }
    }

    pub fn total_entropy_bits(&self) -> Bits {
        self.fields.iter().filter(|f| !f.revealed).map(|f| scalar::entropy_bits(&f.probabilities)).sum()
    }
}

/// Expected gain from asking `field` as a multiple-choice question. Any answer
/// pins the band, so the expectation is the field's current entropy.
pub fn expected_ig(field: &FieldSchema, belief: &BeliefState) -> Bits {
    belief.entropy_bits(&field.field_id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionDraft {
    pub field_id: FieldId,
    pub prompt_text: String,
    pub options: Vec<String>,
    pub other_option: bool,
    pub expected_ig_bits: Bits,
    pub risk_score: f64,
}

fn default_prompt(field: &FieldSchema) -> String {
    field.prompt.clone().unwrap_or_else(|| format!("Which best describes your {}?", field.field_id.replace('_', " ")))
}

pub fn draft_for(field: &FieldSchema, belief: &BeliefState) -> QuestionDraft {
    QuestionDraft {
        field_id: field.field_id.clone(),
        prompt_text: default_prompt(field),
        options: field.bands.iter().map(|b| b.label.clone()).collect(),
        other_option: field.auto_banded,
        expected_ig_bits: expected_ig(field, belief),
        risk_score: field.risk,
    }
}

/// Opening-question candidates: unrevealed fields with 3 to 5 bands and
/// `risk <= rho`, by expected gain descending, declaration order on ties.
pub fn rank_attributes(config: &DomainConfig, belief: &BeliefState, rho: f64) -> Vec<QuestionDraft> {
    let mut out: Vec<QuestionDraft> = config
        .fields
        .iter()
        .filter(|f| f.is_stcc_eligible() && f.risk <= rho)
        .filter(|f| belief.get(&f.field_id).is_some_and(|b| !b.revealed))
        .map(|f| draft_for(f, belief))
        .collect();
    out.sort_by_key(|q| std::cmp::Reverse(tie_key(q.expected_ig_bits)));
    out
}

/// `"{prompt} {opt1, opt2, ...}"`, with the escape option last when the
/// bands were generated.
pub fn build_stcc_question(top: &QuestionDraft) -> String {
    let mut options = top.options.clone();
    if top.other_option {
        options.push(OTHER_OPTION.to_string());
    }
    format!("{} {{{}}}", top.prompt_text.trim_end(), options.join(", "))
}

/// Open-ended fallback when no multiple-choice candidate survives filtering.
pub fn open_ended_question(config: &DomainConfig, missing: &[FieldId]) -> String {
    let names: Vec<String> = missing
        .iter()
        .filter(|m| config.field(m).is_some())
        .take(3)
        .map(|m| m.replace('_', " "))
        .collect();
    if names.is_empty() {
        "Could you tell me a bit more about what matters most to you here?".to_string()
    } else {
        format!("Could you tell me a bit more about your situation, for example {}?", names.join(", "))
    }
}

/// SCREEN follow-up order over missing fields: least-asked first, then higher
/// expected gain, then declaration order.
pub fn rank_screen_fields(
    config: &DomainConfig,
    belief: &BeliefState,
    missing: &[FieldId],
    asked: &BTreeMap<FieldId, u32>,
) -> Vec<FieldId> {
    let mut cands: Vec<(u32, Bits, usize, &FieldSchema)> = missing
        .iter()
        .filter_map(|m| config.field_index(m).map(|i| (i, &config.fields[i])))
        .map(|(i, f)| (asked.get(&f.field_id).copied().unwrap_or(0), expected_ig(f, belief), i, f))
        .collect();
    cands.sort_by(|a, b| a.0.cmp(&b.0).then(tie_key(b.1).cmp(&tie_key(a.1))).then(a.2.cmp(&b.2)));
    cands.into_iter().map(|c| c.3.field_id.clone()).collect()
}

/// A follow-up question for one field, enumerating its options.
pub fn screen_question(field: &FieldSchema) -> String {
    build_stcc_question(&QuestionDraft {
        field_id: field.field_id.clone(),
        prompt_text: default_prompt(field),
        options: field.bands.iter().map(|b| b.label.clone()).collect(),
        other_option: field.auto_banded,
        expected_ig_bits: 0.0,
        risk_score: field.risk,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeutralityKind {
    EmptyPrompt,
    Persuasion,
    Leading,
    Binding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeutralityViolation {
    pub kind: NeutralityKind,
    pub phrase: String,
    pub span: Range<usize>,
}

/// Every persuasive, leading or binding phrase in a question draft, or an
/// empty-prompt violation. An empty result means the draft is neutral.
pub fn validate_neutral_compliance(draft: &str, lexicons: &Lexicons) -> Vec<NeutralityViolation> {
    let n = Normalized::new(draft);
    if n.is_empty() {
        return vec![NeutralityViolation { kind: NeutralityKind::EmptyPrompt, phrase: String::new(), span: 0..0 }];
    }
    let mut out = Vec::new();
    let mut scan = |kind, phrases: &mut dyn Iterator<Item = &str>| {
        for p in phrases {
            for span in n.find_all(p) {
                out.push(NeutralityViolation { kind, phrase: p.to_string(), span });
            }
        }
    };
    scan(NeutralityKind::Persuasion, &mut lexicons.persuasion.iter().map(String::as_str));
    scan(NeutralityKind::Leading, &mut lexicons.leading.iter().map(String::as_str));
    scan(NeutralityKind::Binding, &mut lexicons.binding.iter().map(|b| b.phrase.as_str()));
    out.sort_by_key(|v| v.span.start);
    out
}
