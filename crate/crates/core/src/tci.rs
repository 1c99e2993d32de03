//! Field extraction and the Task-Completeness Index ledger.
//!
//! The ledger is the single authority on which checklist fields count as
//! revealed. Once a field is revealed it stays revealed: later contradictory
//! answers raise an [`Ambiguity`] flag instead of un-revealing it, so the TCI
//! series of a session can never decrease.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dialogue::{Message, Speaker};
use crate::domain::{DomainConfig, FieldId, FieldSchema, FieldValue};
use crate::{scalar, Fraction};

/// Margin above the field threshold at which a model extraction is trusted
/// without pattern agreement.
pub const MODEL_HIGH_CONFIDENCE_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionSource {
    Pattern,
    Model,
    Agreement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub field_id: FieldId,
    /// Band label.
    pub value: String,
    pub confidence: f64,
    pub source: ExtractionSource,
    /// Turn of the message the value was read from.
    pub turn: u32,
}

/// Model-based extraction hook. Returns a band label and confidence.
pub trait ModelExtractor: Send + Sync {
    fn extract(&self, history: &[Message], schema: &FieldSchema) -> Option<(String, f64)>;
}

/// The default model extractor: never finds anything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoModel;

impl ModelExtractor for NoModel {
    fn extract(&self, _: &[Message], _: &FieldSchema) -> Option<(String, f64)> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExtractOutcome {
    Found(Extraction),
    /// A candidate exists but the extractors disagree, or only an
    /// insufficiently confident model reading exists.
    Unconfirmed(Extraction),
    Absent,
}

fn pattern_hits<'a>(msg: &'a Message, schema: &'a FieldSchema) -> impl Iterator<Item = (&'a str, f64)> + 'a {
    schema
        .extraction_patterns
        .iter()
        .filter(move |r| r.is_match(&msg.text))
        .map(|r| (r.band.as_str(), r.confidence))
        .chain(structured_hit(msg, schema))
}

/// A structured value supplied with the message reads as certain.
fn structured_hit<'a>(msg: &'a Message, schema: &'a FieldSchema) -> Option<(&'a str, f64)> {
    let idx = match msg.value(&schema.field_id)? {
        FieldValue::Label(l) => schema.band_index(l)?,
        FieldValue::Number(q) => schema.band_for_value(q.value)?,
        FieldValue::Range { min, max, .. } => schema.band_for_value((min + max) / 2.0)?,
    };
    Some((schema.bands[idx].label.as_str(), 1.0))
}

/// Best pattern reading of a single message: highest confidence, first rule on ties.
pub fn pattern_reading(msg: &Message, schema: &FieldSchema) -> Option<Extraction> {
    if msg.speaker != Speaker::Counterparty {
        return None;
    }
    let mut best: Option<(&str, f64)> = None;
    for (band, conf) in pattern_hits(msg, schema) {
        if best.is_none_or(|(_, c)| conf > c) {
            best = Some((band, conf));
        }
    }
    best.map(|(band, confidence)| Extraction {
        field_id: schema.field_id.clone(),
        value: band.to_string(),
        confidence,
        source: ExtractionSource::Pattern,
        turn: msg.turn,
    })
}

/// Highest-confidence pattern reading across the counterparty's messages;
/// the latest message wins ties.
pub fn pattern_candidate(history: &[Message], schema: &FieldSchema) -> Option<Extraction> {
    history
        .iter()
        .filter_map(|m| pattern_reading(m, schema))
        .fold(None, |best: Option<Extraction>, e| match best {
            Some(b) if b.confidence > e.confidence => Some(b),
            _ => Some(e),
        })
}

/// Combine the pattern and model extractors for one field.
///
/// Agreement yields `source = agreement` at the larger confidence. A model
/// reading on its own, or one that contradicts the pattern reading, is
/// accepted only at `threshold + MODEL_HIGH_CONFIDENCE_MARGIN`.
pub fn extract_candidate(
    history: &[Message],
    schema: &FieldSchema,
    model: &dyn ModelExtractor,
    threshold: f64,
) -> ExtractOutcome {
    let pattern = pattern_candidate(history, schema);
    let last_turn = history.last().map_or(0, |m| m.turn);
    let model = model
        .extract(history, schema)
        .filter(|(band, _)| schema.band_index(band).is_some())
        .map(|(value, confidence)| Extraction {
            field_id: schema.field_id.clone(),
            value,
            confidence: confidence.clamp(0.0, 1.0),
            source: ExtractionSource::Model,
            turn: last_turn,
        });
    let high = threshold + MODEL_HIGH_CONFIDENCE_MARGIN;
    match (pattern, model) {
        (None, None) => ExtractOutcome::Absent,
        (Some(p), None) => ExtractOutcome::Found(p),
        (None, Some(m)) if scalar::meets(m.confidence, high) => ExtractOutcome::Found(m),
        (None, Some(m)) => ExtractOutcome::Unconfirmed(m),
        (Some(p), Some(m)) if p.value == m.value => ExtractOutcome::Found(Extraction {
            confidence: p.confidence.max(m.confidence),
            source: ExtractionSource::Agreement,
            turn: p.turn.max(m.turn),
            ..p
        }),
        (Some(_), Some(m)) if scalar::meets(m.confidence, high) => ExtractOutcome::Found(m),
        (Some(p), Some(m)) => ExtractOutcome::Unconfirmed(if m.confidence > p.confidence { m } else { p }),
    }
}

/// Extraction for one field, or `None` when nothing was found or the
/// extractors disagree.
pub fn extract_field(
    history: &[Message],
    schema: &FieldSchema,
    model: &dyn ModelExtractor,
    threshold: f64,
) -> Option<Extraction> {
    match extract_candidate(history, schema, model, threshold) {
        ExtractOutcome::Found(e) => Some(e),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealedField {
    pub value: String,
    pub confidence: f64,
    pub turn: u32,
    pub source: ExtractionSource,
}

/// A confident later reading that contradicts an already revealed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ambiguity {
    pub field_id: FieldId,
    pub revealed: String,
    pub contradicting: String,
    pub turn: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TciLedger {
    pub revealed: BTreeMap<FieldId, RevealedField>,
    pub soft_revealed: BTreeMap<FieldId, Extraction>,
    pub tci: Fraction,
    pub tci_weighted: Fraction,
    pub missing: Vec<FieldId>,
    pub history_of_tci: Vec<Fraction>,
    pub required: usize,
    /// Contradictions not yet consumed by the engine.
    pub ambiguities: Vec<Ambiguity>,
}

/// What changed in one ledger observation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observation {
    pub newly_revealed: Vec<FieldId>,
    pub ambiguities: Vec<Ambiguity>,
}

impl TciLedger {
    pub fn new(config: &DomainConfig) -> Self {
        TciLedger {
            revealed: BTreeMap::new(),
            soft_revealed: BTreeMap::new(),
            tci: 0.0,
            tci_weighted: 0.0,
            missing: config.fields.iter().map(|f| f.field_id.clone()).collect(),
            history_of_tci: Vec::new(),
            required: config.fields.len(),
            ambiguities: Vec::new(),
        }
    }

    pub fn revealed_count(&self) -> usize {
        self.revealed.len()
    }

    pub fn is_revealed(&self, field: &str) -> bool {
        self.revealed.contains_key(field)
    }

    /// Fold the current history into the ledger and record one TCI sample.
    pub fn observe(&mut self, history: &[Message], config: &DomainConfig, model: &dyn ModelExtractor) -> Observation {
        let mut obs = Observation::default();
        let latest = history.iter().rev().find(|m| m.speaker == Speaker::Counterparty);
        for schema in &config.fields {
            let threshold = config.confidence_threshold(schema);
            if let Some(known) = self.revealed.get(&schema.field_id) {
                let reading = latest.and_then(|m| pattern_reading(m, schema));
                if let Some(r) = reading {
                    if r.value != known.value && scalar::meets(r.confidence, threshold) && r.turn > known.turn {
                        obs.ambiguities.push(Ambiguity {
                            field_id: schema.field_id.clone(),
                            revealed: known.value.clone(),
                            contradicting: r.value,
                            turn: r.turn,
                        });
                    }
                }
                continue;
            }
            match extract_candidate(history, schema, model, threshold) {
                ExtractOutcome::Found(e) if scalar::meets(e.confidence, threshold) => {
                    self.soft_revealed.remove(&schema.field_id);
                    obs.newly_revealed.push(schema.field_id.clone());
                    self.revealed.insert(
                        schema.field_id.clone(),
                        RevealedField { value: e.value, confidence: e.confidence, turn: e.turn, source: e.source },
                    );
                }
                ExtractOutcome::Found(e) | ExtractOutcome::Unconfirmed(e) => {
                    self.soft_revealed.insert(schema.field_id.clone(), e);
                }
                ExtractOutcome::Absent => {}
            }
        }
        self.recompute(config);
        self.history_of_tci.push(self.tci);
        self.ambiguities.extend(obs.ambiguities.iter().cloned());
        obs
    }

    fn recompute(&mut self, config: &DomainConfig) {
        let n = config.fields.len();
        self.required = n;
        self.tci = if n == 0 { 0.0 } else { self.revealed.len() as f64 / n as f64 };
        let weights: Vec<f64> = config.fields.iter().map(|f| f.weight).collect();
        let selected: Vec<bool> = config.fields.iter().map(|f| self.revealed.contains_key(&f.field_id)).collect();
        self.tci_weighted = scalar::weighted_fraction(&weights, &selected);
        self.missing = config
            .fields
            .iter()
            .filter(|f| !self.revealed.contains_key(&f.field_id))
            .map(|f| f.field_id.clone())
            .collect();
    }

    pub fn take_ambiguities(&mut self) -> Vec<Ambiguity> {
        std::mem::take(&mut self.ambiguities)
    }
}

/// Build a ledger from scratch by replaying the history one counterparty
/// message at a time, using the no-op model extractor.
pub fn compute_tci(history: &[Message], config: &DomainConfig) -> TciLedger {
    compute_tci_with(history, config, &NoModel)
}

pub fn compute_tci_with(history: &[Message], config: &DomainConfig, model: &dyn ModelExtractor) -> TciLedger {
    let mut ledger = TciLedger::new(config);
    for (i, m) in history.iter().enumerate() {
        if m.speaker == Speaker::Counterparty {
            ledger.observe(&history[..=i], config, model);
        }
    }
    ledger.ambiguities.clear();
    ledger
}

/// True iff the last `k` steps of `series` show no change. A series with
/// fewer than `k + 1` samples is never stalled.
pub fn is_stalled<T: PartialEq>(series: &[T], k: usize) -> bool {
    if k == 0 || series.len() < k + 1 {
        return false;
    }
    let tail = &series[series.len() - k - 1..];
    tail.windows(2).all(|w| w[0] == w[1])
}
