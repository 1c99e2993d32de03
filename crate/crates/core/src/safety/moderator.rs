use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dialogue::{Message, Speaker};
use crate::text::Normalized;

/// Label returned when the classifier abstains.
pub const CLARIFY: &str = "clarify";

/// Labels every moderator label set must contain.
pub const CORE_LABELS: [&str; 4] = ["cooperative", "adversarial", "stalled", "ambiguous"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    pub confidence: f64,
    /// Phrase hits per label behind the decision.
    pub evidence: BTreeMap<String, u32>,
}

/// Conversational risk classifier. Implementations must be shareable across
/// concurrently running sessions.
pub trait Moderator: Send + Sync {
    fn classify(&self, history: &[Message], labels: &[String]) -> Classification;
}

/// Counts lexicon phrases per label in the latest counterparty message and
/// reports the leading label's share of all hits as its confidence.
#[derive(Debug, Clone, Default)]
pub struct LexiconModerator {
    pub lexicon: BTreeMap<String, Vec<String>>,
}

impl LexiconModerator {
    pub fn new(lexicon: BTreeMap<String, Vec<String>>) -> Self {
        LexiconModerator { lexicon }
    }
}

impl Moderator for LexiconModerator {
    fn classify(&self, history: &[Message], labels: &[String]) -> Classification {
        let Some(latest) = history.iter().rev().find(|m| m.speaker == Speaker::Counterparty) else {
            return Classification { label: CLARIFY.into(), confidence: 0.0, evidence: BTreeMap::new() };
        };
        let text = Normalized::new(&latest.text);
        let mut evidence = BTreeMap::new();
        for label in labels {
            let hits: u32 = self
                .lexicon
                .get(label)
                .map(|phrases| phrases.iter().map(|p| text.find_all(p).len() as u32).sum())
                .unwrap_or(0);
            if hits > 0 {
                evidence.insert(label.clone(), hits);
            }
        }
        let total: u32 = evidence.values().sum();
        if total == 0 {
            return Classification { label: CLARIFY.into(), confidence: 0.0, evidence };
        }
        // Highest count; the earlier label in `labels` wins ties.
        let mut best: Option<(&String, u32)> = None;
        for label in labels {
            if let Some(&n) = evidence.get(label) {
                if best.is_none_or(|(_, b)| n > b) {
                    best = Some((label, n));
                }
            }
        }
        let (label, n) = best.expect("some evidence");
        Classification { label: label.clone(), confidence: n as f64 / total as f64, evidence }
    }
}

/// Classify with selective abstention: below `tau_classify` the label is
/// replaced by [`CLARIFY`] and the confidence is kept.
pub fn moderator_classify(
    history: &[Message],
    labels: &[String],
    tau_classify: f64,
    moderator: &dyn Moderator,
) -> Classification {
    let mut c = moderator.classify(history, labels);
    c.confidence = c.confidence.clamp(0.0, 1.0);
    if c.confidence < tau_classify {
        c.label = CLARIFY.into();
    }
    c
}
