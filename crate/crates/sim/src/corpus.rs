//! Labeled commitment phrases for scoring the binding-language detector.

use std::path::Path;

use parley_core::domain::Lexicons;
use parley_core::safety::contains_binding_language;
use parley_core::Fraction;
use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPhrase {
    pub binding: bool,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRates {
    pub positives: usize,
    pub negatives: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    /// Nonbinding phrases flagged, over all nonbinding phrases.
    pub false_pos_rate: Fraction,
    /// Binding phrases missed, over all binding phrases.
    pub false_neg_rate: Fraction,
}

/// Parse `label<TAB>text` lines; labels are `binding` or `nonbinding`.
/// Blank lines and `#` comments are skipped.
pub fn parse_corpus(text: &str) -> Result<Vec<LabeledPhrase>, SimError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .quoting(false)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SimError::Corpus(e.to_string()))?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != 2 {
            return Err(SimError::Corpus(format!("record {}: expected label and text", i + 1)));
        }
        let binding = match rec[0].trim() {
            "binding" => true,
            "nonbinding" => false,
            other => return Err(SimError::Corpus(format!("record {}: unknown label `{other}`", i + 1))),
        };
        out.push(LabeledPhrase { binding, text: rec[1].to_string() });
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<LabeledPhrase>, SimError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    parse_corpus(&text)
}

pub fn detection_rates(corpus: &[LabeledPhrase], lexicons: &Lexicons) -> DetectionRates {
    let mut r = DetectionRates { positives: 0, negatives: 0, false_pos: 0, false_neg: 0, false_pos_rate: 0.0, false_neg_rate: 0.0 };
    for p in corpus {
        let flagged = !contains_binding_language(&p.text, lexicons).is_empty();
        if p.binding {
            r.positives += 1;
            r.false_neg += usize::from(!flagged);
        } else {
            r.negatives += 1;
            r.false_pos += usize::from(flagged);
        }
    }
    let rate = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    r.false_pos_rate = rate(r.false_pos, r.negatives);
    r.false_neg_rate = rate(r.false_neg, r.positives);
    r
}
