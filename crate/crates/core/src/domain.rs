//! Domain configuration: required fields, thresholds, authorization
//! boundaries and phrase lexicons for one delegated task.
//!
//! A domain is a single self-contained JSON document with the top-level keys
//! `domain_id`, `thresholds`, `fields`, `boundaries` and `lexicons`. Unknown
//! keys are rejected everywhere so a typo cannot silently change behavior.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar;

pub type FieldId = String;

/// Confidence floor applied to safety-critical fields when the field does
/// not override its own threshold.
pub const SAFETY_CRITICAL_CONFIDENCE: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("schema violation at `{key}`: {reason}")]
    Schema { key: String, reason: String },
    #[error("threshold ordering violated: tau_gate {tau_gate} > tau_complete {tau_complete}")]
    ThresholdOrder { tau_gate: f64, tau_complete: f64 },
    #[error("cannot read config: {0}")]
    Io(String),
}

fn schema(key: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Schema { key: key.into(), reason: reason.into() }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unit mismatch: rule `{rule_id}` is in {expected}, value is in {found}")]
pub struct UnitMismatch {
    pub rule_id: String,
    pub expected: String,
    pub found: String,
}

/// A number with its unit, e.g. `105000 USD` or `95 USD/hour`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quantity {
    pub value: f64,
    pub unit: String,
}

impl Quantity {
    pub fn new(value: f64, unit: impl Into<String>) -> Self {
        Quantity { value, unit: unit.into() }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_amount(self.value, &self.unit))
    }
}

/// Human-readable amount: `$105K`, `$95/hour`, `2025-03-15`, `200 units`.
pub fn format_amount(value: f64, unit: &str) -> String {
    let plain = |v: f64| {
        if v.fract() == 0.0 {
            format!("{}", v as i64)
        } else {
            format!("{v}")
        }
    };
    let money = |v: f64| {
        if v.abs() >= 1000.0 && (v % 1000.0) == 0.0 {
            format!("${}K", (v / 1000.0) as i64)
        } else {
            format!("${}", plain(v))
        }
    };
    match unit {
        "USD" => money(value),
        u if u.starts_with("USD/") => format!("{}/{}", money(value), &u[4..]),
        "yyyymmdd" => {
            let d = value as i64;
            format!("{:04}-{:02}-{:02}", d / 10000, (d / 100) % 100, d % 100)
        }
        u => format!("{} {u}", plain(value)),
    }
}

/// `$90K–$100K`, `$70–$85/hour`, `100–300 units`.
pub fn format_range(min: f64, max: f64, unit: &str) -> String {
    match unit.strip_prefix("USD/") {
        Some(per) => format!("{}\u{2013}{}/{per}", format_amount(min, "USD"), format_amount(max, "USD")),
        None if unit == "USD" || unit == "yyyymmdd" => {
            format!("{}\u{2013}{}", format_amount(min, unit), format_amount(max, unit))
        }
        None => {
            let lo = format_amount(min, unit);
            let lo = lo.strip_suffix(&format!(" {unit}")).unwrap_or(&lo).to_string();
            format!("{lo}\u{2013}{}", format_amount(max, unit))
        }
    }
}

/// A structured value a message or intent asserts for a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Label(String),
    Number(Quantity),
    Range { min: f64, max: f64, unit: String },
}

impl FieldValue {
    pub fn unit(&self) -> Option<&str> {
        match self {
            FieldValue::Label(_) => None,
            FieldValue::Number(q) => Some(&q.unit),
            FieldValue::Range { unit, .. } => Some(unit),
        }
    }

    /// Inclusive numeric extent, `None` for labels.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self {
            FieldValue::Label(_) => None,
            FieldValue::Number(q) => Some((q.value, q.value)),
            FieldValue::Range { min, max, .. } => Some((*min, *max)),
        }
    }
}

impl fmt::Display for FieldValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldValue::Label(l) => f.write_str(l),
            FieldValue::Number(q) => write!(f, "{q}"),
            FieldValue::Range { min, max, unit } => f.write_str(&format_range(*min, *max, unit)),
        }
    }
}

/// One answer option for a field. Numeric bands carry an optional half-open
/// extent `[min, max)`; a missing end is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl Band {
    pub fn labeled(label: impl Into<String>) -> Self {
        Band { label: label.into(), min: None, max: None }
    }

    pub fn is_numeric(&self) -> bool {
        self.min.is_some() || self.max.is_some()
    }

    pub fn contains(&self, v: f64) -> bool {
        self.is_numeric() && self.min.is_none_or(|m| v >= m) && self.max.is_none_or(|m| v < m)
    }
}

/// Split `[min, max]` into `count` bands: an open "under" band, `count - 2`
/// equal-width interior bands, and an open "over" band.
pub fn discretize_to_bands(min: f64, max: f64, count: usize, unit: &str) -> Vec<Band> {
    assert!((3..=5).contains(&count), "band count must be 3..=5");
    assert!(min < max, "empty range");
    let inner = count - 2;
    let width = (max - min) / inner as f64;
    let mut bands = vec![Band {
        label: format!("under {}", format_amount(min, unit)),
        min: None,
        max: Some(min),
    }];
    for i in 0..inner {
        let lo = min + width * i as f64;
        let hi = if i + 1 == inner { max } else { min + width * (i + 1) as f64 };
        bands.push(Band {
            label: format!("{}\u{2013}{}", format_amount(lo, unit), format_amount(hi, unit)),
            min: Some(lo),
            max: Some(hi),
        });
    }
    bands.push(Band { label: format!("over {}", format_amount(max, unit)), min: Some(max), max: None });
    bands
}

/// Pattern-based extraction rule: a case-insensitive regex that, when it
/// matches a counterparty message, reveals `band` with a fixed confidence.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "PatternRuleDoc", into = "PatternRuleDoc")]
pub struct PatternRule {
    pub pattern: String,
    pub band: String,
    pub confidence: f64,
    regex: Regex,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternRuleDoc {
    pattern: String,
    band: String,
    confidence: f64,
}

impl TryFrom<PatternRuleDoc> for PatternRule {
    type Error = String;
    fn try_from(doc: PatternRuleDoc) -> Result<Self, String> {
        let regex = RegexBuilder::new(&doc.pattern)
            .case_insensitive(true)
            .build()
            .map_err(|e| format!("bad pattern `{}`: {e}", doc.pattern))?;
        Ok(PatternRule { pattern: doc.pattern, band: doc.band, confidence: doc.confidence, regex })
    }
}

impl From<PatternRule> for PatternRuleDoc {
    fn from(r: PatternRule) -> Self {
        PatternRuleDoc { pattern: r.pattern, band: r.band, confidence: r.confidence }
    }
}

impl PartialEq for PatternRule {
    fn eq(&self, other: &Self) -> bool {
        self.pattern == other.pattern && self.band == other.band && self.confidence == other.confidence
    }
}

impl PatternRule {
    pub fn new(pattern: &str, band: &str, confidence: f64) -> Result<Self, String> {
        PatternRuleDoc { pattern: pattern.into(), band: band.into(), confidence }.try_into()
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.regex.is_match(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    Lower,
    Higher,
}

/// Principal-side utility scale for a negotiated field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityScale {
    pub prefer: Preference,
    pub min: f64,
    pub max: f64,
}

impl UtilityScale {
    /// Linear rescale of `v` onto `[0, 1]` in the principal's preferred direction.
    pub fn normalize(&self, v: f64) -> f64 {
        if self.max <= self.min {
            return 0.0;
        }
        let t = ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0);
        match self.prefer {
            Preference::Higher => t,
            Preference::Lower => 1.0 - t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldSchemaDoc")]
pub struct FieldSchema {
    pub field_id: FieldId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub bands: Vec<Band>,
    pub weight: f64,
    pub prior: Vec<f64>,
    pub safety_critical: bool,
    /// Static risk score of asking about this field, compared against the
    /// selector's risk budget.
    pub risk: f64,
    /// Bands were generated from a continuous range.
    pub auto_banded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityScale>,
    pub extraction_patterns: Vec<PatternRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DiscretizeDoc {
    min: f64,
    max: f64,
    count: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldSchemaDoc {
    field_id: FieldId,
    #[serde(default)]
    prompt: Option<String>,
    #[serde(default)]
    bands: Option<Vec<Band>>,
    #[serde(default)]
    discretize: Option<DiscretizeDoc>,
    #[serde(default = "one")]
    weight: f64,
    #[serde(default)]
    prior: Option<Vec<f64>>,
    #[serde(default)]
    safety_critical: bool,
    #[serde(default)]
    risk: f64,
    #[serde(default)]
    auto_banded: bool,
    #[serde(default)]
    confidence_threshold: Option<f64>,
    #[serde(default)]
    unit: Option<String>,
    #[serde(default)]
    utility: Option<UtilityScale>,
    #[serde(default)]
    extraction_patterns: Vec<PatternRule>,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<FieldSchemaDoc> for FieldSchema {
    type Error = String;
    fn try_from(doc: FieldSchemaDoc) -> Result<Self, String> {
        let (bands, auto_banded) = match (doc.bands, doc.discretize) {
            (Some(b), None) => (b, doc.auto_banded),
            (None, Some(d)) => {
                if !(3..=5).contains(&d.count) || d.min >= d.max {
                    return Err(format!("field `{}`: discretize needs min < max and 3..=5 bands", doc.field_id));
                }
                let unit = doc.unit.clone().unwrap_or_default();
                (discretize_to_bands(d.min, d.max, d.count, &unit), true)
            }
            (Some(_), Some(_)) => return Err(format!("field `{}`: give either bands or discretize", doc.field_id)),
            (None, None) => return Err(format!("field `{}`: missing field `bands`", doc.field_id)),
        };
        let prior = doc.prior.unwrap_or_else(|| vec![1.0 / bands.len().max(1) as f64; bands.len()]);
        Ok(FieldSchema {
            field_id: doc.field_id,
            prompt: doc.prompt,
            bands,
            weight: doc.weight,
            prior,
            safety_critical: doc.safety_critical,
            risk: doc.risk,
            auto_banded,
            confidence_threshold: doc.confidence_threshold,
            unit: doc.unit,
            utility: doc.utility,
            extraction_patterns: doc.extraction_patterns,
        })
    }
}

impl FieldSchema {
    pub fn band_index(&self, label: &str) -> Option<usize> {
        self.bands.iter().position(|b| b.label == label)
    }

    /// Band whose numeric extent contains `v`.
    pub fn band_for_value(&self, v: f64) -> Option<usize> {
        self.bands.iter().position(|b| b.contains(v))
    }

    /// Fields with 3 to 5 options may be asked as a single multiple-choice question.
    pub fn is_stcc_eligible(&self) -> bool {
        (3..=5).contains(&self.bands.len())
    }
}

/// Inclusive numeric authorization band for one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericBand {
    pub rule_id: String,
    pub field_id: FieldId,
    pub min_value: f64,
    pub max_value: f64,
    pub unit: String,
}

impl NumericBand {
    pub fn describe(&self) -> String {
        format_range(self.min_value, self.max_value, &self.unit)
    }

    /// Nearest authorized value to `v`.
    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min_value, self.max_value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prohibition {
    pub rule_id: String,
    pub patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryRule {
    NumericBand(NumericBand),
    Prohibition(Prohibition),
}

impl BoundaryRule {
    pub fn rule_id(&self) -> &str {
        match self {
            BoundaryRule::NumericBand(b) => &b.rule_id,
            BoundaryRule::Prohibition(p) => &p.rule_id,
        }
    }
}

/// True iff `min_value <= value <= max_value`. Both endpoints are authorized.
pub fn check_value_in_band(rule: &NumericBand, value: &Quantity) -> Result<bool, UnitMismatch> {
    if rule.unit != value.unit {
        return Err(UnitMismatch {
            rule_id: rule.rule_id.clone(),
            expected: rule.unit.clone(),
            found: value.unit.clone(),
        });
    }
    Ok(rule.min_value <= value.value && value.value <= rule.max_value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub tau_gate: f64,
    pub tau_complete: f64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    pub stall_k: u32,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
}

fn default_confidence() -> f64 {
    0.7
}

fn default_max_rounds() -> u32 {
    20
}

/// A binding phrase and, optionally, the tentative phrasing that replaces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "BindingPhraseDoc")]
pub struct BindingPhrase {
    pub phrase: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rewrite: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BindingPhraseDoc {
    Bare(String),
    Full {
        phrase: String,
        #[serde(default)]
        rewrite: Option<String>,
    },
}

impl From<BindingPhraseDoc> for BindingPhrase {
    fn from(doc: BindingPhraseDoc) -> Self {
        match doc {
            BindingPhraseDoc::Bare(phrase) => BindingPhrase { phrase, rewrite: None },
            BindingPhraseDoc::Full { phrase, rewrite } => BindingPhrase { phrase, rewrite },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lexicons {
    pub binding: Vec<BindingPhrase>,
    pub nonbinding: Vec<String>,
    /// Persuasive or urgency wording not allowed in neutral questions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub persuasion: Vec<String>,
    /// Leading constructions ("don't you agree").
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub leading: Vec<String>,
    /// Evidence phrases per moderator label.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub moderator: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub domain_id: String,
    pub thresholds: Thresholds,
    pub fields: Vec<FieldSchema>,
    pub boundaries: Vec<BoundaryRule>,
    pub lexicons: Lexicons,
}

impl DomainConfig {
    pub fn required_fields(&self) -> &[FieldSchema] {
        &self.fields
    }

    pub fn field(&self, id: &str) -> Option<&FieldSchema> {
        self.fields.iter().find(|f| f.field_id == id)
    }

    pub fn field_index(&self, id: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.field_id == id)
    }

    /// Confidence a field's extraction must reach to count as revealed.
    pub fn confidence_threshold(&self, field: &FieldSchema) -> f64 {
        field.confidence_threshold.unwrap_or_else(|| {
            if field.safety_critical {
                self.thresholds.confidence.max(SAFETY_CRITICAL_CONFIDENCE)
            } else {
                self.thresholds.confidence
            }
        })
    }

    pub fn numeric_bands(&self) -> impl Iterator<Item = &NumericBand> {
        self.boundaries.iter().filter_map(|b| match b {
            BoundaryRule::NumericBand(n) => Some(n),
            _ => None,
        })
    }

    pub fn prohibitions(&self) -> impl Iterator<Item = &Prohibition> {
        self.boundaries.iter().filter_map(|b| match b {
            BoundaryRule::Prohibition(p) => Some(p),
            _ => None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.thresholds;
        if t.tau_gate > t.tau_complete {
            return Err(ConfigError::ThresholdOrder { tau_gate: t.tau_gate, tau_complete: t.tau_complete });
        }
        if !(t.tau_gate > 0.0 && t.tau_complete <= 1.0) {
            return Err(schema("thresholds", "need 0 < tau_gate <= tau_complete <= 1"));
        }
        if !(0.0..=1.0).contains(&t.confidence) {
            return Err(schema("thresholds.confidence", "must be in [0, 1]"));
        }
        if t.stall_k < 1 {
            return Err(schema("thresholds.stall_k", "must be >= 1"));
        }
        if t.max_rounds < 1 {
            return Err(schema("thresholds.max_rounds", "must be >= 1"));
        }
        if self.domain_id.trim().is_empty() {
            return Err(schema("domain_id", "must be non-empty"));
        }
        if self.fields.is_empty() {
            return Err(schema("fields", "at least one required field"));
        }
        let mut ids = BTreeSet::new();
        for (i, f) in self.fields.iter().enumerate() {
            let key = |k: &str| format!("fields[{i}].{k}");
            if f.field_id.trim().is_empty() || !ids.insert(f.field_id.as_str()) {
                return Err(schema(key("field_id"), format!("empty or duplicate id `{}`", f.field_id)));
            }
            if f.bands.len() < 2 {
                return Err(schema(key("bands"), "at least two bands"));
            }
            let labels: BTreeSet<_> = f.bands.iter().map(|b| b.label.as_str()).collect();
            if labels.len() != f.bands.len() {
                return Err(schema(key("bands"), "band labels must be unique"));
            }
            if !(f.weight > 0.0 && f.weight <= 1.0) {
                return Err(schema(key("weight"), "must be in (0, 1]"));
            }
            if f.prior.len() != f.bands.len() || !scalar::is_distribution(&f.prior, 1e-9) {
                return Err(schema(key("prior"), "must be a distribution over the bands"));
            }
            if !(0.0..=1.0).contains(&f.risk) {
                return Err(schema(key("risk"), "must be in [0, 1]"));
            }
            if let Some(c) = f.confidence_threshold {
                if !(0.0..=1.0).contains(&c) {
                    return Err(schema(key("confidence_threshold"), "must be in [0, 1]"));
                }
            }
            for (j, p) in f.extraction_patterns.iter().enumerate() {
                if f.band_index(&p.band).is_none() {
                    return Err(schema(
                        format!("fields[{i}].extraction_patterns[{j}].band"),
                        format!("unknown band `{}`", p.band),
                    ));
                }
                if !(0.0..=1.0).contains(&p.confidence) {
                    return Err(schema(format!("fields[{i}].extraction_patterns[{j}].confidence"), "must be in [0, 1]"));
                }
            }
        }
        let mut rule_ids = BTreeSet::new();
        for (i, rule) in self.boundaries.iter().enumerate() {
            if !rule_ids.insert(rule.rule_id()) {
                return Err(schema(format!("boundaries[{i}].rule_id"), "duplicate rule id"));
            }
            match rule {
                BoundaryRule::NumericBand(b) => {
                    if b.min_value > b.max_value {
                        return Err(schema(format!("boundaries[{i}]"), "min_value > max_value"));
                    }
                    let Some(field) = self.field(&b.field_id) else {
                        return Err(schema(format!("boundaries[{i}].field_id"), format!("unknown field `{}`", b.field_id)));
                    };
                    if field.unit.as_deref().is_some_and(|u| u != b.unit) {
                        return Err(schema(format!("boundaries[{i}].unit"), "does not match the field unit"));
                    }
                }
                BoundaryRule::Prohibition(p) => {
                    if p.patterns.is_empty() || p.patterns.iter().any(|s| s.trim().is_empty()) {
                        return Err(schema(format!("boundaries[{i}].patterns"), "must be non-empty"));
                    }
                }
            }
        }
        let lex = &self.lexicons;
        if lex.binding.is_empty() {
            return Err(schema("lexicons.binding", "must be non-empty"));
        }
        if lex.nonbinding.is_empty() {
            return Err(schema("lexicons.nonbinding", "must be non-empty"));
        }
        for (i, b) in lex.binding.iter().enumerate() {
            if b.phrase.trim().is_empty() {
                return Err(schema(format!("lexicons.binding[{i}].phrase"), "must be non-empty"));
            }
            if let Some(rw) = &b.rewrite {
                let n = crate::text::Normalized::new(rw);
                if let Some(hit) = lex.binding.iter().find(|o| n.contains(&o.phrase)) {
                    return Err(schema(
                        format!("lexicons.binding[{i}].rewrite"),
                        format!("rewrite contains binding phrase `{}`", hit.phrase),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Parse and validate a domain configuration document.
pub fn load_domain_config(source: &str) -> Result<DomainConfig, ConfigError> {
    let config: DomainConfig = serde_json::from_str(source).map_err(|e| ConfigError::Parse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_domain_config_file(path: impl AsRef<Path>) -> Result<DomainConfig, ConfigError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| ConfigError::Io(format!("{}: {e}", path.as_ref().display())))?;
    load_domain_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(thresholds: &str, fields: &str) -> String {
        format!(
            r#"{{"domain_id":"t","thresholds":{thresholds},"fields":{fields},"boundaries":[
                {{"rule_id":"band","kind":"numeric_band","field_id":"a","min_value":50000,"max_value":60000,"unit":"USD"}}],
                "lexicons":{{"binding":["we commit to"],"nonbinding":["exploring"]}}}}"#
        )
    }

    const FIELD_A: &str = r#"[{"field_id":"a","bands":[{"label":"x"},{"label":"y"},{"label":"z"}]}]"#;

    #[test]
    fn gate_above_complete_is_an_ordering_error() {
        let src = minimal(r#"{"tau_gate":0.9,"tau_complete":0.7,"stall_k":2}"#, FIELD_A);
        assert!(matches!(load_domain_config(&src), Err(ConfigError::ThresholdOrder { .. })));
    }

    #[test]
    fn empty_checklist_is_a_schema_error() {
        let src = minimal(r#"{"tau_gate":0.7,"tau_complete":0.85,"stall_k":2}"#, "[]");
        match load_domain_config(&src) {
            Err(ConfigError::Schema { key, .. }) => assert_eq!(key, "fields"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        let src = minimal(r#"{"tau_gate":0.7,"tau_complete":0.85,"stall_k":2,"bogus":1}"#, FIELD_A);
        match load_domain_config(&src) {
            Err(ConfigError::Parse(msg)) => assert!(msg.contains("bogus"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let top = minimal(r#"{"tau_gate":0.7,"tau_complete":0.85,"stall_k":2}"#, FIELD_A)
            .replacen("{\"domain_id\"", "{\"extra\":true,\"domain_id\"", 1);
        assert!(matches!(load_domain_config(&top), Err(ConfigError::Parse(m)) if m.contains("extra")));
    }

    #[test]
    fn unknown_band_rule_kind_fields_are_rejected() {
        let src = minimal(r#"{"tau_gate":0.7,"tau_complete":0.85,"stall_k":2}"#, FIELD_A)
            .replace(r#""unit":"USD"}"#, r#""unit":"USD","color":"red"}"#);
        assert!(matches!(load_domain_config(&src), Err(ConfigError::Parse(m)) if m.contains("color")));
    }

    #[test]
    fn prior_must_sum_to_one() {
        let fields = r#"[{"field_id":"a","bands":[{"label":"x"},{"label":"y"}],"prior":[0.5,0.6]}]"#;
        let src = minimal(r#"{"tau_gate":0.7,"tau_complete":0.85,"stall_k":2}"#, fields);
        assert!(matches!(load_domain_config(&src), Err(ConfigError::Schema { key, .. }) if key == "fields[0].prior"));
    }

    #[test]
    fn band_endpoints_are_inclusive() {
        let band = NumericBand {
            rule_id: "b".into(),
            field_id: "price".into(),
            min_value: 50000.0,
            max_value: 60000.0,
            unit: "USD".into(),
        };
        let usd = |v| Quantity::new(v, "USD");
        assert_eq!(check_value_in_band(&band, &usd(65000.0)), Ok(false));
        assert_eq!(check_value_in_band(&band, &usd(55000.0)), Ok(true));
        assert_eq!(check_value_in_band(&band, &usd(60000.0)), Ok(true));
        assert_eq!(check_value_in_band(&band, &usd(50000.0)), Ok(true));
        assert!(check_value_in_band(&band, &Quantity::new(55.0, "USD/hour")).is_err());
    }

    #[test]
    fn compensation_banding() {
        let labels: Vec<_> = discretize_to_bands(60000.0, 120000.0, 4, "USD").into_iter().map(|b| b.label).collect();
        assert_eq!(labels, ["under $60K", "$60K\u{2013}$90K", "$90K\u{2013}$120K", "over $120K"]);
    }

    #[test]
    fn amounts_format_by_unit() {
        assert_eq!(format_amount(105000.0, "USD"), "$105K");
        assert_eq!(format_amount(95.0, "USD/hour"), "$95/hour");
        assert_eq!(format_amount(20250315.0, "yyyymmdd"), "2025-03-15");
        assert_eq!(format_amount(200.0, "units"), "200 units");
    }
}
