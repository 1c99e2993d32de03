use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::binding::{contains_binding_language, rewrite_non_binding, BindingHit};
use crate::domain::{check_value_in_band, BoundaryRule, FieldId, FieldValue, Lexicons, NumericBand, Quantity};
use crate::engine::ProtocolState;
use crate::text::Normalized;

/// An outgoing message awaiting preflight. `intent` holds the structured
/// values the text proposes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftMessage {
    pub text: String,
    #[serde(default)]
    pub intent: BTreeMap<FieldId, FieldValue>,
    pub phase: ProtocolState,
}

impl DraftMessage {
    pub fn new(text: impl Into<String>, phase: ProtocolState) -> Self {
        DraftMessage { text: text.into(), intent: BTreeMap::new(), phase }
    }

    pub fn proposing(mut self, field: impl Into<FieldId>, value: FieldValue) -> Self {
        self.intent.insert(field.into(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryHit {
    pub rule_id: String,
    pub offending: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub safe: bool,
    pub requires_approval: bool,
    pub binding_hits: Vec<BindingHit>,
    pub boundary_hits: Vec<BoundaryHit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewritten_text: Option<String>,
    /// Set when a binding phrase has no template, so the draft cannot be
    /// repaired without a human.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite_refused: Option<String>,
}

static AMOUNT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\$\s?(\d{1,3}(?:,\d{3})+|\d+(?:\.\d+)?)\s?(k\b)?(\s*(?:/|per\s+)\s*(?:hour|hr)\b)?").expect("static regex")
});

/// Dollar amounts written in `text`, as `USD` or `USD/hour` quantities.
pub fn scan_amounts(text: &str) -> Vec<Quantity> {
    AMOUNT
        .captures_iter(text)
        .filter_map(|c| {
            let mut v: f64 = c[1].replace(',', "").parse().ok()?;
            if c.get(2).is_some() {
                v *= 1000.0;
            }
            let unit = if c.get(3).is_some() { "USD/hour" } else { "USD" };
            Some(Quantity::new(v, unit))
        })
        .collect()
}

/// Amounts inside a `{...}` option list are answer choices, not proposals.
fn without_option_lists(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut depth = 0usize;
    for c in text.chars() {
        match c {
            '{' => depth += 1,
            '}' if depth > 0 => depth -= 1,
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}

fn check_intent(rule: &NumericBand, value: &FieldValue) -> Option<BoundaryHit> {
    let ends: Vec<Quantity> = match value {
        FieldValue::Label(_) => return None,
        FieldValue::Number(q) => vec![q.clone()],
        FieldValue::Range { min, max, unit } => vec![Quantity::new(*min, unit), Quantity::new(*max, unit)],
    };
    for q in ends {
        match check_value_in_band(rule, &q) {
            Ok(true) => {}
            Ok(false) => return Some(BoundaryHit { rule_id: rule.rule_id.clone(), offending: value.to_string() }),
            Err(e) => return Some(BoundaryHit { rule_id: rule.rule_id.clone(), offending: e.to_string() }),
        }
    }
    None
}

/// Check a draft before it may reach the counterparty: binding language in
/// the text, numeric intent against authorization bands, prohibited phrases.
///
/// Without structured intent, dollar amounts in the text are checked against
/// every band in the same unit instead.
pub fn preflight(draft: &DraftMessage, boundaries: &[BoundaryRule], lexicons: &Lexicons) -> SafetyVerdict {
    let binding_hits = contains_binding_language(&draft.text, lexicons);
    let (rewritten_text, rewrite_refused) = if binding_hits.is_empty() {
        (None, None)
    } else {
        match rewrite_non_binding(&draft.text, lexicons) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };

    let mut boundary_hits = Vec::new();
    let bands: Vec<&NumericBand> = boundaries
        .iter()
        .filter_map(|b| match b {
            BoundaryRule::NumericBand(n) => Some(n),
            _ => None,
        })
        .collect();
    if draft.intent.is_empty() {
        for q in scan_amounts(&without_option_lists(&draft.text)) {
            let same_unit: Vec<&&NumericBand> = bands.iter().filter(|b| b.unit == q.unit).collect();
            if !same_unit.is_empty() && !same_unit.iter().any(|b| check_value_in_band(b, &q) == Ok(true)) {
                let hit = BoundaryHit { rule_id: same_unit[0].rule_id.clone(), offending: q.to_string() };
                if !boundary_hits.contains(&hit) {
                    boundary_hits.push(hit);
                }
            }
        }
    } else {
        for band in &bands {
            if let Some(v) = draft.intent.get(&band.field_id) {
                boundary_hits.extend(check_intent(band, v));
            }
        }
    }
    let text = Normalized::new(&draft.text);
    for rule in boundaries {
        if let BoundaryRule::Prohibition(p) = rule {
            if let Some(pat) = p.patterns.iter().find(|pat| text.contains(pat)) {
                boundary_hits.push(BoundaryHit { rule_id: p.rule_id.clone(), offending: pat.clone() });
            }
        }
    }

    let safe = binding_hits.is_empty() && boundary_hits.is_empty();
    SafetyVerdict { safe, requires_approval: !safe, binding_hits, boundary_hits, rewritten_text, rewrite_refused }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BindingPhrase, Prohibition};

    fn band(id: &str, field: &str, lo: f64, hi: f64, unit: &str) -> BoundaryRule {
        BoundaryRule::NumericBand(NumericBand {
            rule_id: id.into(),
            field_id: field.into(),
            min_value: lo,
            max_value: hi,
            unit: unit.into(),
        })
    }

    fn lex() -> Lexicons {
        Lexicons {
            binding: vec![
                BindingPhrase { phrase: "we commit to".into(), rewrite: Some("we're exploring".into()) },
                BindingPhrase { phrase: "we can deliver".into(), rewrite: Some("we may be able to deliver".into()) },
            ],
            nonbinding: vec!["exploring".into(), "subject to approval".into()],
            ..Default::default()
        }
    }

    fn procurement() -> Vec<BoundaryRule> {
        vec![
            band("price_band", "price", 50000.0, 60000.0, "USD"),
            band("quantity_band", "quantity", 100.0, 300.0, "units"),
            band("delivery_window", "delivery_date", 20250301.0, 20250331.0, "yyyymmdd"),
            BoundaryRule::Prohibition(Prohibition { rule_id: "custom_warranty".into(), patterns: vec!["custom warranty".into()] }),
        ]
    }

    #[test]
    fn boundary_hit_from_intent() {
        let rules = vec![band("comp", "compensation", 80000.0, 100000.0, "USD")];
        let d = DraftMessage::new("Could we make $105K work?", ProtocolState::Negotiate)
            .proposing("compensation", FieldValue::Number(Quantity::new(105000.0, "USD")));
        let v = preflight(&d, &rules, &lex());
        assert!(!v.safe && v.requires_approval);
        assert_eq!(v.boundary_hits[0].rule_id, "comp");
        assert!(v.rewritten_text.is_none());
    }

    #[test]
    fn three_checks_on_a_delivery_promise() {
        let ok = DraftMessage::new("We can deliver 200 units by March 15", ProtocolState::Negotiate)
            .proposing("quantity", FieldValue::Number(Quantity::new(200.0, "units")))
            .proposing("delivery_date", FieldValue::Number(Quantity::new(20250315.0, "yyyymmdd")));
        let v = preflight(&ok, &procurement(), &lex());
        assert_eq!(v.binding_hits.len(), 1);
        assert!(v.boundary_hits.is_empty());
        assert_eq!(v.rewritten_text.as_deref(), Some("We may be able to deliver 200 units by March 15, subject to approval"));
        let late = ok.clone().proposing("delivery_date", FieldValue::Number(Quantity::new(20250415.0, "yyyymmdd")));
        let v = preflight(&late, &procurement(), &lex());
        assert_eq!(v.boundary_hits[0].rule_id, "delivery_window");
        let many = ok.proposing("quantity", FieldValue::Number(Quantity::new(500.0, "units")));
        assert_eq!(preflight(&many, &procurement(), &lex()).boundary_hits[0].offending, "500 units");
    }

    #[test]
    fn empty_draft_is_safe() {
        let v = preflight(&DraftMessage::new("", ProtocolState::Screen), &procurement(), &lex());
        assert!(v.safe && !v.requires_approval);
    }

    #[test]
    fn range_must_fit_entirely() {
        let rules = vec![band("comp", "compensation", 80000.0, 100000.0, "USD")];
        let r = |lo: f64, hi: f64| {
            DraftMessage::new("", ProtocolState::Negotiate)
                .proposing("compensation", FieldValue::Range { min: lo, max: hi, unit: "USD".into() })
        };
        assert!(preflight(&r(90000.0, 100000.0), &rules, &lex()).safe);
        assert!(!preflight(&r(90000.0, 110000.0), &rules, &lex()).safe);
    }

    #[test]
    fn unit_mismatch_is_a_hit() {
        let rules = vec![band("rate", "rate", 70.0, 85.0, "USD/hour")];
        let d = DraftMessage::new("", ProtocolState::Negotiate)
            .proposing("rate", FieldValue::Number(Quantity::new(80.0, "EUR/hour")));
        let v = preflight(&d, &rules, &lex());
        assert!(v.boundary_hits[0].offending.contains("unit mismatch"));
    }

    #[test]
    fn text_fallback_catches_amounts() {
        let rules = vec![band("comp", "compensation", 80000.0, 100000.0, "USD"), band("rate", "rate", 70.0, 85.0, "USD/hour")];
        assert!(preflight(&DraftMessage::new("We're exploring $90K\u{2013}$100K.", ProtocolState::Negotiate), &rules, &lex()).safe);
        let v = preflight(&DraftMessage::new("How about $105,000?", ProtocolState::Negotiate), &rules, &lex());
        assert_eq!(v.boundary_hits[0].offending, "$105K");
        let v = preflight(&DraftMessage::new("We could do $95/hour", ProtocolState::Negotiate), &rules, &lex());
        assert_eq!(v.boundary_hits[0].rule_id, "rate");
        let q = DraftMessage::new("What is your range? {Under $60K, Over $120K}", ProtocolState::Screen);
        assert!(preflight(&q, &rules, &lex()).safe);
        assert_eq!(scan_amounts("$85 per hour and $1.5k"), vec![Quantity::new(85.0, "USD/hour"), Quantity::new(1500.0, "USD")]);
    }

    #[test]
    fn prohibitions_match_loosely() {
        let v = preflight(&DraftMessage::new("Happy to add a CUSTOM   warranty.", ProtocolState::Negotiate), &procurement(), &lex());
        assert_eq!(v.boundary_hits[0].rule_id, "custom_warranty");
    }
}
