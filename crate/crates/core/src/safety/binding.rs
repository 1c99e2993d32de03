use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Lexicons;
use crate::text::{sentence_around, Normalized};

pub const APPROVAL_SUFFIX: &str = "subject to approval";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BindingHit {
    pub phrase: String,
    /// Byte span in the scanned text.
    pub span: Range<usize>,
}

/// Binding phrases in `text`, ordered by position. Overlapping matches keep
/// the longest. A match is suppressed when a non-binding hedge appears in the
/// same sentence.
pub fn contains_binding_language(text: &str, lexicons: &Lexicons) -> Vec<BindingHit> {
    let n = Normalized::new(text);
    let mut hits: Vec<BindingHit> = lexicons
        .binding
        .iter()
        .flat_map(|b| n.find_all(&b.phrase).into_iter().map(|span| BindingHit { phrase: b.phrase.clone(), span }))
        .collect();
    hits.sort_by(|a, b| a.span.start.cmp(&b.span.start).then(b.span.end.cmp(&a.span.end)));
    let mut kept: Vec<BindingHit> = Vec::new();
    for h in hits {
        if kept.last().is_some_and(|k| h.span.start < k.span.end) {
            continue;
        }
        let sentence = Normalized::new(&text[sentence_around(text, h.span.start)]);
        if lexicons.nonbinding.iter().any(|nb| sentence.contains(nb)) {
            continue;
        }
        kept.push(h);
    }
    kept
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum RewriteError {
    #[error("no non-binding template for `{phrase}`")]
    NoTemplate { phrase: String },
}

fn match_case(template: &str, original: &str) -> String {
    let upper = original.chars().next().is_some_and(char::is_uppercase);
    let mut chars = template.chars();
    match chars.next() {
        Some(c) if upper => c.to_uppercase().chain(chars).collect(),
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Replace every binding phrase with its configured tentative template and
/// add ", subject to approval" once, at the end of the last rewritten
/// sentence. Text without binding hits is returned unchanged.
pub fn rewrite_non_binding(text: &str, lexicons: &Lexicons) -> Result<String, RewriteError> {
    let hits = contains_binding_language(text, lexicons);
    if hits.is_empty() {
        return Ok(text.to_string());
    }
    let mut out = String::with_capacity(text.len() + 32);
    let mut cursor = 0;
    let mut last_end = 0;
    for h in &hits {
        let template = lexicons
            .binding
            .iter()
            .find(|b| b.phrase == h.phrase)
            .and_then(|b| b.rewrite.as_deref())
            .ok_or_else(|| RewriteError::NoTemplate { phrase: h.phrase.clone() })?;
        out.push_str(&text[cursor..h.span.start]);
        out.push_str(&match_case(template, &text[h.span.clone()]));
        cursor = h.span.end;
        last_end = out.len();
    }
    out.push_str(&text[cursor..]);
    if !Normalized::new(&out).contains(APPROVAL_SUFFIX) {
        let rest = &out[last_end..];
        let insert_at = rest.find(['.', '!', '?', ';']).map_or(out.trim_end().len(), |i| last_end + i);
        out.insert_str(insert_at, &format!(", {APPROVAL_SUFFIX}"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BindingPhrase;

    fn lex() -> Lexicons {
        let b = |p: &str, r: Option<&str>| BindingPhrase { phrase: p.into(), rewrite: r.map(String::from) };
        Lexicons {
            binding: vec![
                b("we commit to", Some("we're exploring")),
                b("we agree to", Some("we're open to discussing")),
                b("we guarantee", Some("we're aiming for")),
                b("it's a deal", None),
            ],
            nonbinding: vec!["exploring".into(), "subject to approval".into(), "for discussion".into()],
            ..Default::default()
        }
    }

    #[test]
    fn detects_commitments() {
        let t = "We commit to ordering 500 units by Friday";
        let hits = contains_binding_language(t, &lex());
        assert_eq!(hits.len(), 1);
        assert_eq!(&t[hits[0].span.clone()], "We commit to");
        assert_eq!(contains_binding_language("We agree to net-30 payment terms", &lex())[0].phrase, "we agree to");
    }

    #[test]
    fn hedged_sentence_is_not_binding() {
        let t = "Based on your experience, we're exploring a $90K\u{2013}$100K range for a January start, subject to approval.";
        assert!(contains_binding_language(t, &lex()).is_empty());
        let t = "We commit to X. We're exploring options elsewhere.";
        assert_eq!(contains_binding_language(t, &lex()).len(), 1);
    }

    #[test]
    fn rewrites_to_tentative() {
        assert_eq!(rewrite_non_binding("We commit to X", &lex()).unwrap(), "We're exploring X, subject to approval");
        assert_eq!(rewrite_non_binding("We commit to X.", &lex()).unwrap(), "We're exploring X, subject to approval.");
    }

    #[test]
    fn two_phrases_one_suffix() {
        let t = "We commit to the rate. Also we agree to net-30!";
        let out = rewrite_non_binding(t, &lex()).unwrap();
        assert!(contains_binding_language(&out, &lex()).is_empty());
        assert_eq!(out.matches(APPROVAL_SUFFIX).count(), 1);
        assert_eq!(out, "We're exploring the rate. Also we're open to discussing net-30, subject to approval!");
    }

    #[test]
    fn missing_template_refuses() {
        assert_eq!(
            rewrite_non_binding("Great, it's a deal.", &lex()),
            Err(RewriteError::NoTemplate { phrase: "it's a deal".into() })
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn chunk() -> impl Strategy<Value = String> {
            prop::sample::select(vec![
                "We commit to", "we agree to", "We guarantee", "the price", "500 units", "exploring", ".", "!", "and",
                "delivery by March", "subject to approval", ";", "We", "commit", "to",
            ])
            .prop_map(String::from)
        }

        proptest! {
            #[test]
            fn rewrite_is_clean_and_idempotent(parts in proptest::collection::vec(chunk(), 0..14)) {
                let t = parts.join(" ");
                let once = rewrite_non_binding(&t, &lex()).unwrap();
                prop_assert!(contains_binding_language(&once, &lex()).is_empty());
                prop_assert_eq!(rewrite_non_binding(&once, &lex()).unwrap(), once);
            }
        }
    }
}
