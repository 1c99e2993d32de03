//! Case-insensitive, whitespace-normalized phrase matching with spans back
//! into the original text.

use std::ops::Range;

/// A text lowered and whitespace-collapsed, remembering where each normalized
/// char came from in the source string.
#[derive(Debug, Clone)]
pub struct Normalized {
    chars: Vec<char>,
    /// Byte range in the source for each normalized char.
    origin: Vec<Range<usize>>,
}

fn fold_char(c: char) -> char {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{02BC}' => '\'',
        '\u{201C}' | '\u{201D}' => '"',
        '\u{2013}' | '\u{2014}' => '-',
        _ => c,
    }
}

impl Normalized {
    pub fn new(text: &str) -> Self {
        let mut chars = Vec::with_capacity(text.len());
        let mut origin: Vec<Range<usize>> = Vec::with_capacity(text.len());
        let mut pending_space: Option<Range<usize>> = None;
        for (i, c) in text.char_indices() {
            let span = i..i + c.len_utf8();
            if c.is_whitespace() {
                pending_space = Some(match pending_space {
                    Some(r) => r.start..span.end,
                    None => span,
                });
                continue;
            }
            if let Some(space) = pending_space.take() {
                if !chars.is_empty() {
                    chars.push(' ');
                    origin.push(space);
                }
            }
            for lc in fold_char(c).to_lowercase() {
                chars.push(lc);
                origin.push(span.clone());
            }
        }
        Normalized { chars, origin }
    }

    pub fn as_string(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Every word-bounded occurrence of `phrase`, as byte ranges into the source.
    pub fn find_all(&self, phrase: &str) -> Vec<Range<usize>> {
        let needle = Normalized::new(phrase).chars;
        if needle.is_empty() || needle.len() > self.chars.len() {
            return Vec::new();
        }
        let mut hits = Vec::new();
        let mut i = 0;
        while i + needle.len() <= self.chars.len() {
            if self.chars[i..i + needle.len()] == needle[..] && self.bounded(i, i + needle.len(), &needle) {
                hits.push(self.origin[i].start..self.origin[i + needle.len() - 1].end);
                i += needle.len();
            } else {
                i += 1;
            }
        }
        hits
    }

    pub fn contains(&self, phrase: &str) -> bool {
        !self.find_all(phrase).is_empty()
    }

    fn bounded(&self, start: usize, end: usize, needle: &[char]) -> bool {
        let word = |c: char| c.is_alphanumeric();
        let left_ok = start == 0 || !word(needle[0]) || !word(self.chars[start - 1]);
        let right_ok =
            end == self.chars.len() || !word(needle[needle.len() - 1]) || !word(self.chars[end]);
        left_ok && right_ok
    }
}

/// Byte range of the sentence containing `pos`. Sentences end at `.`, `!`, `?`
/// or `;` (the terminator belongs to the sentence it ends).
pub fn sentence_around(text: &str, pos: usize) -> Range<usize> {
    let is_end = |c: char| matches!(c, '.' | '!' | '?' | ';');
    let mut start = 0;
    let mut end = text.len();
    for (i, c) in text.char_indices() {
        if !is_end(c) {
            continue;
        }
        let after = i + c.len_utf8();
        if after <= pos {
            start = after;
        } else if i >= pos {
            end = after;
            break;
        }
    }
    start..end
}

/// Token cost estimate: characters / 4, rounded up.
pub fn token_cost(text: &str) -> u32 {
    let chars = text.chars().count() as u32;
    chars.div_ceil(4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_across_case_and_whitespace() {
        let n = Normalized::new("Well,   WE\tCommit  to it");
        let hits = n.find_all("we commit to");
        assert_eq!(hits.len(), 1);
        assert_eq!(&"Well,   WE\tCommit  to it"[hits[0].clone()], "WE\tCommit  to");
    }

    #[test]
    fn respects_word_boundaries() {
        let n = Normalized::new("an ideal dealer");
        assert!(n.find_all("deal").is_empty());
        assert_eq!(Normalized::new("it's a deal.").find_all("deal").len(), 1);
    }

    #[test]
    fn curly_apostrophes_fold() {
        assert!(Normalized::new("We\u{2019}re exploring").contains("we're exploring"));
    }

    #[test]
    fn sentence_spans() {
        let t = "We commit to X. We're flexible elsewhere.";
        assert_eq!(&t[sentence_around(t, 3)], "We commit to X.");
        assert_eq!(&t[sentence_around(t, 20)], " We're flexible elsewhere.");
    }

    #[test]
    fn token_cost_rounds_up() {
        assert_eq!(token_cost(""), 0);
        assert_eq!(token_cost("abcd"), 1);
        assert_eq!(token_cost("abcde"), 2);
    }
}
