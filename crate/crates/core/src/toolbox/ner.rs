//! Gazetteer entity tagger: greedy, longest-first, word-bounded matches.

use std::collections::BTreeSet;
use std::fs;
use std::ops::Range;
use std::path::Path;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    terms: Vec<Vec<char>>,
}

impl Gazetteer {
    pub fn new<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let unique: BTreeSet<String> = terms
            .into_iter()
            .map(|t| t.as_ref().trim().to_string())
            .filter(|t| !t.is_empty())
            .collect();
        let mut terms: Vec<Vec<char>> = unique.iter().map(|t| t.chars().collect()).collect();
        terms.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        Self { terms }
    }

    /// Newline-delimited term file; blank lines ignored.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(fs::read_to_string(path)?.lines()))
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

fn same_char(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

fn is_boundary(chars: &[char], i: usize) -> bool {
    i == 0 || i == chars.len() || !chars[i - 1].is_alphanumeric() || !chars[i].is_alphanumeric()
}

/// Tagged entities with character spans into `sentence`.
pub fn entity_tag(sentence: &str, gazetteer: &Gazetteer) -> Vec<(String, Range<usize>)> {
    let chars: Vec<char> = sentence.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let at_word_start = i == 0 || !chars[i - 1].is_alphanumeric();
        let hit = at_word_start
            .then(|| {
                gazetteer.terms.iter().find(|term| {
                    let end = i + term.len();
                    end <= chars.len()
                        && term.iter().zip(&chars[i..end]).all(|(a, b)| same_char(*a, *b))
                        && is_boundary(&chars, end)
                })
            })
            .flatten();
        match hit {
            Some(term) => {
                let end = i + term.len();
                out.push((chars[i..end].iter().collect(), i..end));
                i = end;
            }
            None => i += 1,
        }
    }
    out
}

pub fn render_entities(entities: &[(String, Range<usize>)]) -> String {
    if entities.is_empty() {
        return "No entities found.".to_string();
    }
    entities
        .iter()
        .map(|(s, r)| format!("{s} [{}..{}]", r.start, r.end))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn longest_match_wins() {
        let g = Gazetteer::new(["renal failure", "acute renal failure"]);
        let tags = entity_tag("acute renal failure noted", &g);
        assert_eq!(tags, vec![("acute renal failure".to_string(), 0..19)]);
    }

    #[test]
    fn empty_gazetteer() {
        assert!(entity_tag("acute renal failure", &Gazetteer::default()).is_empty());
    }

    #[test]
    fn case_insensitive_and_word_bounded() {
        let g = Gazetteer::new(["renal", "aspirin"]);
        let tags = entity_tag("Adrenal issue; ASPIRIN given, renal ok", &g);
        let surfaces: Vec<&str> = tags.iter().map(|(s, _)| s.as_str()).collect();
        assert_eq!(surfaces, ["ASPIRIN", "renal"]);
    }

    /// Enumerates every word-bounded occurrence, then keeps the leftmost,
    /// longest, non-overlapping ones.
    fn brute_force(sentence: &str, terms: &[&str]) -> Vec<(String, Range<usize>)> {
        let chars: Vec<char> = sentence.chars().collect();
        let lower: Vec<String> = chars.iter().map(|c| c.to_lowercase().collect()).collect();
        let mut candidates = Vec::new();
        for start in 0..chars.len() {
            for end in start + 1..=chars.len() {
                let boundary_ok = (start == 0 || !chars[start - 1].is_alphanumeric())
                    && (end == chars.len() || !chars[end - 1].is_alphanumeric() || !chars[end].is_alphanumeric());
                let slice: String = lower[start..end].concat();
                if boundary_ok && terms.iter().any(|t| t.trim().to_lowercase() == slice && !t.trim().is_empty()) {
                    candidates.push(start..end);
                }
            }
        }
        candidates.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
        let mut chosen: Vec<Range<usize>> = Vec::new();
        for c in candidates {
            if chosen.last().is_none_or(|last| c.start >= last.end) {
                chosen.push(c);
            }
        }
        chosen
            .into_iter()
            .map(|r| (chars[r.clone()].iter().collect(), r))
            .collect()
    }

    #[test]
    fn overlapping_fixture_matches_brute_force() {
        let terms = ["renal", "renal failure", "failure", "chronic renal", "failure of heart", "heart"];
        let sentence = "chronic renal failure of heart and renal failure";
        assert_eq!(entity_tag(sentence, &Gazetteer::new(terms)), brute_force(sentence, &terms));
    }

    proptest! {
        #[test]
        fn agrees_with_brute_force(
            words in proptest::collection::vec(prop::sample::select(vec!["renal", "failure", "acute", "heart", "of", "Renal"]), 0..10),
            terms in proptest::collection::vec(prop::sample::select(vec!["renal", "renal failure", "acute renal", "failure of", "heart", "of heart", "acute renal failure"]), 0..5),
        ) {
            let sentence = words.join(" ");
            prop_assert_eq!(entity_tag(&sentence, &Gazetteer::new(&terms)), brute_force(&sentence, &terms));
        }
    }
}
