use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// Separates turns in a serialized problem.
pub const SEP: usize = 4;
/// Separates a query from its answer inside one turn.
pub const ANS: usize = 5;

const SPECIALS: [&str; 6] = ["[PAD]", "[BOS]", "[EOS]", "[UNK]", "[SEP]", "[A]"];

/// Lowercased word-level tokens: alphanumeric runs (with inner apostrophes)
/// and single punctuation marks.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let inner_apostrophe = c == '\''
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || inner_apostrophe {
            cur.extend(c.to_lowercase());
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Special tokens first, then corpus tokens by descending frequency
    /// (ties alphabetical).
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for tok in word_tokens(t) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && !SPECIALS.contains(&w.as_str()))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        word_tokens(text).iter().map(|t| self.id(t)).collect()
    }

    /// Joins word tokens with spaces, dropping PAD/BOS/EOS.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS))
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            word_tokens("What's Veloria's GDP, roughly?"),
            ["what's", "veloria's", "gdp", ",", "roughly", "?"]
        );
        assert_eq!(word_tokens("  'quoted' "), ["'", "quoted", "'"]);
    }

    #[test]
    fn specials_first_then_frequency() {
        let v = Vocabulary::build(["b a a", "c a b"], 1);
        assert_eq!(&v.tokens()[..6], &SPECIALS.map(String::from));
        assert_eq!(&v.tokens()[6..], &["a", "b", "c"]);
        assert_eq!(v.id("zzz"), UNK);
        assert_eq!(v.decode(&[BOS, v.id("a"), UNK, EOS]), "a [UNK]");
        let ids = v.encode("c b a");
        assert_eq!(v.decode(&ids), "c b a");
    }
}
