//! Tokenization and corpus statistics shared by detection, augmentation and
//! the rule-based text repairs.

use std::collections::{BTreeMap, BTreeSet};

const EDGE_PUNCT: &[char] = &[
    '.', ',', ';', ':', '!', '?', '"', '\'', '(', ')', '[', ']', '{', '}',
];

/// Whitespace tokens, in order, with original surface form.
pub fn raw_tokens(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Normalized form of a surface token: lowercased, sentence punctuation
/// trimmed from both ends.
pub fn normalize(token: &str) -> String {
    token.trim_matches(EDGE_PUNCT).to_lowercase()
}

/// Normalized tokens of `text`. The length of this vector is `|t|`.
pub fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(normalize).collect()
}

/// A token is garbage when, after trimming sentence punctuation, it is empty
/// or contains anything other than alphanumerics, `-` and `_`.
pub fn is_garbage(normalized: &str) -> bool {
    normalized.is_empty()
        || normalized
            .chars()
            .any(|c| !(c.is_alphanumeric() || c == '-' || c == '_'))
}

/// Document frequencies over a corpus of texts.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    num_docs: usize,
    df: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn new<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut num_docs = 0;
        for text in texts {
            num_docs += 1;
            let uniq: BTreeSet<String> = tokens(text).into_iter().collect();
            for tok in uniq {
                *df.entry(tok).or_insert(0) += 1;
            }
        }
        Self { num_docs, df }
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn df(&self, token: &str) -> usize {
        self.df.get(token).copied().unwrap_or(0)
    }

    /// Tokens seen in at least two documents.
    pub fn in_vocabulary(&self, token: &str) -> bool {
        self.df(token) >= 2
    }

    /// `ln(|T| / (1 + df))`, the inverse document frequency of the
    /// informativeness score and of keyword ranking.
    pub fn idf(&self, token: &str) -> f64 {
        (self.num_docs as f64 / (1.0 + self.df(token) as f64)).ln()
    }

    /// Tokens counted as errors: out of vocabulary or garbage.
    pub fn error_count(&self, toks: &[String]) -> usize {
        toks.iter()
            .filter(|t| is_garbage(t) || !self.in_vocabulary(t))
            .count()
    }

    /// Average TF-IDF informativeness, summed over token occurrences and
    /// divided by the token count. Empty text scores 0.
    pub fn informativeness(&self, toks: &[String]) -> f64 {
        if toks.is_empty() {
            return 0.0;
        }
        let len = toks.len() as f64;
        let counts = term_counts(toks);
        toks.iter()
            .map(|w| counts[w.as_str()] as f64 / len * self.idf(w))
            .sum::<f64>()
            / len
    }

    /// Top-`k` non-garbage tokens of `text` by `tf * idf`, ties broken
    /// lexicographically.
    pub fn keywords(&self, text: &str, k: usize) -> Vec<String> {
        let toks = tokens(text);
        if toks.is_empty() {
            return Vec::new();
        }
        let len = toks.len() as f64;
        let mut scored: Vec<(f64, &str)> = term_counts(&toks)
            .into_iter()
            .filter(|(w, _)| !is_garbage(w))
            .map(|(w, c)| (c as f64 / len * self.idf(w), w))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        scored.into_iter().take(k).map(|(_, w)| w.to_string()).collect()
    }
}

pub fn term_counts(toks: &[String]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for t in toks {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
}

/// First `k` sentences (split on `.`, `!`, `?`).
pub fn first_sentences(text: &str, k: usize) -> String {
    let mut out = String::new();
    let mut count = 0;
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?') {
            count += 1;
            if count == k {
                out = text[..i + c.len_utf8()].to_string();
                break;
            }
        }
    }
    if count < k {
        out = text.to_string();
    }
    out.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_and_garbage() {
        assert_eq!(tokens("Graph, neural (network)."), vec!["graph", "neural", "network"]);
        assert!(is_garbage("x7#q"));
        assert!(is_garbage("%%"));
        assert!(!is_garbage("x7q"));
        assert!(!is_garbage("state-of-the-art"));
    }

    #[test]
    fn informativeness_matches_term_by_term_evaluation() {
        let corpus = Corpus::new(["a a b", "a c"]);
        let i1 = corpus.informativeness(&tokens("a a b"));
        // ((2/3) ln(2/3) * 2 + (1/3) ln(2/2)) / 3
        let expected = ((2.0 / 3.0) * (2.0f64 / 3.0).ln() * 2.0 + (1.0 / 3.0) * 0.0) / 3.0;
        assert!((i1 - expected).abs() < 1e-12);
        assert!((i1 - (-0.1802)).abs() < 1e-4);
        assert_eq!(corpus.informativeness(&[]), 0.0);
    }

    #[test]
    fn keyword_ranking() {
        let corpus = Corpus::new(["a a b", "a c"]);
        assert_eq!(corpus.keywords("a a b", 5), vec!["b", "a"]);
        assert!(corpus.keywords("", 5).is_empty());
    }

    #[test]
    fn vocabulary_errors() {
        let corpus = Corpus::new(["graph neural network", "graph neural network x7#q", "q"]);
        let toks = tokens("graph x7#q neural network zzz");
        // x7#q is garbage, zzz unseen
        assert_eq!(corpus.error_count(&toks), 2);
    }

    #[test]
    fn sentences() {
        assert_eq!(first_sentences("One. Two! Three?", 2), "One. Two!");
        assert_eq!(first_sentences("no stop", 2), "no stop");
        assert_eq!(first_sentences("", 2), "");
    }
}
