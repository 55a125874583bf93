use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tokenizer::Tokenizer;

/// Largest normalized edit distance at which a query word is taken to be a
/// misspelling of a name word.
pub const MAX_NORMALIZED_DISTANCE: f64 = 0.5;

/// Correct word to observed misspellings with their frequencies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MisspellLexicon {
    entries: BTreeMap<String, BTreeMap<String, u64>>,
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn normalized_distance(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        0.0
    } else {
        levenshtein(a, b) as f64 / longest as f64
    }
}

fn is_word(t: &str) -> bool {
    t.chars().any(char::is_alphanumeric)
}

impl MisspellLexicon {
    /// Mines misspellings from `(query, poi name)` click pairs. Each query
    /// word absent from the name attaches to the closest name word, if that
    /// word is within [`MAX_NORMALIZED_DISTANCE`].
    pub fn build<T, I, Q, N>(tokenizer: &T, pairs: I) -> Self
    where
        T: Tokenizer + ?Sized,
        I: IntoIterator<Item = (Q, N)>,
        Q: AsRef<str>,
        N: AsRef<str>,
    {
        let mut lex = Self::default();
        for (query, name) in pairs {
            let name_words: Vec<String> = tokenizer.split(name.as_ref()).into_iter().filter(|w| is_word(w)).collect();
            for q in tokenizer.split(query.as_ref()).into_iter().filter(|w| is_word(w)) {
                if name_words.contains(&q) {
                    continue;
                }
                let best = name_words
                    .iter()
                    .map(|n| (normalized_distance(&q, n), n))
                    .fold(None, |acc: Option<(f64, &String)>, (d, n)| match acc {
                        Some((bd, _)) if bd <= d => acc,
                        _ => Some((d, n)),
                    });
                if let Some((d, n)) = best {
                    if d <= MAX_NORMALIZED_DISTANCE {
                        lex.add(n, &q, 1);
                    }
                }
            }
        }
        lex
    }

    pub fn add(&mut self, correct: &str, misspelled: &str, count: u64) {
        if correct != misspelled {
            *self.entries.entry(correct.to_string()).or_default().entry(misspelled.to_string()).or_default() += count;
        }
    }

    pub fn misspellings(&self, word: &str) -> Vec<(&str, u64)> {
        self.entries.get(word).map(|m| m.iter().map(|(k, v)| (k.as_str(), *v)).collect()).unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, u64>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}
