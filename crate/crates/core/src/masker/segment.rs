use std::collections::HashSet;
use std::ops::Range;

use super::tokenizer::{Tokenizer, SPECIALS};
use crate::geograph::FIELD_SEPARATOR;

/// Splits a token sequence into non-overlapping entity spans.
pub trait Segmenter: Send + Sync {
    /// Spans cover every non-special token exactly once; special tokens
    /// belong to no span.
    fn segment(&self, tokens: &[String]) -> Vec<Range<usize>>;
}

/// Greedy longest match against an entity dictionary; tokens no entry
/// covers become single-token segments.
#[derive(Debug, Clone, Default)]
pub struct DictionarySegmenter {
    entries: HashSet<Vec<String>>,
    max_len: usize,
}

impl DictionarySegmenter {
    pub fn new<T: Tokenizer + ?Sized>(tokenizer: &T, entities: impl IntoIterator<Item = impl AsRef<str>>) -> Self {
        let mut s = Self::default();
        for e in entities {
            let toks = tokenizer.split(e.as_ref());
            if toks.is_empty() || toks.iter().any(|t| SPECIALS.contains(&t.as_str())) {
                continue;
            }
            s.max_len = s.max_len.max(toks.len());
            s.entries.insert(toks);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Segmenter for DictionarySegmenter {
    fn segment(&self, tokens: &[String]) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            if SPECIALS.contains(&tokens[i].as_str()) {
                i += 1;
                continue;
            }
            let limit = self.max_len.min(tokens.len() - i);
            let found = (2..=limit).rev().find(|&n| {
                let span = &tokens[i..i + n];
                !span.iter().any(|t| SPECIALS.contains(&t.as_str())) && self.entries.contains(span)
            });
            let n = found.unwrap_or(1);
            out.push(i..i + n);
            i += n;
        }
        out
    }
}

/// Entity strings of a POI text: the name, each comma-separated address
/// component, and the type.
pub fn poi_entities(poi_text: &str) -> Vec<String> {
    let sep = format!(" {FIELD_SEPARATOR} ");
    let fields: Vec<&str> = poi_text.split(sep.as_str()).collect();
    let mut out = Vec::new();
    for (i, f) in fields.iter().enumerate() {
        if i == 1 {
            out.extend(f.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from));
        } else if !f.trim().is_empty() {
            out.push(f.trim().to_string());
        }
    }
    out
}

/// Dictionary segmenter over the entities of the given POI texts.
pub fn default_segmenter<'a, T: Tokenizer + ?Sized>(tokenizer: &T, poi_texts: impl IntoIterator<Item = &'a str>) -> DictionarySegmenter {
    DictionarySegmenter::new(tokenizer, poi_texts.into_iter().flat_map(poi_entities))
}
