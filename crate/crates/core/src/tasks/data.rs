use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::TaskError;
use crate::masker::SEP;

/// Query-POI relevance grades, in class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    Exact,
    High,
    Weak,
    Irrelevant,
}

impl Relevance {
    pub const ALL: [Relevance; 4] = [Relevance::Exact, Relevance::High, Relevance::Weak, Relevance::Irrelevant];

    pub fn class(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(usize),
    Relevance(Relevance),
    /// One BIO tag per word of the text.
    Tags(Vec<String>),
}

impl Label {
    /// Class index for classification and matching labels.
    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            Label::Relevance(r) => Some(r.class()),
            Label::Tags(_) => None,
        }
    }
}

/// One line of a classification, matching or labeling dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub text: String,
    pub label: Label,
}

/// Model input for a query-POI pair.
pub fn matching_text(query: &str, poi_text: &str) -> String {
    format!("{query} {SEP} {poi_text}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeocodingRecord {
    pub text: String,
    pub lat: f64,
    pub lng: f64,
}

/// Visited POIs in order, and the POI visited next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRecord {
    pub history: Vec<String>,
    pub gold: String,
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, TaskError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| TaskError::Parse { path: path.display().to_string(), line: i + 1, msg: e.to_string() })?;
        out.push(value);
    }
    Ok(out)
}
