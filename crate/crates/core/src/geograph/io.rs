use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer};

use super::{GraphError, PoiRecord, QueryRecord, SessionRecord};

#[derive(Deserialize)]
#[serde(untagged)]
enum RawId {
    Text(String),
    Int(i64),
}

impl From<RawId> for String {
    fn from(r: RawId) -> String {
        match r {
            RawId::Text(s) => s,
            RawId::Int(i) => i.to_string(),
        }
    }
}

/// Identifiers may be given as JSON strings or integers.
pub(super) fn id_string<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    RawId::deserialize(d).map(String::from)
}

pub(super) fn id_list<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    Vec::<RawId>::deserialize(d).map(|v| v.into_iter().map(String::from).collect())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, GraphError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| GraphError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_pois(path: impl AsRef<Path>) -> Result<Vec<PoiRecord>, GraphError> {
    read_jsonl(path.as_ref())
}

pub fn read_clicks(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>, GraphError> {
    read_jsonl(path.as_ref())
}

pub fn read_sessions(path: impl AsRef<Path>) -> Result<Vec<SessionRecord>, GraphError> {
    read_jsonl(path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_string_and_numeric_ids() {
        let p: PoiRecord =
            serde_json::from_str(r#"{"poi_id": 17, "name": "A", "address": "B", "type": "C", "lat": 1.0, "lng": 2.0}"#).unwrap();
        assert_eq!(p.poi_id, "17");
        let s: SessionRecord = serde_json::from_str(r#"{"poi_ids": ["a", 3]}"#).unwrap();
        assert_eq!(s.poi_ids, ["a", "3"]);
        let q: QueryRecord = serde_json::from_str(r#"{"query": "x", "poi_id": "a", "count": 2}"#).unwrap();
        assert_eq!(q.clicked_poi_id, "a");
    }

    #[test]
    fn reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pois.jsonl");
        std::fs::write(&path, "{\"poi_id\":\"a\",\"name\":\"A\",\"address\":\"B\",\"type\":\"C\",\"lat\":1,\"lng\":2}\n\n{oops}\n").unwrap();
        match read_pois(&path) {
            Err(GraphError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
