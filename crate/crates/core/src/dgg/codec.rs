//! Multi-level geocode: two grid levels packed into three hex characters.
//!
//! Tokens of levels `2n-1` and `2n` have the same length and differ only in
//! their last character. Group `n` stores `[last(2n-1), last(2n), penultimate]`;
//! the characters before the penultimate are the previous even-level token
//! minus its last character, so the full ladder of levels 1..=22 is
//! recoverable from 11 groups.

use std::fmt;
use std::str::FromStr;

use super::cell::{CellId, CellToken};
use super::DggError;

pub const CODE_LEVEL: u8 = 22;
pub const CODE_GROUPS: usize = CODE_LEVEL as usize / 2;
pub const CODE_LEN: usize = CODE_GROUPS * 3;
pub const ALPHABET: &[u8; 16] = b"0123456789abcdef";

/// Position of a lowercase hex character in [`ALPHABET`].
pub fn char_class(c: u8) -> Option<usize> {
    match c {
        b'0'..=b'9' => Some((c - b'0') as usize),
        b'a'..=b'f' => Some((c - b'a') as usize + 10),
        _ => None,
    }
}

/// 33-character code of a level-22 cell.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct MultiLevelCode([u8; CODE_LEN]);

impl MultiLevelCode {
    pub fn encode(cell: CellId) -> Result<Self, DggError> {
        if cell.level() != CODE_LEVEL {
            return Err(DggError::WrongLevel { expected: CODE_LEVEL, got: cell.level() });
        }
        let mut out = [0u8; CODE_LEN];
        for n in 1..=CODE_GROUPS {
            let odd = cell.parent(2 * n as u8 - 1)?.to_token();
            let even = cell.parent(2 * n as u8)?.to_token();
            let (odd, even) = (odd.as_str().as_bytes(), even.as_str().as_bytes());
            debug_assert_eq!(odd.len(), even.len());
            debug_assert_eq!(odd[..odd.len() - 1], even[..even.len() - 1]);
            let g = 3 * (n - 1);
            out[g] = odd[odd.len() - 1];
            out[g + 1] = even[even.len() - 1];
            out[g + 2] = even[even.len() - 2];
        }
        Ok(Self(out))
    }

    /// Builds a code from per-position class indices (0..16).
    pub fn from_classes(classes: &[usize]) -> Result<Self, DggError> {
        if classes.len() != CODE_LEN || classes.iter().any(|&c| c >= 16) {
            return Err(DggError::CodeFormat(format!("{classes:?}")));
        }
        let mut out = [0u8; CODE_LEN];
        for (o, &c) in out.iter_mut().zip(classes) {
            *o = ALPHABET[c];
        }
        Ok(Self(out))
    }

    pub fn classes(&self) -> [usize; CODE_LEN] {
        self.0.map(|c| char_class(c).expect("validated at construction"))
    }

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("ascii")
    }

    pub fn as_bytes(&self) -> &[u8; CODE_LEN] {
        &self.0
    }

    /// Groups separated by spaces, for display only.
    pub fn pretty(&self) -> String {
        pretty_groups(self.as_str())
    }

    /// Token ladder for levels 1..=22.
    pub fn decode(&self) -> Result<Vec<CellToken>, DggError> {
        decode_groups(self.as_str())
    }

    /// The level-22 cell this code names.
    pub fn cell(&self) -> Result<CellId, DggError> {
        let ladder = self.decode()?;
        ladder[ladder.len() - 1].to_cell()
    }
}

pub fn pretty_groups(code: &str) -> String {
    code.as_bytes()
        .chunks(3)
        .map(|g| std::str::from_utf8(g).expect("ascii"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Decodes any whole number of groups (at most 11) into the tokens of
/// levels `1..=2*groups`, validating every token and the parent chain.
pub fn decode_groups(code: &str) -> Result<Vec<CellToken>, DggError> {
    let mut tokens = Vec::with_capacity(code.len() / 3 * 2);
    decode_into(code, &mut tokens)?;
    Ok(tokens)
}

/// The longest valid prefix of the ladder: tokens of levels `1..=k` where
/// level `k + 1` is the first that fails validation. Empty when the code
/// is malformed or level 1 is already invalid.
pub fn decode_consistent_prefix(code: &str) -> Vec<CellToken> {
    let mut tokens = Vec::new();
    let _ = decode_into(code, &mut tokens);
    tokens
}

fn decode_into(code: &str, tokens: &mut Vec<CellToken>) -> Result<(), DggError> {
    let bytes = code.as_bytes();
    if bytes.is_empty() || bytes.len() % 3 != 0 || bytes.len() > CODE_LEN {
        return Err(DggError::CodeFormat(code.to_string()));
    }
    if bytes.iter().any(|&b| char_class(b).is_none()) {
        return Err(DggError::CodeFormat(code.to_string()));
    }
    let mut prefix = String::new();
    let mut prev: Option<CellId> = None;
    for (n, group) in bytes.chunks(3).enumerate() {
        let (last_odd, last_even, penult) = (group[0] as char, group[1] as char, group[2] as char);
        let mut odd = prefix.clone();
        odd.push(penult);
        let mut even = odd.clone();
        odd.push(last_odd);
        even.push(last_even);
        let odd_level = 2 * n as u8 + 1;
        for (text, level) in [(odd, odd_level), (even.clone(), odd_level + 1)] {
            let cell = CellId::from_token(&text).map_err(|_| DggError::Consistency { level, token: text.clone() })?;
            if cell.level() != level {
                return Err(DggError::Consistency { level, token: text });
            }
            if let Some(p) = prev {
                if cell.parent(level - 1)? != p {
                    return Err(DggError::Consistency { level, token: text });
                }
            }
            prev = Some(cell);
            tokens.push(cell.to_token());
        }
        even.pop();
        prefix = even;
    }
    Ok(())
}

impl FromStr for MultiLevelCode {
    type Err = DggError;

    /// Accepts the bare 33-character form; spaces are tolerated and ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: Vec<u8> = s.bytes().filter(|b| *b != b' ').collect();
        if compact.len() != CODE_LEN || compact.iter().any(|&b| char_class(b).is_none()) {
            return Err(DggError::CodeFormat(s.to_string()));
        }
        let mut out = [0u8; CODE_LEN];
        out.copy_from_slice(&compact);
        Ok(Self(out))
    }
}

impl fmt::Display for MultiLevelCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for MultiLevelCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MultiLevelCode({})", self.pretty())
    }
}

impl serde::Serialize for MultiLevelCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> serde::Deserialize<'de> for MultiLevelCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG4_GROUPS: &str = "453cf541f450475";

    #[test]
    fn partial_decode_of_the_five_group_example() {
        let ladder = decode_groups(FIG4_GROUPS).unwrap();
        assert_eq!(ladder.len(), 10);
        assert_eq!(ladder[8], "35f054");
        assert_eq!(ladder[9], "35f057");
        // even-level intermediate tokens from hand application of the recurrence
        assert_eq!(ladder[1], "35");
        assert_eq!(ladder[3], "35f");
        assert_eq!(ladder[5], "35f1");
        assert_eq!(ladder[7], "35f05");
    }

    #[test]
    fn encode_matches_worked_example() {
        let l10 = CellId::from_token("35f057").unwrap();
        let leaf22 = CellId::from_latlng(l10.center(), 22).unwrap();
        assert_eq!(leaf22.parent(10).unwrap(), l10);
        let code = MultiLevelCode::encode(leaf22).unwrap();
        assert_eq!(&code.as_str()[..15], FIG4_GROUPS);
        assert_eq!(&code.as_str()[12..15], "475");
        assert_eq!(&code.pretty()[..19], "453 cf5 41f 450 475");
    }

    #[test]
    fn wrong_level_rejected() {
        let c = CellId::from_token("35f057").unwrap();
        assert!(matches!(MultiLevelCode::encode(c), Err(DggError::WrongLevel { .. })));
    }

    #[test]
    fn format_errors() {
        assert!(decode_groups("").is_err());
        assert!(decode_groups("45").is_err());
        assert!(decode_groups("45g").is_err());
        assert!("453".parse::<MultiLevelCode>().is_err());
        let long = "4".repeat(36);
        assert!(matches!(decode_groups(&long), Err(DggError::CodeFormat(_))));
    }

    #[test]
    fn impossible_ladders_are_consistency_errors() {
        // face 7 in the first group
        assert!(matches!(decode_groups("44f"), Err(DggError::Consistency { .. })));
        // odd level whose last character has no marker in the right place
        assert!(matches!(decode_groups("353"), Err(DggError::Consistency { .. })));
        // second group penultimate disagrees with the level-2 token
        assert!(matches!(decode_groups("453cfa"), Err(DggError::Consistency { .. })));
    }

    #[test]
    fn spaced_form_parses() {
        let l10 = CellId::from_token("35f057").unwrap();
        let code = MultiLevelCode::encode(CellId::from_latlng(l10.center(), 22).unwrap()).unwrap();
        let again: MultiLevelCode = code.pretty().parse().unwrap();
        assert_eq!(again, code);
        assert_eq!(MultiLevelCode::from_classes(&code.classes()).unwrap(), code);
    }
}
