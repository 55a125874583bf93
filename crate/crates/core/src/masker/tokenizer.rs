use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufRead, Write};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

/// Splits text into word tokens. Implementations must be deterministic.
pub trait Tokenizer: Send + Sync {
    fn split(&self, text: &str) -> Vec<String>;
}

/// Whitespace tokenizer that also peels leading and trailing punctuation
/// into separate tokens and isolates CJK ideographs. Special-token literals
/// such as `[SEP]` pass through untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordTokenizer;

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0xF900..=0xFAFF | 0x2F800..=0x2FA1F)
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !is_cjk(c))
}

impl Tokenizer for WordTokenizer {
    fn split(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for piece in text.split_whitespace() {
            if SPECIALS.contains(&piece) {
                out.push(piece.to_string());
                continue;
            }
            let chars: Vec<char> = piece.chars().collect();
            let mut start = 0;
            let mut end = chars.len();
            while start < end && is_punct(chars[start]) {
                out.push(chars[start].to_string());
                start += 1;
            }
            let mut tail = Vec::new();
            while end > start && is_punct(chars[end - 1]) {
                tail.push(chars[end - 1].to_string());
                end -= 1;
            }
            let mut word = String::new();
            for &c in &chars[start..end] {
                if is_cjk(c) {
                    if !word.is_empty() {
                        out.push(std::mem::take(&mut word));
                    }
                    out.push(c.to_string());
                } else {
                    word.push(c);
                }
            }
            if !word.is_empty() {
                out.push(word);
            }
            out.extend(tail.into_iter().rev());
        }
        out
    }
}

/// Token vocabulary; the five special tokens occupy ids 0..5.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, String> {
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(format!("vocabulary must start with {SPECIALS:?}"));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(format!("duplicate vocabulary entry {t:?}"));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Specials first, then every token of `texts` by descending frequency,
    /// ties broken lexicographically.
    pub fn build<'a, T: Tokenizer + ?Sized>(tokenizer: &T, texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for t in tokenizer.split(text) {
                if !SPECIALS.contains(&t.as_str()) {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS.iter().map(|s| s.to_string()).chain(ranked.into_iter().map(|(t, _)| t)).collect();
        Self::from_tokens(tokens).expect("specials are unique")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIALS.len()
    }

    /// First id available to random replacement.
    pub fn first_regular_id(&self) -> u32 {
        SPECIALS.len() as u32
    }

    pub fn encode<T: Tokenizer + ?Sized>(&self, tokenizer: &T, text: &str) -> Vec<u32> {
        tokenizer.split(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    /// CRC32 of the newline-joined vocabulary, as hex.
    pub fn fingerprint(&self) -> String {
        let mut h = crc32fast::Hasher::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        format!("{:08x}", h.finalize())
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        w.flush()
    }

    pub fn read<R: BufRead>(r: R) -> io::Result<Self> {
        let tokens = r.lines().collect::<io::Result<Vec<_>>>()?;
        Self::from_tokens(tokens).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}
