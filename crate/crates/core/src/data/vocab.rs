use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CdnError, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const NUM_SPECIALS: u32 = 5;
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

const CONTINUATION: &str = "##";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TokenizeMode {
    #[default]
    Word,
    Subword,
}

impl FromStr for TokenizeMode {
    type Err = CdnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(TokenizeMode::Word),
            "subword" => Ok(TokenizeMode::Subword),
            _ => Err(CdnError::Config(format!("unknown tokenize mode {s:?}"))),
        }
    }
}

impl fmt::Display for TokenizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizeMode::Word => "word",
            TokenizeMode::Subword => "subword",
        })
    }
}

/// Token ids plus a flag marking the first piece of every word.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<u32>,
    pub word_start: Vec<bool>,
}

/// Dense token ↔ id map with the five reserved specials at ids 0..5.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// Only the specials.
    pub fn new() -> Self {
        let tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    /// Specials followed by `tokens` in order. Duplicates and special names
    /// are rejected.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab::new();
        for t in tokens {
            let t = t.into();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(CdnError::Format(format!("invalid vocab token {t:?}")));
            }
            if v.index.contains_key(&t) {
                return Err(CdnError::Format(format!("duplicate vocab token {t:?}")));
            }
            v.push(t);
        }
        Ok(v)
    }

    /// Whitespace words of `texts` with frequency ≥ `min_freq`, most frequent
    /// first, ties in lexicographic order.
    pub fn build<'a, I>(texts: I, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in texts {
            for w in text.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(w, c)| c >= min_freq.max(1) && !SPECIAL_TOKENS.contains(&w))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut v = Vocab::new();
        for (w, _) in words {
            v.push(w.to_string());
        }
        v
    }

    fn push(&mut self, t: String) {
        self.index.insert(t.clone(), self.tokens.len() as u32);
        self.tokens.push(t);
    }

    /// One token per line; line `n` (from 0) becomes id `n + 5`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CdnError::io(path, e))?;
        Self::from_tokens(text.lines().map(str::trim_end).filter(|l| !l.is_empty()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for t in &self.tokens[NUM_SPECIALS as usize..] {
            out.push_str(t);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| CdnError::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        id < NUM_SPECIALS
    }

    pub fn tokenize(&self, text: &str, mode: TokenizeMode) -> Tokenized {
        let mut out = Tokenized::default();
        for word in text.split_whitespace() {
            match mode {
                TokenizeMode::Word => {
                    out.ids.push(self.id(word).unwrap_or(UNK));
                    out.word_start.push(true);
                }
                TokenizeMode::Subword => {
                    let pieces = self.word_pieces(word);
                    for (i, id) in pieces.into_iter().enumerate() {
                        out.ids.push(id);
                        out.word_start.push(i == 0);
                    }
                }
            }
        }
        out
    }

    /// Greedy longest match; a word with any unmatched remainder becomes a
    /// single [UNK].
    fn word_pieces(&self, word: &str) -> Vec<u32> {
        if let Some(id) = self.id(word) {
            return vec![id];
        }
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut buf = String::new();
        while start + 1 < bounds.len() {
            let mut found = None;
            for end in (start + 1..bounds.len()).rev() {
                buf.clear();
                if start > 0 {
                    buf.push_str(CONTINUATION);
                }
                buf.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(id) = self.id(&buf) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    pieces.push(id);
                    start = end;
                }
                None => return vec![UNK],
            }
        }
        pieces
    }

    /// Space-joined tokens, with `##` continuations glued to their word.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            let t = self.token(id).unwrap_or("[UNK]");
            if let Some(rest) = t.strip_prefix(CONTINUATION).filter(|_| !out.is_empty()) {
                out.push_str(rest);
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(t);
            }
        }
        out
    }
}
