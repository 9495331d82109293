//! Word-level tokenizer with exact character offsets.
//!
//! A token is a run of alphanumeric characters, an apostrophe followed by
//! such a run (`'s`), or any other single non-whitespace character.
//! Offsets count Unicode scalar values, not bytes.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const PREFIX: &str = "[P]";
pub const TYPE: &str = "[T]";
pub const TEXT: &str = "[Text]";
pub const CLASSIFY: &str = "[CLASSIFY]";
pub const MULTICLASSIFY: &str = "[MULTICLASSIFY]";

pub const RESERVED: [&str; 9] = [PAD, UNK, CLS, SEP, PREFIX, TYPE, TEXT, CLASSIFY, MULTICLASSIFY];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const PREFIX_ID: u32 = 4;
pub const TYPE_ID: u32 = 5;
pub const TEXT_ID: u32 = 6;
pub const CLASSIFY_ID: u32 = 7;
pub const MULTICLASSIFY_ID: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenizedText {
    pub token_ids: Vec<u32>,
    /// Half-open character intervals into the source.
    pub offsets: Vec<(usize, usize)>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Index of the token starting at character `start`.
    pub fn token_starting_at(&self, start: usize) -> Option<usize> {
        self.offsets.iter().position(|&(s, _)| s == start)
    }

    /// Index of the token ending at character `end`.
    pub fn token_ending_at(&self, end: usize) -> Option<usize> {
        self.offsets.iter().position(|&(_, e)| e == end)
    }

    /// The source text between consecutive tokens, plus leading and trailing
    /// runs: `len() + 1` strings.
    pub fn separators(&self, source: &str) -> Vec<String> {
        let chars: Vec<char> = source.chars().collect();
        let mut out = Vec::with_capacity(self.len() + 1);
        let mut cursor = 0;
        for &(s, e) in &self.offsets {
            out.push(chars[cursor..s].iter().collect());
            cursor = e;
        }
        out.push(chars[cursor..].iter().collect());
        out
    }
}

/// Character spans of the tokens of `text`.
pub fn split_words(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let clitic = c == '\'' && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || clitic {
            i += 1;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
        } else {
            i += 1;
        }
        out.push((start, i));
    }
    out
}

/// Surface strings of the tokens of `text`.
pub fn words(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    split_words(text)
        .into_iter()
        .map(|(s, e)| chars[s..e].iter().collect())
        .collect()
}

pub fn span_text(source: &str, (start, end): (usize, usize)) -> Result<String> {
    let len = source.chars().count();
    if start > end || end > len {
        return Err(Error::OutOfBounds { start, end, len });
    }
    Ok(source.chars().skip(start).take(end - start).collect())
}

impl Vocab {
    /// Reserved tokens first, then every word of the corpus and the schema
    /// labels in sorted order.
    pub fn build<S: AsRef<str>, L: AsRef<str>>(corpus: &[S], schema_labels: &[L]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut words_seen = BTreeSet::new();
        for text in corpus.iter().map(AsRef::as_ref).chain(schema_labels.iter().map(AsRef::as_ref)) {
            words_seen.extend(words(text));
        }
        // prefix rendering separators
        words_seen.insert(":".to_string());
        words_seen.insert(",".to_string());
        Ok(Self::from_tokens(
            RESERVED
                .iter()
                .map(|s| s.to_string())
                .chain(words_seen.into_iter().filter(|w| !RESERVED.contains(&w.as_str())))
                .collect(),
        ))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> TokenizedText {
        let chars: Vec<char> = text.chars().collect();
        let offsets = split_words(text);
        let token_ids = offsets
            .iter()
            .map(|&(s, e)| {
                let w: String = chars[s..e].iter().collect();
                self.id(&w).unwrap_or(UNK_ID)
            })
            .collect();
        TokenizedText { token_ids, offsets }
    }

    /// `token<TAB>id` per line, sorted by id.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::MalformedVocab(format!("line {}: missing tab", line_no + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::MalformedVocab(format!("line {}: bad id", line_no + 1)))?;
            if id != tokens.len() {
                return Err(Error::MalformedVocab(format!(
                    "line {}: ids must be dense and sorted",
                    line_no + 1
                )));
            }
            tokens.push(tok.to_string());
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::MalformedVocab(format!("reserved token {r} missing at id {i}")));
            }
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.ids.len() != vocab.tokens.len() {
            return Err(Error::MalformedVocab("duplicate token".into()));
        }
        Ok(vocab)
    }
}
