//! Frequency-ordered vocabularies shared by the code and message branches.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::PAD;

pub const UNK: &str = "<unk>";
pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocabulary io: {0}")]
    Io(#[from] io::Error),
    #[error("vocabulary line {line}: {reason}")]
    Format { line: usize, reason: String },
}

/// Token ↔ index map with `<pad>` at 0 and `<unk>` at 1; the remaining
/// tokens follow in descending frequency, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<S, I, C>(corpus: C) -> Vocabulary
    where
        S: AsRef<str>,
        I: IntoIterator<Item = S>,
        C: IntoIterator<Item = I>,
    {
        Self::build_with_min_count(corpus, 1)
    }

    pub fn build_with_min_count<S, I, C>(corpus: C, min_count: u64) -> Vocabulary
    where
        S: AsRef<str>,
        I: IntoIterator<Item = S>,
        C: IntoIterator<Item = I>,
    {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for seq in corpus {
            for tok in seq {
                *counts.entry(tok.as_ref().to_string()).or_default() += 1;
            }
        }
        let pad_count = counts.remove(PAD).unwrap_or(0);
        let unk_count = counts.remove(UNK).unwrap_or(0);
        let mut rest: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        rest.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens = vec![PAD.to_string(), UNK.to_string()];
        let mut freqs = vec![pad_count, unk_count];
        for (t, c) in rest {
            tokens.push(t);
            freqs.push(c);
        }
        Self::from_parts(tokens, freqs)
    }

    /// Vocabulary in a given index order; the first two entries must be
    /// `<pad>` and `<unk>`.
    pub fn from_ordered(tokens: Vec<String>, freqs: Vec<u64>) -> Result<Vocabulary, VocabError> {
        if tokens.len() < 2
            || tokens[PAD_INDEX] != PAD
            || tokens[UNK_INDEX] != UNK
            || tokens.len() != freqs.len()
        {
            return Err(VocabError::Format {
                line: 1,
                reason: "vocabulary must start with <pad> and <unk>".into(),
            });
        }
        let v = Self::from_parts(tokens, freqs);
        if v.index.len() != v.tokens.len() {
            return Err(VocabError::Format {
                line: 1,
                reason: "duplicate token".into(),
            });
        }
        Ok(v)
    }

    fn from_parts(tokens: Vec<String>, freqs: Vec<u64>) -> Vocabulary {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            freqs,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, falling back to `<unk>`.
    pub fn index_of(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_INDEX)
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn frequency(&self, index: usize) -> u64 {
        self.freqs[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Serde skips the lookup table; call after deserializing.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    /// `token<TAB>index<TAB>frequency`, one line per entry, sorted by index.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (i, (t, f)) in self.tokens.iter().zip(&self.freqs).enumerate() {
            writeln!(w, "{}\t{}\t{}", escape(t), i, f)?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Vocabulary, VocabError> {
        let mut tokens = Vec::new();
        let mut freqs = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| VocabError::Format {
                line: n + 1,
                reason: reason.to_string(),
            };
            let mut parts = line.split('\t');
            let (Some(tok), Some(idx), Some(freq)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(bad("expected three tab-separated fields"));
            };
            let idx: usize = idx.parse().map_err(|_| bad("bad index"))?;
            if idx != tokens.len() {
                return Err(bad("indices must be contiguous from 0"));
            }
            tokens.push(unescape(tok));
            freqs.push(freq.parse().map_err(|_| bad("bad frequency"))?);
        }
        Self::from_ordered(tokens, freqs)
    }
}

pub(crate) fn escape(t: &str) -> String {
    t.replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
        .replace('\r', "\\r")
}

pub(crate) fn unescape(t: &str) -> String {
    let mut out = String::with_capacity(t.len());
    let mut chars = t.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some('r') => out.push('\r'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}
