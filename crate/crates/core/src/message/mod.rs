//! Commit-message preprocessing: lowercase, clear URLs, numbers and sign-off
//! trailers, tokenize, filter, drop stopwords, Porter-stem, pad to a fixed
//! length.

pub mod porter;

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::lexer::PAD;
use crate::vocab::Vocabulary;

pub use porter::stem;

pub const DEFAULT_MSG_LEN: usize = 200;

const STOPWORDS_EN: &str = include_str!("../../data/stopwords_en.txt");

/// Trailer keys whose lines (and indented continuations) are removed.
const SIGNATURE_KEYS: &[&str] = &[
    "signed-off-by",
    "reviewed-by",
    "cc",
    "reported-by",
    "tested-by",
    "acked-by",
];

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_EN
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect()
    })
}

pub fn is_stopword(word: &str) -> bool {
    stopwords().contains(word)
}

struct Patterns {
    url: Regex,
    number: Regex,
    email: Regex,
    token: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        url: Regex::new(r"(?:(?:https?|ftp|git)://|www\.)\S+").unwrap(),
        number: Regex::new(r"^[0-9]+(?:[.,x][0-9]+)*$").unwrap(),
        email: Regex::new(r"^[\w.+-]+@[\w-]+(?:\.[\w-]+)+$").unwrap(),
        token: Regex::new(concat!(
            r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+",
            r"|[\p{L}\p{N}_]+(?:['’\-][\p{L}\p{N}_]+)*",
            r"|[^\s\p{L}\p{N}_]+",
        ))
        .unwrap(),
    })
}

/// Exactly `len` stems, padded with `<pad>` at the end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageTokens {
    pub tokens: Vec<String>,
}

impl MessageTokens {
    pub fn valid_len(&self) -> usize {
        self.tokens.iter().take_while(|t| *t != PAD).count()
    }

    pub fn stems(&self) -> &[String] {
        &self.tokens[..self.valid_len()]
    }
}

fn strip_signatures(text: &str) -> String {
    let mut out = Vec::new();
    let mut in_trailer = false;
    for line in text.lines() {
        let trimmed = line.trim_start();
        let is_key = trimmed.split_once(':').is_some_and(|(key, _)| {
            SIGNATURE_KEYS
                .iter()
                .any(|k| key.trim().eq_ignore_ascii_case(k))
        });
        if is_key {
            in_trailer = true;
            continue;
        }
        if in_trailer && (line.starts_with(' ') || line.starts_with('\t')) && !trimmed.is_empty() {
            continue;
        }
        in_trailer = false;
        out.push(line);
    }
    out.join("\n")
}

// `x` separates dimensions ("1920x1080"); a `0x` prefix is a hex constant
fn is_standalone_number(chunk: &str, number: &Regex) -> bool {
    number.is_match(chunk) && !chunk.starts_with("0x")
}

/// Steps 1–2: lowercase and regex clearance.
pub fn clear_message(message: &str) -> String {
    let p = patterns();
    let lowered = message.to_lowercase();
    let no_sigs = strip_signatures(&lowered);
    let no_urls = p.url.replace_all(&no_sigs, " ");
    no_urls
        .lines()
        .map(|line| {
            line.split_whitespace()
                .filter(|chunk| !is_standalone_number(chunk, &p.number))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Whitespace/punctuation tokenizer keeping contractions, hyphenated words
/// and e-mail addresses whole.
pub fn tokenize(text: &str) -> Vec<String> {
    patterns()
        .token
        .find_iter(text)
        .map(|m| m.as_str().to_string())
        .collect()
}

fn keep_token(token: &str) -> bool {
    token.bytes().any(|b| b.is_ascii_alphabetic())
        && !patterns().email.is_match(token)
        && !is_stopword(token)
}

/// The unpadded stem sequence.
pub fn message_stems(message: &str) -> Vec<String> {
    tokenize(&clear_message(message))
        .into_iter()
        .filter(|t| keep_token(t))
        .map(|t| stem(&t))
        .collect()
}

pub fn preprocess_message(message: &str) -> MessageTokens {
    preprocess_message_with_len(message, DEFAULT_MSG_LEN)
}

pub fn preprocess_message_with_len(message: &str, len: usize) -> MessageTokens {
    let mut tokens = message_stems(message);
    tokens.truncate(len);
    tokens.resize(len, PAD.to_string());
    MessageTokens { tokens }
}

pub fn build_message_vocabulary<'a, C>(corpus: C) -> Vocabulary
where
    C: IntoIterator<Item = &'a MessageTokens>,
{
    Vocabulary::build(
        corpus
            .into_iter()
            .map(|m| m.tokens.iter().map(String::as_str)),
    )
}
