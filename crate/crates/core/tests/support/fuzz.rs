//! proptest strategies for C-like token streams.

use patchrnn::lexer::{CodeToken, TokenKind, KEYWORDS};
use patchrnn::patch::DiffType;
use proptest::prelude::*;

pub const OPERATORS: &[&str] = &[
    "==", "!=", "<=", ">=", "&&", "||", "<<", ">>", "->", "++", "--", "+=", "-=", "*=", "/=", "%=",
    "&=", "|=", "^=", "<<=", ">>=", "::", "...", "->*", "##",
];
const SINGLE: &[&str] = &[
    "(", ")", "{", "}", "[", "]", ";", ",", "=", "+", "-", "*", "/", "<", ">", "!", "&", "#",
];

/// Identifiers that are not keywords.
pub fn identifier() -> impl Strategy<Value = String> {
    "[a-zA-Z_][a-zA-Z0-9_]{0,6}".prop_filter("keyword", |s| !KEYWORDS.contains(&s.as_str()))
}

/// Source fragments that each lex to exactly one token of the given kind.
pub fn fragment() -> impl Strategy<Value = (String, TokenKind)> {
    prop_oneof![
        4 => identifier().prop_map(|s| (s, TokenKind::Identifier)),
        2 => proptest::sample::select(KEYWORDS).prop_map(|s| (s.to_string(), TokenKind::Keyword)),
        3 => proptest::sample::select(SINGLE).prop_map(|s| (s.to_string(), TokenKind::Punctuation)),
        2 => proptest::sample::select(OPERATORS).prop_map(|s| (s.to_string(), TokenKind::Punctuation)),
        1 => (0u32..5000).prop_map(|n| (n.to_string(), TokenKind::Literal)),
        1 => (0u32..255).prop_map(|n| (format!("0x{n:x}"), TokenKind::Literal)),
        1 => "[a-z ]{0,8}".prop_map(|s| (format!("\"{s}\""), TokenKind::Literal)),
        1 => "[a-z]".prop_map(|s| (format!("'{s}'"), TokenKind::Literal)),
        1 => "[a-z ]{0,8}".prop_map(|s| (format!("/* {s} */"), TokenKind::Comment)),
    ]
}

/// Fragments separated by whitespace, with the kinds they must lex to.
pub fn source() -> impl Strategy<Value = (String, Vec<TokenKind>)> {
    proptest::collection::vec(
        (
            fragment(),
            proptest::sample::select(&[" ", "  ", "\t", "\n"][..]),
        ),
        0..60,
    )
    .prop_map(|parts| {
        let mut text = String::new();
        let mut kinds = Vec::new();
        for ((frag, kind), sep) in parts {
            text.push_str(&frag);
            text.push_str(sep);
            kinds.push(kind);
        }
        (text, kinds)
    })
}

pub fn diff_type() -> impl Strategy<Value = DiffType> {
    prop_oneof![
        Just(DiffType::Removed),
        Just(DiffType::Context),
        Just(DiffType::Added)
    ]
}

/// A lexed stream with a diff type on every token.
pub fn token_stream() -> impl Strategy<Value = Vec<(CodeToken, DiffType)>> {
    (source(), proptest::collection::vec(diff_type(), 60)).prop_map(|((text, _), dts)| {
        patchrnn::lexer::lex(&text)
            .into_iter()
            .zip(dts.into_iter().cycle())
            .collect()
    })
}
