//! Total C/C++ lexer producing the token kinds the code branch consumes.
//!
//! No preprocessing: directives lex as `#` followed by ordinary tokens, and
//! anything unrecognised becomes a one-character punctuation token.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::patch::{CodeLine, DiffType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenKind {
    Keyword,
    Identifier,
    Literal,
    Punctuation,
    Comment,
    Pad,
}

impl TokenKind {
    pub const ALL: [TokenKind; 6] = [
        TokenKind::Keyword,
        TokenKind::Identifier,
        TokenKind::Literal,
        TokenKind::Punctuation,
        TokenKind::Comment,
        TokenKind::Pad,
    ];

    /// Position in the 6-way one-hot token-type feature.
    pub fn one_hot_index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TokenKind::Keyword => "Keyword",
            TokenKind::Identifier => "Identifier",
            TokenKind::Literal => "Literal",
            TokenKind::Punctuation => "Punctuation",
            TokenKind::Comment => "Comment",
            TokenKind::Pad => "Pad",
        }
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const PAD: &str = "<pad>";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodeToken {
    pub text: String,
    pub kind: TokenKind,
}

impl CodeToken {
    pub fn new(text: impl Into<String>, kind: TokenKind) -> Self {
        CodeToken {
            text: text.into(),
            kind,
        }
    }

    pub fn pad() -> Self {
        CodeToken::new(PAD, TokenKind::Pad)
    }

    /// Integer and floating literals; everything else of kind Literal is a
    /// string or character literal.
    pub fn is_numeric_literal(&self) -> bool {
        self.kind == TokenKind::Literal
            && self
                .text
                .chars()
                .next()
                .is_some_and(|c| c.is_ascii_digit() || c == '.')
    }
}

pub const KEYWORDS: &[&str] = &[
    // C99
    "auto",
    "break",
    "case",
    "char",
    "const",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extern",
    "float",
    "for",
    "goto",
    "if",
    "inline",
    "int",
    "long",
    "register",
    "restrict",
    "return",
    "short",
    "signed",
    "sizeof",
    "static",
    "struct",
    "switch",
    "typedef",
    "union",
    "unsigned",
    "void",
    "volatile",
    "while",
    "_Bool",
    "_Complex",
    "_Imaginary",
    // C++ core
    "class",
    "new",
    "delete",
    "template",
    "namespace",
    "public",
    "private",
    "protected",
    "virtual",
    "this",
    "try",
    "catch",
    "throw",
    "operator",
    "using",
    "typename",
    "bool",
    "true",
    "false",
    "nullptr",
    "const_cast",
    "static_cast",
    "dynamic_cast",
    "reinterpret_cast",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

const PUNCT_3: &[&str] = &["<<=", ">>=", "...", "->*", "<=>"];
const PUNCT_2: &[&str] = &[
    "==", "!=", "<=", ">=", "&&", "||", "<<", ">>", "->", "++", "--", "+=", "-=", "*=", "/=", "%=",
    "&=", "|=", "^=", "::", "##", ".*",
];

/// A token and the byte offset where it starts in the original text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpannedToken {
    pub token: CodeToken,
    pub offset: usize,
}

pub fn lex(source: &str) -> Vec<CodeToken> {
    lex_spanned(source).into_iter().map(|s| s.token).collect()
}

/// Lex after splicing backslash-newline continuations; offsets refer to the
/// unspliced input.
pub fn lex_spanned(source: &str) -> Vec<SpannedToken> {
    let (spliced, origin) = splice(source);
    let mut lexer = Lexer {
        chars: spliced.char_indices().collect(),
        pos: 0,
        text: &spliced,
    };
    let mut out = Vec::new();
    while let Some((start, token)) = lexer.next_token() {
        out.push(SpannedToken {
            token,
            offset: origin[start],
        });
    }
    out
}

fn splice(source: &str) -> (String, Vec<usize>) {
    let mut out = String::with_capacity(source.len());
    let mut origin = Vec::with_capacity(source.len() + 1);
    let bytes = source.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            if bytes.get(i + 1) == Some(&b'\n') {
                i += 2;
                continue;
            }
            if bytes.get(i + 1) == Some(&b'\r') && bytes.get(i + 2) == Some(&b'\n') {
                i += 3;
                continue;
            }
        }
        let ch = source[i..].chars().next().expect("char boundary");
        let len = ch.len_utf8();
        for k in 0..len {
            origin.push(i + k);
        }
        out.push(ch);
        i += len;
    }
    origin.push(source.len());
    (out, origin)
}

struct Lexer<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    text: &'a str,
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_ascii_alphabetic() || (!c.is_ascii() && c.is_alphabetic())
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_ascii_alphanumeric() || (!c.is_ascii() && c.is_alphanumeric())
}

impl<'a> Lexer<'a> {
    fn peek(&self, ahead: usize) -> Option<char> {
        self.chars.get(self.pos + ahead).map(|&(_, c)| c)
    }

    fn byte_at(&self, pos: usize) -> usize {
        self.chars
            .get(pos)
            .map(|&(b, _)| b)
            .unwrap_or(self.text.len())
    }

    fn slice(&self, from: usize) -> &'a str {
        &self.text[self.byte_at(from)..self.byte_at(self.pos)]
    }

    fn next_token(&mut self) -> Option<(usize, CodeToken)> {
        while self.peek(0).is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
        let c = self.peek(0)?;
        let start = self.pos;
        let start_byte = self.byte_at(start);

        let kind = if c == '/' && self.peek(1) == Some('/') {
            while self.peek(0).is_some_and(|c| c != '\n') {
                self.pos += 1;
            }
            TokenKind::Comment
        } else if c == '/' && self.peek(1) == Some('*') {
            self.pos += 2;
            loop {
                match self.peek(0) {
                    None => break,
                    Some('*') if self.peek(1) == Some('/') => {
                        self.pos += 2;
                        break;
                    }
                    Some(_) => self.pos += 1,
                }
            }
            TokenKind::Comment
        } else if c == '"' || c == '\'' {
            self.quoted(c);
            TokenKind::Literal
        } else if c.is_ascii_digit()
            || (c == '.' && self.peek(1).is_some_and(|d| d.is_ascii_digit()))
        {
            self.number();
            TokenKind::Literal
        } else if is_ident_start(c) {
            while self.peek(0).is_some_and(is_ident_continue) {
                self.pos += 1;
            }
            let word = self.slice(start);
            match self.peek(0) {
                Some(q @ ('"' | '\'')) if matches!(word, "L" | "u" | "U" | "u8") => {
                    self.quoted(q);
                    TokenKind::Literal
                }
                Some('"') if matches!(word, "R" | "LR" | "uR" | "UR" | "u8R") => {
                    self.raw_string();
                    TokenKind::Literal
                }
                _ if is_keyword(word) => TokenKind::Keyword,
                _ => TokenKind::Identifier,
            }
        } else {
            self.punctuator();
            TokenKind::Punctuation
        };
        let text = self.slice(start).to_string();
        debug_assert_eq!(start_byte, self.byte_at(start));
        Some((start_byte, CodeToken { text, kind }))
    }

    // Unterminated quotes stop at end of line: diffs carry fragments.
    fn quoted(&mut self, quote: char) {
        self.pos += 1;
        while let Some(c) = self.peek(0) {
            match c {
                '\\' => {
                    self.pos += 1;
                    if self.peek(0).is_some_and(|n| n != '\n') {
                        self.pos += 1;
                    }
                }
                '\n' => break,
                c if c == quote => {
                    self.pos += 1;
                    break;
                }
                _ => self.pos += 1,
            }
        }
    }

    fn raw_string(&mut self) {
        // at the opening quote of R"delim( ... )delim"
        self.pos += 1;
        let delim_start = self.pos;
        while self.peek(0).is_some_and(|c| {
            c != '(' && c != '"' && !c.is_whitespace() && self.pos - delim_start < 16
        }) {
            self.pos += 1;
        }
        if self.peek(0) != Some('(') {
            // not a raw string after all; treat as an ordinary string body
            self.pos = delim_start - 1;
            self.quoted('"');
            return;
        }
        let delim: String = self.slice(delim_start).to_string();
        let terminator: Vec<char> = format!("){delim}\"").chars().collect();
        self.pos += 1;
        while self.pos < self.chars.len() {
            let matches = terminator
                .iter()
                .enumerate()
                .all(|(k, &t)| self.peek(k) == Some(t));
            if matches {
                self.pos += terminator.len();
                return;
            }
            self.pos += 1;
        }
    }

    fn number(&mut self) {
        self.pos += 1;
        while let Some(c) = self.peek(0) {
            if matches!(c, 'e' | 'E' | 'p' | 'P') && matches!(self.peek(1), Some('+' | '-')) {
                self.pos += 2;
            } else if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                self.pos += 1;
            } else if c == '\'' && self.peek(1).is_some_and(|d| d.is_ascii_alphanumeric()) {
                // C++14 digit separator
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn punctuator(&mut self) {
        for (len, table) in [(3usize, PUNCT_3), (2, PUNCT_2)] {
            let candidate: String = (0..len).filter_map(|k| self.peek(k)).collect();
            if candidate.chars().count() == len && table.contains(&candidate.as_str()) {
                self.pos += len;
                return;
            }
        }
        self.pos += 1;
    }
}

/// Lex one side of a reconstructed pair. Each token inherits the diff type of
/// the line it starts on.
pub fn lex_lines(lines: &[CodeLine]) -> Vec<(CodeToken, DiffType)> {
    let mut text = String::new();
    let mut line_starts = Vec::with_capacity(lines.len());
    for line in lines {
        line_starts.push(text.len());
        text.push_str(&line.content);
        text.push('\n');
    }
    lex_spanned(&text)
        .into_iter()
        .map(|s| {
            let idx = match line_starts.binary_search(&s.offset) {
                Ok(i) => i,
                Err(i) => i - 1,
            };
            (s.token, lines[idx].diff_type)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use TokenKind::*;

    fn kinds(src: &str) -> Vec<TokenKind> {
        lex(src).into_iter().map(|t| t.kind).collect()
    }

    fn texts(src: &str) -> Vec<String> {
        lex(src).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn equality_is_one_token() {
        assert_eq!(
            lex("uri == NULL"),
            vec![
                CodeToken::new("uri", Identifier),
                CodeToken::new("==", Punctuation),
                CodeToken::new("NULL", Identifier),
            ]
        );
    }

    #[test]
    fn null_check_kinds() {
        assert_eq!(
            kinds("if (uri == NULL) { return; }"),
            vec![
                Keyword,
                Punctuation,
                Identifier,
                Punctuation,
                Identifier,
                Punctuation,
                Punctuation,
                Keyword,
                Punctuation,
                Punctuation
            ]
        );
    }

    #[test]
    fn memset_line() {
        let toks = lex("memset(uri, 0, sizeof(URI_TYPE(Uri)));");
        assert!(toks.contains(&CodeToken::new("0", Literal)));
        assert!(toks.contains(&CodeToken::new("sizeof", Keyword)));
        assert!(toks.contains(&CodeToken::new("URI_TYPE", Identifier)));
    }

    #[test]
    fn comment_and_string() {
        assert_eq!(
            lex("x /* note */ = \"abc\""),
            vec![
                CodeToken::new("x", Identifier),
                CodeToken::new("/* note */", Comment),
                CodeToken::new("=", Punctuation),
                CodeToken::new("\"abc\"", Literal),
            ]
        );
    }

    #[test]
    fn operators_lex_whole() {
        for op in PUNCT_2.iter().chain(PUNCT_3) {
            let toks = lex(op);
            assert_eq!(toks.len(), 1, "{op}");
            assert_eq!(toks[0].kind, Punctuation);
            assert_eq!(toks[0].text, *op);
        }
    }

    #[test]
    fn literals() {
        assert_eq!(
            texts("0x1FUL 1.5e-3f .5 L\"wide\" u8\"s\" 'c' '\\n' 1'000"),
            vec![
                "0x1FUL",
                "1.5e-3f",
                ".5",
                "L\"wide\"",
                "u8\"s\"",
                "'c'",
                "'\\n'",
                "1'000"
            ]
        );
        assert!(kinds("0x1FUL 1.5e-3f .5 L\"wide\" u8\"s\" 'c'")
            .iter()
            .all(|k| *k == Literal));
        assert_eq!(texts("\"a\" \"b\""), vec!["\"a\"", "\"b\""]);
        assert_eq!(texts("R\"x(a\"b)x\" y"), vec!["R\"x(a\"b)x\"", "y"]);
    }

    #[test]
    fn comments() {
        assert_eq!(texts("a // tail\nb"), vec!["a", "// tail", "b"]);
        assert_eq!(
            lex("a /* never closed"),
            vec![
                CodeToken::new("a", Identifier),
                CodeToken::new("/* never closed", Comment)
            ]
        );
    }

    #[test]
    fn preprocessor_lines() {
        assert_eq!(
            lex("#ifdef SIGPIPE"),
            vec![
                CodeToken::new("#", Punctuation),
                CodeToken::new("ifdef", Identifier),
                CodeToken::new("SIGPIPE", Identifier)
            ]
        );
        assert_eq!(kinds("#if ME_UNIX_LIKE")[1], Keyword);
    }

    #[test]
    fn continuation_is_spliced() {
        assert_eq!(
            texts("#define X \\\n  foo"),
            vec!["#", "define", "X", "foo"]
        );
        assert_eq!(texts("ab\\\ncd"), vec!["abcd"]);
        let spanned = lex_spanned("x \\\n y");
        assert_eq!(spanned[1].offset, 5);
    }

    #[test]
    fn unknown_bytes_become_punctuation() {
        assert_eq!(
            lex("@ ` $"),
            vec![
                CodeToken::new("@", Punctuation),
                CodeToken::new("`", Punctuation),
                CodeToken::new("$", Punctuation)
            ]
        );
        assert!(lex("").is_empty());
        assert!(lex(" \n\t ").is_empty());
    }

    #[test]
    fn lines_carry_diff_types() {
        let lines = vec![
            CodeLine {
                content: "if (p) /* a".into(),
                diff_type: DiffType::Added,
            },
            CodeLine {
                content: "b */ free(p);".into(),
                diff_type: DiffType::Context,
            },
        ];
        let toks = lex_lines(&lines);
        let find = |t: &str| toks.iter().find(|(tok, _)| tok.text == t).unwrap().1;
        assert_eq!(find("if"), DiffType::Added);
        assert_eq!(find("/* a\nb */"), DiffType::Added);
        assert_eq!(find("free"), DiffType::Context);
    }
}
