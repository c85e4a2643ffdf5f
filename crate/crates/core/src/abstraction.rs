//! Token abstraction: identifiers become `VARn`/`FUNCn`, string and
//! character literals become `LITERAL`, comments are dropped.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::lexer::{CodeToken, TokenKind, PAD};
use crate::patch::DiffType;
use crate::vocab::Vocabulary;

pub const DEFAULT_CODE_LEN: usize = 1100;
pub const LITERAL: &str = "LITERAL";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AbstractToken {
    pub text: String,
    pub kind: TokenKind,
    pub diff_type: DiffType,
}

impl AbstractToken {
    pub fn pad() -> Self {
        AbstractToken {
            text: PAD.to_string(),
            kind: TokenKind::Pad,
            diff_type: DiffType::Context,
        }
    }

    pub fn is_pad(&self) -> bool {
        self.kind == TokenKind::Pad
    }
}

/// Per-patch identifier renaming table, shared by both sides of a patch.
#[derive(Debug, Clone, Default)]
pub struct AbstractionTable {
    symbols: HashMap<String, String>,
    next_var: usize,
    next_func: usize,
}

impl AbstractionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn symbol_for(&self, identifier: &str) -> Option<&str> {
        self.symbols.get(identifier).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    fn intern(&mut self, identifier: &str, is_call: bool) -> String {
        if let Some(sym) = self.symbols.get(identifier) {
            return sym.clone();
        }
        let sym = if is_call {
            self.next_func += 1;
            format!("FUNC{}", self.next_func - 1)
        } else {
            self.next_var += 1;
            format!("VAR{}", self.next_var - 1)
        };
        self.symbols.insert(identifier.to_string(), sym.clone());
        sym
    }
}

pub fn abstract_tokens(
    tokens: &[(CodeToken, DiffType)],
    table: &mut AbstractionTable,
) -> Vec<AbstractToken> {
    let mut out = Vec::with_capacity(tokens.len());
    for (i, (tok, diff_type)) in tokens.iter().enumerate() {
        let text = match tok.kind {
            TokenKind::Comment => continue,
            TokenKind::Pad => {
                out.push(AbstractToken::pad());
                continue;
            }
            TokenKind::Identifier => {
                let is_call = tokens[i + 1..]
                    .iter()
                    .find(|(t, _)| t.kind != TokenKind::Comment)
                    .is_some_and(|(t, _)| t.text == "(");
                table.intern(&tok.text, is_call)
            }
            TokenKind::Literal if !tok.is_numeric_literal() => LITERAL.to_string(),
            TokenKind::Literal | TokenKind::Keyword | TokenKind::Punctuation => tok.text.clone(),
        };
        out.push(AbstractToken {
            text,
            kind: tok.kind,
            diff_type: *diff_type,
        });
    }
    out
}

/// Pad at the end or keep the head so the result has exactly `target` tokens.
pub fn normalize_length(mut tokens: Vec<AbstractToken>, target: usize) -> Vec<AbstractToken> {
    assert!(target >= 1, "target length must be positive");
    tokens.truncate(target);
    tokens.resize(target, AbstractToken::pad());
    tokens
}

/// Number of leading non-pad tokens.
pub fn valid_length(tokens: &[AbstractToken]) -> usize {
    tokens.iter().take_while(|t| !t.is_pad()).count()
}

pub fn build_code_vocabulary<'a, C>(corpus: C) -> Vocabulary
where
    C: IntoIterator<Item = &'a [AbstractToken]>,
{
    Vocabulary::build(
        corpus
            .into_iter()
            .map(|seq| seq.iter().map(|t| t.text.as_str())),
    )
}
