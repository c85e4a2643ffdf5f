//! Patch → model-ready sample: reconstruct both sides, lex, abstract with one
//! shared table, normalize lengths, and preprocess the message.

use serde::{Deserialize, Serialize};

use crate::abstraction::{
    abstract_tokens, normalize_length, valid_length, AbstractToken, AbstractionTable,
};
use crate::lexer::{lex_lines, PAD};
use crate::message::{preprocess_message_with_len, MessageTokens};
use crate::patch::{reconstruct, Label, PatchFile, ReconstructOptions};

#[derive(Debug, Clone, Copy)]
pub struct PipelineOptions {
    pub code_len: usize,
    pub msg_len: usize,
    pub reconstruct: ReconstructOptions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            code_len: crate::abstraction::DEFAULT_CODE_LEN,
            msg_len: crate::message::DEFAULT_MSG_LEN,
            reconstruct: ReconstructOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedSample {
    pub id: String,
    pub label: Option<Label>,
    pub unpatched: Vec<AbstractToken>,
    pub patched: Vec<AbstractToken>,
    pub message: MessageTokens,
    /// Longer side's token count before normalization.
    pub raw_code_len: usize,
}

/// Abstracted token streams for both sides before length normalization.
pub fn abstract_pair(
    patch: &PatchFile,
    opts: ReconstructOptions,
) -> (Vec<AbstractToken>, Vec<AbstractToken>) {
    let pair = reconstruct(patch, opts);
    let mut table = AbstractionTable::new();
    let unpatched = abstract_tokens(&lex_lines(&pair.unpatched), &mut table);
    let patched = abstract_tokens(&lex_lines(&pair.patched), &mut table);
    (unpatched, patched)
}

pub fn prepare(patch: &PatchFile, id: impl Into<String>, opts: &PipelineOptions) -> PreparedSample {
    let (unpatched, patched) = abstract_pair(patch, opts.reconstruct);
    PreparedSample {
        id: id.into(),
        label: patch.label,
        raw_code_len: unpatched.len().max(patched.len()),
        unpatched: normalize_length(unpatched, opts.code_len),
        patched: normalize_length(patched, opts.code_len),
        message: preprocess_message_with_len(&patch.message, opts.msg_len),
    }
}

/// On-disk form of a [`PreparedSample`]: pads are implied by the lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedSample {
    pub id: String,
    pub label: Option<Label>,
    pub code_len: usize,
    pub msg_len: usize,
    pub raw_code_len: usize,
    pub unpatched: Vec<AbstractToken>,
    pub patched: Vec<AbstractToken>,
    pub message: Vec<String>,
}

impl PreparedSample {
    pub fn to_cached(&self) -> CachedSample {
        let trim = |t: &[AbstractToken]| t[..valid_length(t)].to_vec();
        CachedSample {
            id: self.id.clone(),
            label: self.label,
            code_len: self.unpatched.len(),
            msg_len: self.message.tokens.len(),
            raw_code_len: self.raw_code_len,
            unpatched: trim(&self.unpatched),
            patched: trim(&self.patched),
            message: self.message.stems().to_vec(),
        }
    }

    pub fn from_cached(c: CachedSample) -> PreparedSample {
        let mut message = c.message;
        message.truncate(c.msg_len);
        message.resize(c.msg_len, PAD.to_string());
        PreparedSample {
            id: c.id,
            label: c.label,
            unpatched: normalize_length(c.unpatched, c.code_len.max(1)),
            patched: normalize_length(c.patched, c.code_len.max(1)),
            message: MessageTokens { tokens: message },
            raw_code_len: c.raw_code_len,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::parse_patch;

    const NULL_CHECK: &str = include_str!("../tests/fixtures/uriparser_null_check.patch");

    #[test]
    fn null_check_patch_prepares_with_fixed_lengths() {
        let patch = parse_patch(NULL_CHECK).unwrap();
        let s = prepare(&patch, "l1", &PipelineOptions::default());
        assert_eq!(s.unpatched.len(), 1100);
        assert_eq!(s.patched.len(), 1100);
        assert_eq!(s.message.tokens.len(), 200);
        assert!(valid_length(&s.patched) > valid_length(&s.unpatched));
        let back = PreparedSample::from_cached(s.to_cached());
        assert_eq!(back, s);
    }

    #[test]
    fn shared_table_across_sides() {
        let patch = parse_patch(NULL_CHECK).unwrap();
        let (u, p) = abstract_pair(&patch, ReconstructOptions::default());
        let first = |side: &[AbstractToken], s: &str| side.iter().position(|t| t.text == s);
        // the call added on the patched side reuses the table built on the unpatched side
        assert!(first(&u, "FUNC0").is_some() && first(&p, "FUNC0").is_some());
    }
}
