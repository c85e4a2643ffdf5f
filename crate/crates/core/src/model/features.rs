use crate::abstraction::{valid_length, AbstractToken};
use crate::embedding::EmbeddingTable;
use crate::lexer::{TokenKind, PAD};
use crate::nn::{SeqLayout, Tensor};
use crate::pipeline::PreparedSample;

use super::{ModelError, PatchRnn, Result};

pub const TOKEN_TYPE_DIM: usize = 6;
/// 128-dim embedding + 6-way token type + diff type.
pub const CODE_FEATURE_DIM: usize = 135;

pub fn code_feature_dim(embed_dim: usize) -> usize {
    embed_dim + TOKEN_TYPE_DIM + 1
}

fn type_and_diff(tok: &AbstractToken, out: &mut [f64]) {
    out.fill(0.0);
    out[tok.kind.one_hot_index()] = 1.0;
    if !tok.is_pad() {
        out[TOKEN_TYPE_DIM] = tok.diff_type.value() as f64;
    }
}

/// Per-position feature vectors (`seq_len` × (dim + 7)): token embedding,
/// one-hot token type, diff type. Pad positions carry only the Pad bit.
pub fn assemble_code_features(
    tokens: &[AbstractToken],
    table: &EmbeddingTable,
    seq_len: usize,
) -> Result<Tensor> {
    if tokens.len() != seq_len {
        return Err(ModelError::Config(format!(
            "code sequence has {} tokens, expected {seq_len}",
            tokens.len()
        )));
    }
    let dim = table.dim();
    let width = code_feature_dim(dim);
    let mut data = vec![0.0; seq_len * width];
    for (tok, row) in tokens.iter().zip(data.chunks_exact_mut(width)) {
        if !tok.is_pad() {
            row[..dim].copy_from_slice(table.lookup(&tok.text));
        }
        type_and_diff(tok, &mut row[dim..]);
    }
    Ok(Tensor::new(vec![seq_len, width], data)?)
}

/// A batch encoded against the model's vocabularies. Code rows are
/// time-major over 2n sequences: unpatched sides first, then patched.
pub(crate) struct Batch {
    pub size: usize,
    pub code_layout: SeqLayout,
    pub code_tokens: Vec<Option<usize>>,
    pub code_extra: Tensor,
    pub msg_layout: SeqLayout,
    pub msg_tokens: Vec<Option<usize>>,
}

pub(crate) fn labels_of(samples: &[&PreparedSample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            s.label
                .map(|l| l.index())
                .ok_or_else(|| ModelError::Unlabeled(s.id.clone()))
        })
        .collect()
}

impl PatchRnn {
    pub(crate) fn encode(&self, samples: &[&PreparedSample]) -> Result<Batch> {
        let n = samples.len();
        let cfg = &self.config;
        let sides: Vec<&[AbstractToken]> = samples
            .iter()
            .map(|s| s.unpatched.as_slice())
            .chain(samples.iter().map(|s| s.patched.as_slice()))
            .collect();
        let code_lengths: Vec<usize> = sides
            .iter()
            .map(|t| valid_length(t).min(cfg.code_seq_len))
            .collect();
        let steps = code_lengths.iter().copied().max().unwrap_or(0).max(1);
        let code_layout = SeqLayout::new(steps, code_lengths)?;

        let extra_w = TOKEN_TYPE_DIM + 1;
        let rows = code_layout.rows();
        let mut code_tokens = vec![None; rows];
        let mut extra = vec![0.0; rows * extra_w];
        let pad = AbstractToken::pad();
        for t in 0..steps {
            for (s, side) in sides.iter().enumerate() {
                let r = t * 2 * n + s;
                let tok = if t < code_layout.lengths[s] {
                    &side[t]
                } else {
                    &pad
                };
                if !tok.is_pad() {
                    code_tokens[r] = Some(self.code_vocab.index_of(&tok.text));
                }
                type_and_diff(tok, &mut extra[r * extra_w..(r + 1) * extra_w]);
            }
        }

        let msg_lengths: Vec<usize> = samples
            .iter()
            .map(|s| s.message.valid_len().min(cfg.msg_seq_len))
            .collect();
        let msg_steps = msg_lengths.iter().copied().max().unwrap_or(0).max(1);
        let msg_layout = SeqLayout::new(msg_steps, msg_lengths)?;
        let mut msg_tokens = vec![None; msg_layout.rows()];
        for t in 0..msg_steps {
            for (s, sample) in samples.iter().enumerate() {
                if t < msg_layout.lengths[s] {
                    let tok = &sample.message.tokens[t];
                    debug_assert!(tok != PAD);
                    msg_tokens[t * n + s] = Some(self.msg_vocab.index_of(tok));
                }
            }
        }
        debug_assert!(extra.len() == rows * extra_w && TokenKind::ALL.len() == TOKEN_TYPE_DIM);
        Ok(Batch {
            size: n,
            code_layout,
            code_tokens,
            code_extra: Tensor::new(vec![rows, extra_w], extra)?,
            msg_layout,
            msg_tokens,
        })
    }
}
