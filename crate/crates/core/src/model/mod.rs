//! The two-branch classifier: a twin bi-LSTM over the unpatched and patched
//! code streams, a bi-LSTM over the message stems, and a fusion head.

mod features;
mod io;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::EmbeddingTable;
use crate::nn::{softmax, LstmParams, NnError, ParamId, ParamStore, SeqLayout, Tape, Tensor, Var};
use crate::patch::{Label, PatchError, PatchFile};
use crate::pipeline::{prepare, PipelineOptions, PreparedSample};
use crate::vocab::{Vocabulary, PAD_INDEX};

pub use features::{assemble_code_features, code_feature_dim, CODE_FEATURE_DIM, TOKEN_TYPE_DIM};
pub use io::{CheckpointMeta, CHECKPOINT_FORMAT};
pub use train::{train, train_model, train_model_with, EpochRecord, History, ValidationRecord};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training set contains a single class")]
    SingleClassDataset,
    #[error("sample {0} has no label")]
    Unlabeled(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Which hidden states of the stacked code LSTMs form a twin's summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwinSummary {
    /// Final forward and backward states of every layer.
    AllLayers,
    /// Final forward and backward states of the top layer only.
    TopLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub code_seq_len: usize,
    pub msg_seq_len: usize,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub code_lstm_layers: usize,
    pub code_fc_dims: Vec<usize>,
    pub msg_fc_dims: Vec<usize>,
    pub fusion_fc_dims: Vec<usize>,
    pub twin_summary: TwinSummary,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub embedding_trainable: bool,
    /// Loss weights for (non_security, security).
    pub class_weights: Option<[f64; 2]>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            code_seq_len: 1100,
            msg_seq_len: 200,
            embed_dim: 128,
            lstm_hidden: 32,
            code_lstm_layers: 2,
            code_fc_dims: vec![256, 128, 64],
            msg_fc_dims: vec![64, 64],
            fusion_fc_dims: vec![128, 32, 2],
            twin_summary: TwinSummary::AllLayers,
            batch_size: 512,
            lr: 5e-4,
            epochs: 1000,
            seed: 42,
            embedding_trainable: true,
            class_weights: None,
        }
    }
}

impl ModelConfig {
    /// Width of one twin's summary vector.
    pub fn twin_summary_dim(&self) -> usize {
        let layers = match self.twin_summary {
            TwinSummary::AllLayers => self.code_lstm_layers,
            TwinSummary::TopLayer => 1,
        };
        2 * self.lstm_hidden * layers
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            code_len: self.code_seq_len,
            msg_len: self.msg_seq_len,
            ..PipelineOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        for (name, v) in [
            ("code_seq_len", self.code_seq_len),
            ("msg_seq_len", self.msg_seq_len),
            ("embed_dim", self.embed_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("code_lstm_layers", self.code_lstm_layers),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive".into());
        }
        for (name, dims) in [
            ("code_fc_dims", &self.code_fc_dims),
            ("msg_fc_dims", &self.msg_fc_dims),
            ("fusion_fc_dims", &self.fusion_fc_dims),
        ] {
            if dims.len() < 2 || dims.contains(&0) {
                return bad(format!("{name} needs at least two positive sizes"));
            }
        }
        if self.code_fc_dims[0] != 2 * self.twin_summary_dim() {
            return bad(format!(
                "code_fc_dims starts at {} but the twin concatenation is {}",
                self.code_fc_dims[0],
                2 * self.twin_summary_dim()
            ));
        }
        if self.msg_fc_dims[0] != 2 * self.lstm_hidden {
            return bad(format!(
                "msg_fc_dims must start at {}",
                2 * self.lstm_hidden
            ));
        }
        let (code_out, msg_out) = (
            *self.code_fc_dims.last().unwrap(),
            *self.msg_fc_dims.last().unwrap(),
        );
        if code_out != msg_out {
            return bad(format!(
                "code vector {code_out} and message vector {msg_out} differ"
            ));
        }
        if self.fusion_fc_dims[0] != code_out + msg_out {
            return bad(format!(
                "fusion_fc_dims must start at {}",
                code_out + msg_out
            ));
        }
        if *self.fusion_fc_dims.last().unwrap() != 2 {
            return bad("fusion head must end in 2 logits".into());
        }
        if let Some(w) = self.class_weights {
            if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad("class weights must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    /// Probability of the security class.
    pub probability: f64,
}

impl Prediction {
    pub const THRESHOLD: f64 = 0.5;

    pub fn from_probability(probability: f64) -> Prediction {
        let label = if probability >= Self::THRESHOLD {
            Label::Security
        } else {
            Label::NonSecurity
        };
        Prediction { label, probability }
    }
}

#[derive(Debug, Clone, Copy)]
struct LstmIds {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

type Dense = (ParamId, ParamId);

#[derive(Debug, Clone)]
struct ParamIds {
    code_emb: ParamId,
    msg_emb: ParamId,
    code_lstm: Vec<[LstmIds; 2]>,
    code_fc: Vec<Dense>,
    msg_lstm: [LstmIds; 2],
    msg_fc: Vec<Dense>,
    fusion_fc: Vec<Dense>,
}

/// Dimensions of every intermediate activation of one forward pass, read
/// from the recorded tensors.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ShapeTrace {
    pub code_feature: usize,
    pub code_lstm_outputs: Vec<usize>,
    pub twin_summary: usize,
    pub twin_concat: usize,
    pub code_fc: Vec<usize>,
    pub msg_feature: usize,
    pub msg_summary: usize,
    pub msg_fc: Vec<usize>,
    pub fusion_input: usize,
    pub fusion_fc: Vec<usize>,
}

/// Handles produced by [`PatchRnn::forward`].
pub struct ForwardVars {
    pub twin_concat: Var,
    pub code_vector: Var,
    pub message_vector: Var,
    pub fusion_input: Var,
    pub logits: Var,
    trace: ShapeTrace,
}

#[derive(Debug, Clone)]
pub struct PatchRnn {
    config: ModelConfig,
    code_vocab: Vocabulary,
    msg_vocab: Vocabulary,
    store: ParamStore,
    ids: ParamIds,
}

fn add_lstm(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    input: usize,
    hidden: usize,
) -> LstmIds {
    let p = LstmParams::init(rng, input, hidden);
    LstmIds {
        w: store.add(format!("{name}.w"), p.w),
        u: store.add(format!("{name}.u"), p.u),
        b: store.add(format!("{name}.b"), p.b),
    }
}

fn add_mlp(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dims: &[usize]) -> Vec<Dense> {
    dims.windows(2)
        .enumerate()
        .map(|(i, io)| {
            let w = Tensor::uniform_fan_in(rng, &[io[1], io[0]], io[0]);
            (
                store.add(format!("{name}.fc{i}.w"), w),
                store.add(format!("{name}.fc{i}.b"), Tensor::zeros(&[io[1]])),
            )
        })
        .collect()
}

fn embedding_init(
    rng: &mut ChaCha8Rng,
    vocab: &Vocabulary,
    dim: usize,
    table: Option<&EmbeddingTable>,
) -> Result<Tensor> {
    let mut t = match table {
        Some(table) => {
            if table.dim() != dim {
                return Err(ModelError::Config(format!(
                    "embedding table has dim {} but the model uses {dim}",
                    table.dim()
                )));
            }
            let data = vocab
                .tokens()
                .iter()
                .flat_map(|tok| table.lookup(tok).iter().copied())
                .collect();
            Tensor::new(vec![vocab.len(), dim], data)?
        }
        None => Tensor::uniform_fan_in(rng, &[vocab.len(), dim], dim),
    };
    t.data_mut()[PAD_INDEX * dim..(PAD_INDEX + 1) * dim].fill(0.0);
    Ok(t)
}

impl PatchRnn {
    /// Fresh model; embeddings start from the given word2vec tables when
    /// provided (unknown tokens take the table's `<unk>` row).
    pub fn new(
        config: ModelConfig,
        code_vocab: Vocabulary,
        msg_vocab: Vocabulary,
        code_table: Option<&EmbeddingTable>,
        msg_table: Option<&EmbeddingTable>,
    ) -> Result<PatchRnn> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (e, h) = (config.embed_dim, config.lstm_hidden);

        let code_emb = store.add(
            "code.embedding",
            embedding_init(&mut rng, &code_vocab, e, code_table)?,
        );
        let msg_emb = store.add(
            "msg.embedding",
            embedding_init(&mut rng, &msg_vocab, e, msg_table)?,
        );
        store.set_trainable(code_emb, config.embedding_trainable);
        store.set_trainable(msg_emb, config.embedding_trainable);

        let mut code_lstm = Vec::with_capacity(config.code_lstm_layers);
        for l in 0..config.code_lstm_layers {
            let input = if l == 0 { code_feature_dim(e) } else { 2 * h };
            let f = add_lstm(&mut store, &mut rng, &format!("code.lstm{l}.fwd"), input, h);
            let b = add_lstm(&mut store, &mut rng, &format!("code.lstm{l}.bwd"), input, h);
            code_lstm.push([f, b]);
        }
        let code_fc = add_mlp(&mut store, &mut rng, "code", &config.code_fc_dims);
        let msg_lstm = [
            add_lstm(&mut store, &mut rng, "msg.lstm.fwd", e, h),
            add_lstm(&mut store, &mut rng, "msg.lstm.bwd", e, h),
        ];
        let msg_fc = add_mlp(&mut store, &mut rng, "msg", &config.msg_fc_dims);
        let fusion_fc = add_mlp(&mut store, &mut rng, "fusion", &config.fusion_fc_dims);

        Ok(PatchRnn {
            config,
            code_vocab,
            msg_vocab,
            store,
            ids: ParamIds {
                code_emb,
                msg_emb,
                code_lstm,
                code_fc,
                msg_lstm,
                msg_fc,
                fusion_fc,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn code_vocabulary(&self) -> &Vocabulary {
        &self.code_vocab
    }

    pub fn message_vocabulary(&self) -> &Vocabulary {
        &self.msg_vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Scalar parameters in one twin's LSTM stack (both twins use them).
    pub fn code_lstm_parameter_count(&self) -> usize {
        self.ids
            .code_lstm
            .iter()
            .flatten()
            .map(|l| {
                [l.w, l.u, l.b]
                    .iter()
                    .map(|&id| self.store.value(id).len())
                    .sum::<usize>()
            })
            .sum()
    }

    /// Short content hash of the parameters and vocabularies.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (_, p) in self.store.iter() {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        for t in self
            .code_vocab
            .tokens()
            .iter()
            .chain(self.msg_vocab.tokens())
        {
            h.update(t.as_bytes());
            h.update([0]);
        }
        h.finalize()
            .iter()
            .take(6)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn version(&self) -> String {
        format!(
            "patchrnn-{}+{}",
            env!("CARGO_PKG_VERSION"),
            self.fingerprint()
        )
    }

    fn mlp(
        &self,
        tape: &mut Tape,
        mut x: Var,
        layers: &[Dense],
        dims: &mut Vec<usize>,
    ) -> Result<Var> {
        for (i, &(w, b)) in layers.iter().enumerate() {
            let (wv, bv) = (tape.param(w), tape.param(b));
            x = tape.linear(x, wv, bv)?;
            if i + 1 < layers.len() {
                x = tape.relu(x)?;
            }
            dims.push(tape.value(x).cols());
        }
        Ok(x)
    }

    /// Forward and backward LSTM over `x`; returns (fwd, bwd, concat).
    fn bilstm(
        &self,
        tape: &mut Tape,
        x: Var,
        ids: &[LstmIds; 2],
        layout: &SeqLayout,
    ) -> Result<(Var, Var, Var)> {
        let mut outs = [x; 2];
        for (dir, l) in ids.iter().enumerate() {
            let (w, u, b) = (tape.param(l.w), tape.param(l.u), tape.param(l.b));
            outs[dir] = tape.lstm(x, w, u, b, layout, dir == 1)?;
        }
        let cat = tape.concat_cols(&outs)?;
        Ok((outs[0], outs[1], cat))
    }

    /// Final forward state (row at length−1) and final backward state (row 0)
    /// of every sequence; zero rows for empty sequences.
    fn finals(tape: &mut Tape, fwd: Var, bwd: Var, layout: &SeqLayout) -> Result<(Var, Var)> {
        let b = layout.batch;
        let last: Vec<_> = layout
            .lengths
            .iter()
            .enumerate()
            .map(|(s, &l)| l.checked_sub(1).map(|t| t * b + s))
            .collect();
        let first: Vec<_> = layout
            .lengths
            .iter()
            .enumerate()
            .map(|(s, &l)| (l > 0).then_some(s))
            .collect();
        Ok((tape.gather_rows(fwd, last)?, tape.gather_rows(bwd, first)?))
    }

    /// Record the full forward pass for an encoded batch.
    pub(crate) fn forward(&self, tape: &mut Tape, batch: &features::Batch) -> Result<ForwardVars> {
        let ids = &self.ids;
        let n = batch.size;
        let mut trace = ShapeTrace::default();

        // code branch: both twins run as one batch of 2n sequences
        let emb = tape.param(ids.code_emb);
        let tok = tape.gather_rows(emb, batch.code_tokens.clone())?;
        let extra = tape.input(batch.code_extra.clone())?;
        let mut x = tape.concat_cols(&[tok, extra])?;
        trace.code_feature = tape.value(x).cols();
        let mut finals = Vec::new();
        for layer in &ids.code_lstm {
            let (f, b, cat) = self.bilstm(tape, x, layer, &batch.code_layout)?;
            trace.code_lstm_outputs.push(tape.value(cat).cols());
            let (ff, bf) = Self::finals(tape, f, b, &batch.code_layout)?;
            finals.push(ff);
            finals.push(bf);
            x = cat;
        }
        if self.config.twin_summary == TwinSummary::TopLayer {
            finals.drain(..finals.len() - 2);
        }
        let summary = tape.concat_cols(&finals)?;
        trace.twin_summary = tape.value(summary).cols();
        let unpatched = tape.gather_rows(summary, (0..n).map(Some).collect())?;
        let patched = tape.gather_rows(summary, (n..2 * n).map(Some).collect())?;
        let twin_concat = tape.concat_cols(&[unpatched, patched])?;
        trace.twin_concat = tape.value(twin_concat).cols();
        let code_vector = self.mlp(tape, twin_concat, &ids.code_fc, &mut trace.code_fc)?;

        // message branch
        let memb = tape.param(ids.msg_emb);
        let mx = tape.gather_rows(memb, batch.msg_tokens.clone())?;
        trace.msg_feature = tape.value(mx).cols();
        let (mf, mb, _) = self.bilstm(tape, mx, &ids.msg_lstm, &batch.msg_layout)?;
        let (mff, mbf) = Self::finals(tape, mf, mb, &batch.msg_layout)?;
        let msg_summary = tape.concat_cols(&[mff, mbf])?;
        trace.msg_summary = tape.value(msg_summary).cols();
        let message_vector = self.mlp(tape, msg_summary, &ids.msg_fc, &mut trace.msg_fc)?;

        let fusion_input = tape.concat_cols(&[code_vector, message_vector])?;
        trace.fusion_input = tape.value(fusion_input).cols();
        let logits = self.mlp(tape, fusion_input, &ids.fusion_fc, &mut trace.fusion_fc)?;
        Ok(ForwardVars {
            twin_concat,
            code_vector,
            message_vector,
            fusion_input,
            logits,
            trace,
        })
    }

    /// Dimension schedule of a forward pass over `samples`.
    pub fn shape_trace(&self, samples: &[&PreparedSample]) -> Result<ShapeTrace> {
        let batch = self.encode(samples)?;
        let mut tape = Tape::new(&self.store);
        Ok(self.forward(&mut tape, &batch)?.trace)
    }

    /// Code vectors, message vectors and logits (row-major, one row per sample).
    pub fn branch_outputs(&self, samples: &[&PreparedSample]) -> Result<BranchOutputs> {
        let batch = self.encode(samples)?;
        let mut tape = Tape::new(&self.store);
        let f = self.forward(&mut tape, &batch)?;
        let get = |v: Var| tape.value(v).clone();
        Ok(BranchOutputs {
            twin_concat: get(f.twin_concat),
            code_vector: get(f.code_vector),
            message_vector: get(f.message_vector),
            fusion_input: get(f.fusion_input),
            logits: get(f.logits),
        })
    }

    /// Mean (class-weighted) loss over `samples` and its gradients.
    pub fn loss_and_grads(&self, samples: &[&PreparedSample]) -> Result<(f64, crate::nn::Grads)> {
        let batch = self.encode(samples)?;
        let labels = features::labels_of(samples)?;
        let mut tape = Tape::new(&self.store);
        let f = self.forward(&mut tape, &batch)?;
        let loss = tape.softmax_cross_entropy(
            f.logits,
            &labels,
            self.config.class_weights.as_ref().map(|w| &w[..]),
        )?;
        let value = tape.value(loss).data()[0];
        Ok((value, tape.backward(loss)?))
    }

    /// Predictions for one batch.
    pub fn predict_batch(&self, samples: &[&PreparedSample]) -> Result<Vec<Prediction>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let batch = self.encode(samples)?;
        let mut tape = Tape::new(&self.store);
        let f = self.forward(&mut tape, &batch)?;
        let logits = tape.value(f.logits);
        Ok((0..samples.len())
            .map(|r| Prediction::from_probability(softmax(logits.row(r))[Label::Security.index()]))
            .collect())
    }

    /// Predictions in chunks of `batch_size`, spread over `threads` workers.
    /// Chunking does not depend on the thread count, so results don't either.
    pub fn predict_prepared(
        &self,
        samples: &[PreparedSample],
        threads: usize,
    ) -> Result<Vec<Prediction>> {
        let refs: Vec<&PreparedSample> = samples.iter().collect();
        let chunks: Vec<&[&PreparedSample]> = refs.chunks(self.config.batch_size.max(1)).collect();
        let threads = threads.max(1).min(chunks.len().max(1));
        if threads == 1 {
            let mut out = Vec::with_capacity(samples.len());
            for c in chunks {
                out.extend(self.predict_batch(c)?);
            }
            return Ok(out);
        }
        let mut results: Vec<Option<Result<Vec<Prediction>>>> =
            (0..chunks.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            for (w, slots) in results
                .chunks_mut(chunks.len().div_ceil(threads))
                .enumerate()
            {
                let start = w * chunks.len().div_ceil(threads);
                let chunks = &chunks;
                s.spawn(move || {
                    for (i, slot) in slots.iter_mut().enumerate() {
                        *slot = Some(self.predict_batch(chunks[start + i]));
                    }
                });
            }
        });
        let mut out = Vec::with_capacity(samples.len());
        for r in results {
            out.extend(r.expect("every chunk is processed")?);
        }
        Ok(out)
    }

    pub fn prepare(&self, patch: &PatchFile, id: &str) -> PreparedSample {
        prepare(patch, id, &self.config.pipeline_options())
    }

    /// Full pipeline for one patch.
    pub fn predict(&self, patch: &PatchFile) -> Result<Prediction> {
        let sample = self.prepare(patch, patch.commit_id.as_deref().unwrap_or(""));
        Ok(self.predict_batch(&[&sample])?[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutputs {
    pub twin_concat: Tensor,
    pub code_vector: Tensor,
    pub message_vector: Tensor,
    pub fusion_input: Tensor,
    pub logits: Tensor,
}
