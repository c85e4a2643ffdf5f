//! word2vec with negative sampling (skip-gram or CBOW) and the frozen
//! lookup tables it produces.

use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::PAD;
use crate::vocab::{escape, unescape, Vocabulary, PAD_INDEX, UNK_INDEX};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding corpus has no trainable tokens")]
    EmptyCorpus,
    #[error("invalid word2vec config: {0}")]
    InvalidConfig(String),
    #[error("embedding io: {0}")]
    Io(#[from] io::Error),
    #[error("embedding file line {line}: {reason}")]
    Format { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W2vMode {
    SkipGram,
    Cbow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word2VecConfig {
    pub dim: usize,
    pub window: usize,
    pub negative_samples: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub min_count: u64,
    pub mode: W2vMode,
    pub seed: u64,
}

impl Default for Word2VecConfig {
    fn default() -> Self {
        Word2VecConfig {
            dim: 128,
            window: 5,
            negative_samples: 5,
            epochs: 5,
            initial_lr: 0.025,
            min_count: 1,
            mode: W2vMode::SkipGram,
            seed: 42,
        }
    }
}

impl Word2VecConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let bad = |m: &str| Err(EmbeddingError::InvalidConfig(m.to_string()));
        if self.dim < 1 {
            return bad("dim must be at least 1");
        }
        if self.window < 1 {
            return bad("window must be at least 1");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return bad("initial_lr must be positive");
        }
        Ok(())
    }
}

/// Token vectors, one row per vocabulary entry. Row 0 (`<pad>`) is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    vectors: Vec<f64>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(
        vocab: Vocabulary,
        vectors: Vec<f64>,
        dim: usize,
    ) -> Result<EmbeddingTable, EmbeddingError> {
        if dim == 0 || vectors.len() != vocab.len() * dim {
            return Err(EmbeddingError::InvalidConfig(format!(
                "{} values for {} tokens of dim {dim}",
                vectors.len(),
                vocab.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidConfig(
                "non-finite vector component".into(),
            ));
        }
        let mut t = EmbeddingTable {
            vocab,
            vectors,
            dim,
        };
        t.vectors[..dim].fill(0.0);
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    /// The token's vector; unknown tokens get the `<unk>` row.
    pub fn lookup(&self, token: &str) -> &[f64] {
        self.row(self.vocab.index_of(token))
    }

    /// `w2v <dim> <n>` header, then `token<TAB>v1,...,vd` per row.
    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "w2v {} {}", self.dim, self.len())?;
        for (i, tok) in self.vocab.tokens().iter().enumerate() {
            let vals: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}\t{}", escape(tok), vals.join(","))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<EmbeddingTable, EmbeddingError> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let bad = |line: usize, reason: &str| EmbeddingError::Format {
            line,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (dim, n) = match fields.as_slice() {
            ["w2v", d, n] => (
                d.parse::<usize>().map_err(|_| bad(1, "bad dim"))?,
                n.parse::<usize>()
                    .map_err(|_| bad(1, "bad vocabulary size"))?,
            ),
            _ => return Err(bad(1, "expected `w2v <dim> <vocab_size>`")),
        };
        let mut tokens = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n * dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let lno = i + 2;
            let (tok, vals) = line
                .split_once('\t')
                .ok_or_else(|| bad(lno, "missing tab"))?;
            let before = vectors.len();
            for v in vals.split(',') {
                vectors.push(v.parse::<f64>().map_err(|_| bad(lno, "bad number"))?);
            }
            if vectors.len() - before != dim {
                return Err(bad(lno, "wrong number of components"));
            }
            tokens.push(unescape(tok));
        }
        if tokens.len() != n {
            return Err(bad(1, "row count differs from header"));
        }
        let freqs = vec![0; n];
        let vocab = Vocabulary::from_ordered(tokens, freqs).map_err(|e| bad(2, &e.to_string()))?;
        EmbeddingTable::new(vocab, vectors, dim)
    }
}

pub struct SgnsGrad {
    pub loss: f64,
    pub d_center: Vec<f64>,
    pub d_context: Vec<f64>,
    pub d_negatives: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-log σ(c·o) - Σ log σ(-c·n)` and its gradients.
pub fn sgns_loss_and_grad(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> SgnsGrad {
    let s = dot(center, context);
    let mut loss = -log_sigmoid(s);
    let gpos = sigmoid(s) - 1.0;
    let mut d_center: Vec<f64> = context.iter().map(|o| gpos * o).collect();
    let d_context = center.iter().map(|c| gpos * c).collect();
    let mut d_negatives = Vec::with_capacity(negatives.len());
    for n in negatives {
        let sn = dot(center, n);
        loss -= log_sigmoid(-sn);
        let g = sigmoid(sn);
        d_center
            .iter_mut()
            .zip(n.iter())
            .for_each(|(d, v)| *d += g * v);
        d_negatives.push(center.iter().map(|c| g * c).collect());
    }
    SgnsGrad {
        loss,
        d_center,
        d_context,
        d_negatives,
    }
}

/// Unigram^0.75 sampler over trainable indices.
struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    fn new(vocab: &Vocabulary) -> NegativeSampler {
        let mut acc = 0.0;
        let cumulative = (0..vocab.len())
            .map(|i| {
                if i > UNK_INDEX {
                    acc += (vocab.frequency(i) as f64).powf(0.75);
                }
                acc
            })
            .collect();
        NegativeSampler { cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let x = rng.random_range(0.0..total);
        self.cumulative.partition_point(|&c| c <= x)
    }
}

pub fn train_embeddings(
    corpus: &[Vec<String>],
    config: &Word2VecConfig,
) -> Result<EmbeddingTable, EmbeddingError> {
    train_embeddings_with_loss(corpus, config).map(|(t, _)| t)
}

/// Trains and also returns the mean pair loss of each epoch. Each returned
/// vector is the sum of the word's input and output vectors.
pub fn train_embeddings_with_loss(
    corpus: &[Vec<String>],
    config: &Word2VecConfig,
) -> Result<(EmbeddingTable, Vec<f64>), EmbeddingError> {
    config.validate()?;
    let sentences: Vec<Vec<&str>> = corpus
        .iter()
        .map(|s| s.iter().map(String::as_str).filter(|t| *t != PAD).collect())
        .collect();
    let vocab = Vocabulary::build_with_min_count(&sentences, config.min_count);
    if vocab.len() <= 2 {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let encoded: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| {
            s.iter()
                .filter_map(|t| vocab.get(t))
                .filter(|&i| i > UNK_INDEX)
                .collect()
        })
        .collect();
    let total_words: usize = encoded.iter().map(Vec::len).sum();

    let dim = config.dim;
    let n = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let half = 0.5 / dim as f64;
    let mut syn0: Vec<f64> = (0..n * dim)
        .map(|i| {
            if i / dim > UNK_INDEX {
                rng.random_range(-half..half)
            } else {
                0.0
            }
        })
        .collect();
    let mut syn1 = vec![0.0; n * dim];
    let sampler = NegativeSampler::new(&vocab);

    let budget = (config.epochs * total_words) as f64 + 1.0;
    let mut processed = 0usize;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut input = vec![0.0; dim];
    let mut negs: Vec<usize> = Vec::with_capacity(config.negative_samples);

    for _ in 0..config.epochs {
        let (mut loss_sum, mut pairs) = (0.0, 0usize);
        for sent in &encoded {
            for pos in 0..sent.len() {
                let lr = config.initial_lr * (1.0 - processed as f64 / budget).max(1e-4);
                processed += 1;
                let reach = config.window - rng.random_range(0..config.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(sent.len() - 1);
                let ctx: Vec<usize> = (lo..=hi).filter(|&c| c != pos).map(|c| sent[c]).collect();
                if ctx.is_empty() {
                    continue;
                }
                // (input rows, predicted word)
                let jobs: Vec<(Vec<usize>, usize)> = match config.mode {
                    W2vMode::SkipGram => ctx.iter().map(|&o| (vec![sent[pos]], o)).collect(),
                    W2vMode::Cbow => vec![(ctx, sent[pos])],
                };
                for (inputs, target) in jobs {
                    input.fill(0.0);
                    for &i in &inputs {
                        input
                            .iter_mut()
                            .zip(&syn0[i * dim..(i + 1) * dim])
                            .for_each(|(a, b)| *a += b);
                    }
                    let scale = 1.0 / inputs.len() as f64;
                    input.iter_mut().for_each(|v| *v *= scale);

                    negs.clear();
                    for _ in 0..config.negative_samples {
                        let s = sampler.sample(&mut rng);
                        if s != target {
                            negs.push(s);
                        }
                    }
                    let neg_rows: Vec<&[f64]> = negs
                        .iter()
                        .map(|&k| &syn1[k * dim..(k + 1) * dim])
                        .collect();
                    let g = sgns_loss_and_grad(
                        &input,
                        &syn1[target * dim..(target + 1) * dim],
                        &neg_rows,
                    );
                    loss_sum += g.loss;
                    pairs += 1;

                    for (v, d) in syn1[target * dim..(target + 1) * dim]
                        .iter_mut()
                        .zip(&g.d_context)
                    {
                        *v -= lr * d;
                    }
                    for (&k, dk) in negs.iter().zip(&g.d_negatives) {
                        for (v, d) in syn1[k * dim..(k + 1) * dim].iter_mut().zip(dk) {
                            *v -= lr * d;
                        }
                    }
                    for &i in &inputs {
                        for (v, d) in syn0[i * dim..(i + 1) * dim].iter_mut().zip(&g.d_center) {
                            *v -= lr * scale * d;
                        }
                    }
                }
            }
        }
        epoch_losses.push(if pairs > 0 {
            loss_sum / pairs as f64
        } else {
            0.0
        });
    }

    // published vectors are input + output rows, so words that predict each
    // other end up close even when they never share a context
    for (v, o) in syn0.iter_mut().zip(&syn1) {
        *v += o;
    }
    // <unk> is the mean of the trained rows
    let trained = (n - 2) as f64;
    for j in 0..dim {
        let mean = (2..n).map(|i| syn0[i * dim + j]).sum::<f64>() / trained;
        syn0[UNK_INDEX * dim + j] = mean;
        syn0[PAD_INDEX * dim + j] = 0.0;
    }
    Ok((EmbeddingTable::new(vocab, syn0, dim)?, epoch_losses))
}
