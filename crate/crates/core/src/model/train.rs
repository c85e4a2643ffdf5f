use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abstraction::build_code_vocabulary;
use crate::embedding::EmbeddingTable;
use crate::eval::{compute_metrics, ConfusionMatrix};
use crate::message::build_message_vocabulary;
use crate::nn::{Adam, AdamConfig, Tape};
use crate::patch::Label;
use crate::pipeline::PreparedSample;

use super::features::labels_of;
use super::{ModelConfig, ModelError, PatchRnn, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub loss: f64,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses seen during the epoch.
    pub train_loss: f64,
    /// Accuracy of the predictions made on each batch before its update.
    pub train_accuracy: f64,
    pub validation: Option<ValidationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters the returned model carries.
    pub selected_epoch: usize,
}

/// Builds vocabularies from `train_samples`, then trains a fresh model.
pub fn train(
    train_samples: &[PreparedSample],
    holdout: Option<&[PreparedSample]>,
    config: ModelConfig,
    code_table: Option<&EmbeddingTable>,
    msg_table: Option<&EmbeddingTable>,
) -> Result<(PatchRnn, History)> {
    check_dataset(train_samples)?;
    let code_vocab = build_code_vocabulary(
        train_samples
            .iter()
            .flat_map(|s| [&s.unpatched[..], &s.patched[..]]),
    );
    let msg_vocab = build_message_vocabulary(train_samples.iter().map(|s| &s.message));
    let mut model = PatchRnn::new(config, code_vocab, msg_vocab, code_table, msg_table)?;
    let history = train_model(&mut model, train_samples, holdout)?;
    Ok((model, history))
}

fn check_dataset(samples: &[PreparedSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let refs: Vec<&PreparedSample> = samples.iter().collect();
    let labels = labels_of(&refs)?;
    if !labels.contains(&Label::Security.index()) || !labels.contains(&Label::NonSecurity.index()) {
        return Err(ModelError::SingleClassDataset);
    }
    Ok(())
}

/// Mini-batch Adam on `model` for `config.epochs` epochs. With a holdout the
/// model ends on the parameters of the best validation-accuracy epoch
/// (earliest on ties); otherwise on the last epoch.
pub fn train_model(
    model: &mut PatchRnn,
    train_samples: &[PreparedSample],
    holdout: Option<&[PreparedSample]>,
) -> Result<History> {
    train_model_with(model, train_samples, holdout, |_, _| true)
}

/// [`train_model`] with a per-epoch hook; returning `false` stops after
/// that epoch.
pub fn train_model_with<F>(
    model: &mut PatchRnn,
    train_samples: &[PreparedSample],
    holdout: Option<&[PreparedSample]>,
    mut on_epoch: F,
) -> Result<History>
where
    F: FnMut(&PatchRnn, &EpochRecord) -> bool,
{
    check_dataset(train_samples)?;
    let cfg = model.config.clone();
    cfg.validate()?;
    // stream 1 keeps shuffling independent of the initialization draws
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let weights = cfg.class_weights.as_ref().map(|w| &w[..]);

    let all: Vec<&PreparedSample> = train_samples.iter().collect();
    let initial_loss = model.mean_loss(&all)?;
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, crate::nn::ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train_samples[i]).collect();
            let labels = labels_of(&batch)?;
            let encoded = model.encode(&batch)?;
            let grads = {
                let mut tape = Tape::new(&model.store);
                let f = model.forward(&mut tape, &encoded)?;
                let loss = tape.softmax_cross_entropy(f.logits, &labels, weights)?;
                loss_sum += tape.value(loss).data()[0] * batch.len() as f64;
                let probs = tape.probabilities(loss).expect("cross-entropy node");
                correct += probs
                    .chunks_exact(2)
                    .zip(&labels)
                    .filter(|(p, &y)| usize::from(p[1] >= 0.5) == y)
                    .count();
                tape.backward(loss)?
            };
            adam.step(&mut model.store, &grads);
        }
        let n = train_samples.len() as f64;
        let validation = match holdout {
            Some(h) if !h.is_empty() => Some(model.validate_on(h)?),
            _ => None,
        };
        if let Some(v) = &validation {
            if best.as_ref().is_none_or(|(acc, _, _)| v.accuracy > *acc) {
                best = Some((v.accuracy, epoch, model.store.clone()));
            }
        }
        log::debug!("epoch {epoch}: loss {:.6}", loss_sum / n);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            validation,
        };
        let go_on = on_epoch(model, &record);
        epochs.push(record);
        if !go_on {
            break;
        }
    }

    let selected_epoch = match best {
        Some((_, epoch, store)) => {
            model.store = store;
            epoch
        }
        None => epochs.len(),
    };
    Ok(History {
        initial_loss,
        epochs,
        selected_epoch,
    })
}

impl PatchRnn {
    /// Mean loss over `samples`, evaluated in `batch_size` chunks.
    pub fn mean_loss(&self, samples: &[&PreparedSample]) -> Result<f64> {
        let weights = self.config.class_weights.as_ref().map(|w| &w[..]);
        let mut sum = 0.0;
        for chunk in samples.chunks(self.config.batch_size) {
            let labels = labels_of(chunk)?;
            let encoded = self.encode(chunk)?;
            let mut tape = Tape::new(&self.store);
            let f = self.forward(&mut tape, &encoded)?;
            let loss = tape.softmax_cross_entropy(f.logits, &labels, weights)?;
            sum += tape.value(loss).data()[0] * chunk.len() as f64;
        }
        Ok(sum / samples.len().max(1) as f64)
    }

    fn validate_on(&self, holdout: &[PreparedSample]) -> Result<ValidationRecord> {
        let refs: Vec<&PreparedSample> = holdout.iter().collect();
        let loss = self.mean_loss(&refs)?;
        let predictions = self.predict_prepared(holdout, 1)?;
        let labels = labels_of(&refs)?;
        let cm = ConfusionMatrix::from_pairs(
            labels
                .iter()
                .zip(&predictions)
                .map(|(&y, p)| (Label::from_index(y), p.label)),
        );
        let m = compute_metrics(&cm).expect("holdout is non-empty");
        Ok(ValidationRecord {
            loss,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        })
    }
}
