use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::{read_checkpoint, write_checkpoint, Tensor};
use crate::vocab::Vocabulary;

use super::{ModelConfig, ModelError, PatchRnn, Result};

pub const CHECKPOINT_FORMAT: &str = "patchrnn-model/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabRecord {
    tokens: Vec<String>,
    freqs: Vec<u64>,
}

impl VocabRecord {
    fn of(v: &Vocabulary) -> Self {
        VocabRecord {
            tokens: v.tokens().to_vec(),
            freqs: (0..v.len()).map(|i| v.frequency(i)).collect(),
        }
    }

    fn into_vocab(self) -> Result<Vocabulary> {
        Vocabulary::from_ordered(self.tokens, self.freqs)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))
    }
}

/// JSON trailer stored after the tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: String,
    pub config: ModelConfig,
    code_vocab: VocabRecord,
    msg_vocab: VocabRecord,
}

impl PatchRnn {
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: self.config.clone(),
            code_vocab: VocabRecord::of(&self.code_vocab),
            msg_vocab: VocabRecord::of(&self.msg_vocab),
        };
        let json =
            serde_json::to_string(&meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let tensors: Vec<(&str, &Tensor)> = self
            .store
            .iter()
            .map(|(_, p)| (p.name.as_str(), &p.value))
            .collect();
        write_checkpoint(w, &tensors, &json)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<PatchRnn> {
        let (tensors, json) = read_checkpoint(r)?;
        let meta: CheckpointMeta = serde_json::from_str(&json)
            .map_err(|e| ModelError::Checkpoint(format!("metadata: {e}")))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!(
                "format {:?}, expected {CHECKPOINT_FORMAT:?}",
                meta.format
            )));
        }
        let mut model = PatchRnn::new(
            meta.config,
            meta.code_vocab.into_vocab()?,
            meta.msg_vocab.into_vocab()?,
            None,
            None,
        )?;
        if tensors.len() != model.store.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} tensors, model has {}",
                tensors.len(),
                model.store.len()
            )));
        }
        for (name, value) in tensors {
            let id = model
                .store
                .find(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("unknown tensor {name}")))?;
            let slot = model.store.get_mut(id);
            if slot.value.shape() != value.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {name}: shape {:?}, expected {:?}",
                    value.shape(),
                    slot.value.shape()
                )));
            }
            slot.value = value;
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PatchRnn> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PatchRnn> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
