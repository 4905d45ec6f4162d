//! Binary checkpoint container: an 8-byte magic, a little-endian `u32`
//! format version, a `u64` header length, a JSON header, then every tensor as
//! little-endian `f32` values in header order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{CharVocab, Model, ModelError};
use crate::editrules::{EditRuleVocab, VocabEntry};
use crate::neuralcore::{ModelConfig, Tensor};
use crate::stemrules::{StemRuleEntry, StemRuleVocab, TagEntry};
use crate::translit::TranslitTable;
use crate::Task;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SNDHCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemVocabFile {
    pub joint_tags: bool,
    pub rules: Vec<StemRuleEntry>,
    pub tags: Vec<TagEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub tool_version: String,
    pub task: Task,
    pub config: ModelConfig,
    #[serde(default)]
    pub translit: Option<Vec<(String, char)>>,
    pub chars: CharVocab,
    #[serde(default)]
    pub edit_rules: Option<Vec<VocabEntry>>,
    #[serde(default)]
    pub stem_rules: Option<StemVocabFile>,
    pub tensors: Vec<TensorEntry>,
    /// Caller-supplied metadata, e.g. the resolved run configuration.
    #[serde(default)]
    pub extra: serde_json::Value,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl Model {
    pub fn header(&self, extra: serde_json::Value) -> CheckpointHeader {
        CheckpointHeader {
            tool_version: crate::VERSION.to_string(),
            task: self.task,
            config: self.config.clone(),
            translit: self.translit.as_ref().map(|t| t.pairs().to_vec()),
            chars: self.chars.clone(),
            edit_rules: self.edit_vocab.as_ref().map(EditRuleVocab::to_entries),
            stem_rules: self.stem_vocab.as_ref().map(|v| StemVocabFile {
                joint_tags: v.joint_tags,
                rules: v.entries(),
                tags: v.tag_entries(),
            }),
            tensors: self
                .params
                .iter()
                .map(|(_, name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            extra,
        }
    }

    /// Writes the checkpoint. The byte stream depends only on the model and
    /// `extra`.
    pub fn save<W: Write>(&self, mut w: W, extra: serde_json::Value) -> Result<(), ModelError> {
        let header = serde_json::to_vec(&self.header(extra)).map_err(|e| bad(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for (_, _, t) in self.params.iter() {
            let mut bytes = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self, extra: serde_json::Value) -> Result<Vec<u8>, ModelError> {
        let mut out = Vec::new();
        self.save(&mut out, extra)?;
        Ok(out)
    }

    /// Reads only the header.
    pub fn read_header<R: Read>(r: &mut R) -> Result<CheckpointHeader, ModelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        let version = u32::from_le_bytes(v);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| bad("header too large"))?;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        serde_json::from_slice(&header).map_err(|e| bad(format!("header: {e}")))
    }

    /// Rebuilds the network from the header and overwrites every parameter
    /// with the stored values.
    pub fn load<R: Read>(mut r: R) -> Result<(Model, CheckpointHeader), ModelError> {
        let header = Model::read_header(&mut r)?;
        let translit = match &header.translit {
            Some(pairs) => Some(TranslitTable::new(pairs.clone()).map_err(|e| bad(e.to_string()))?),
            None => None,
        };
        let edit_vocab = match &header.edit_rules {
            Some(entries) => Some(EditRuleVocab::from_entries(entries)?),
            None => None,
        };
        let stem_vocab = match &header.stem_rules {
            Some(f) => Some(StemRuleVocab::from_entries(&f.rules, &f.tags, f.joint_tags).map_err(bad)?),
            None => None,
        };
        let mut model = Model::from_parts(
            header.task,
            header.config.clone(),
            translit,
            header.chars.clone(),
            edit_vocab,
            stem_vocab,
        )?;
        if header.tensors.len() != model.params.len() {
            return Err(bad(format!(
                "{} tensors stored, model has {}",
                header.tensors.len(),
                model.params.len()
            )));
        }
        for entry in &header.tensors {
            let id = model
                .params
                .id(&entry.name)
                .ok_or_else(|| bad(format!("unknown tensor {:?}", entry.name)))?;
            let t = model.params.get_mut(id);
            if t.shape() != entry.shape.as_slice() {
                return Err(bad(format!(
                    "tensor {:?}: stored shape {:?}, expected {:?}",
                    entry.name,
                    entry.shape,
                    t.shape()
                )));
            }
            let mut bytes = vec![0u8; t.len() * 4];
            r.read_exact(&mut bytes)
                .map_err(|_| bad(format!("payload of {:?} truncated", entry.name)))?;
            let values: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            *t = Tensor::new(entry.shape.clone(), values)?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes after the last tensor"));
        }
        Ok((model, header))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Model, CheckpointHeader), ModelError> {
        Model::load(bytes)
    }
}
