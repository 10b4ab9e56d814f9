//! Versioned binary checkpoint shared by both language models: a JSON
//! metadata block, named parameter tensors, and optional optimizer state.
//!
//! Layout (little endian): magic `SVCK`, u32 version, u32 metadata length,
//! metadata JSON, then a tensor section, then u8 train-state flag followed by
//! state JSON and two more tensor sections (first and second moments).
//! A tensor section is u32 count and per tensor: u32 name length, name,
//! u8 dtype (0 = f32), u32 rank, u32 dims, raw values.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TransformerConfig;
use crate::nn::{ParamSet, Tensor};
use crate::sar::SarModel;
use crate::snar::SnarModel;
use crate::text::Vocabulary;
use crate::trainer::{AdamState, TrainConfig, TrainState};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SVCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sar,
    Snar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub config: TransformerConfig,
    pub text_vocab: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codec_layers: Option<usize>,
    /// Vocabulary file contents, so a checkpoint is self-contained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
struct StateHeader {
    step: u64,
    epoch: u64,
    batch_in_epoch: usize,
    rejected_steps: u64,
    best_valid: Option<f64>,
    adam_updates: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamSet<f32>,
    pub state: Option<TrainState>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensors(buf: &mut Vec<u8>, p: &ParamSet<f32>) {
    put_u32(buf, p.len());
    for (name, t) in p.names().iter().zip(p.tensors()) {
        put_u32(buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        buf.push(DTYPE_F32);
        put_u32(buf, t.shape.len());
        for &d in &t.shape {
            put_u32(buf, d);
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.bytes.len() < n {
            return Err("truncated checkpoint".into());
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self) -> std::result::Result<T, String> {
        let n = self.u32()?;
        serde_json::from_slice(self.take(n)?).map_err(|e| format!("bad metadata: {e}"))
    }

    fn tensors(&mut self) -> std::result::Result<Vec<(String, Tensor<f32>)>, String> {
        let count = self.u32()?;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let n = self.u32()?;
            let name = String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
            let dtype = self.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(format!("tensor {name}: unsupported dtype {dtype}"));
            }
            let rank = self.u32()?;
            let shape = (0..rank).map(|_| self.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
            let len: usize = shape.iter().product();
            let data = self
                .take(len * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            out.push((name, Tensor { shape, data }));
        }
        Ok(out)
    }
}

fn param_set(named: Vec<(String, Tensor<f32>)>) -> ParamSet<f32> {
    let mut p = ParamSet::default();
    p.extend_named(named);
    p
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, CHECKPOINT_VERSION as usize);
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        put_u32(&mut buf, meta.len());
        buf.extend_from_slice(&meta);
        put_tensors(&mut buf, &self.params);
        match &self.state {
            None => buf.push(0),
            Some(s) => {
                buf.push(1);
                let header = StateHeader {
                    step: s.step,
                    epoch: s.epoch,
                    batch_in_epoch: s.batch_in_epoch,
                    rejected_steps: s.rejected_steps,
                    best_valid: s.best_valid,
                    adam_updates: s.adam.updates,
                };
                let header = serde_json::to_vec(&header).expect("state serializes");
                put_u32(&mut buf, header.len());
                buf.extend_from_slice(&header);
                put_tensors(&mut buf, &s.adam.m);
                put_tensors(&mut buf, &s.adam.v);
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes };
        if r.take(4)? != MAGIC {
            return Err("missing SVCK magic".into());
        }
        let version = r.u32()? as u32;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let meta: CheckpointMeta = r.json()?;
        let params = param_set(r.tensors()?);
        let state = match r.take(1)?[0] {
            0 => None,
            1 => {
                let h: StateHeader = r.json()?;
                let m = param_set(r.tensors()?);
                let v = param_set(r.tensors()?);
                Some(TrainState {
                    step: h.step,
                    epoch: h.epoch,
                    batch_in_epoch: h.batch_in_epoch,
                    rejected_steps: h.rejected_steps,
                    best_valid: h.best_valid,
                    adam: AdamState { updates: h.adam_updates, m, v },
                })
            }
            f => return Err(format!("bad train-state flag {f}")),
        };
        if !r.bytes.is_empty() {
            return Err("trailing bytes after checkpoint".into());
        }
        Ok(Self { meta, params, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            f.write_all(&self.to_bytes())?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|message| Error::Format { path: path.to_path_buf(), message })
    }

    pub fn vocabulary(&self) -> Result<Option<Vocabulary>> {
        self.meta.vocab.as_deref().map(Vocabulary::from_json).transpose()
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.meta.kind != kind {
            return Err(Error::InvalidConfig(format!("checkpoint holds a {:?} model, not {kind:?}", self.meta.kind)));
        }
        Ok(())
    }

    pub fn sar(&self) -> Result<SarModel<f32>> {
        self.expect_kind(ModelKind::Sar)?;
        let mut m = SarModel::new(self.meta.config.clone(), self.meta.text_vocab, 0)?;
        m.params
            .load_named(self.params.names().iter().cloned().zip(self.params.tensors().iter().cloned()).collect())?;
        Ok(m)
    }

    pub fn snar(&self) -> Result<SnarModel<f32>> {
        self.expect_kind(ModelKind::Snar)?;
        let layers =
            self.meta.codec_layers.ok_or_else(|| Error::InvalidConfig("checkpoint lacks codec_layers".into()))?;
        let mut m = SnarModel::new(self.meta.config.clone(), self.meta.text_vocab, layers, 0)?;
        m.params
            .load_named(self.params.names().iter().cloned().zip(self.params.tensors().iter().cloned()).collect())?;
        Ok(m)
    }

    pub fn from_sar(model: &SarModel<f32>, vocab: Option<&Vocabulary>, state: Option<TrainState>) -> Self {
        Self {
            meta: CheckpointMeta {
                kind: ModelKind::Sar,
                config: model.config.clone(),
                text_vocab: model.text_vocab,
                codec_layers: None,
                vocab: vocab.map(Vocabulary::to_json),
                train_config: None,
            },
            params: model.params.clone(),
            state,
        }
    }

    pub fn from_snar(model: &SnarModel<f32>, vocab: Option<&Vocabulary>, state: Option<TrainState>) -> Self {
        Self {
            meta: CheckpointMeta {
                kind: ModelKind::Snar,
                config: model.config.clone(),
                text_vocab: model.text_vocab,
                codec_layers: Some(model.codec_layers),
                vocab: vocab.map(Vocabulary::to_json),
                train_config: None,
            },
            params: model.params.clone(),
            state,
        }
    }
}
