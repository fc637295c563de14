// MIRM checkpoint.
//
//   "MIRM" | u32 version | u32 record_len | architecture JSON
//   f64 little-endian parameter blobs, in the order the record lists them
//
// The record names every tensor with its shape so readers can check the
// layout before touching the blobs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::losses::LossKind;
use super::model::{EncoderConfig, EncoderModel, PairClassifier, PolicyConfig, PolicyHead};
use super::train::TrainedModels;
use crate::numerics::{NumericsError, ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"MIRM";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Layout(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierRecord {
    pub hidden: usize,
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub method: LossKind,
    pub encoder: EncoderConfig,
    pub policy: Option<PolicyConfig>,
    pub classifier: Option<ClassifierRecord>,
    pub tensors: Vec<TensorRecord>,
}

fn stores(m: &TrainedModels) -> Vec<&ParamStore<f64>> {
    let mut v = vec![&m.encoder.params];
    if let Some(p) = &m.policy {
        v.push(&p.params);
    }
    if let Some(c) = &m.classifier {
        v.push(&c.params);
    }
    v
}

pub fn to_bytes(m: &TrainedModels) -> Vec<u8> {
    let mut tensors = Vec::new();
    for s in stores(m) {
        for (name, t) in s.names().iter().zip(s.tensors()) {
            tensors.push(TensorRecord {
                name: name.clone(),
                shape: t.shape().to_vec(),
            });
        }
    }
    let arch = Architecture {
        method: m.kind,
        encoder: m.encoder.config().clone(),
        policy: m.policy.as_ref().map(|p| p.config.clone()),
        classifier: m.classifier.as_ref().map(|c| ClassifierRecord {
            hidden: c.hidden(),
            classes: c.classes(),
        }),
        tensors,
    };
    let json = serde_json::to_vec(&arch).expect("plain data serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for s in stores(m) {
        for t in s.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn save(m: &TrainedModels, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(m))?;
    Ok(())
}

fn format_err(offset: usize, msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn read_store(buf: &[u8], pos: &mut usize, records: &[TensorRecord]) -> Result<ParamStore<f64>> {
    let mut store = ParamStore::new();
    for r in records {
        let n: usize = r.shape.iter().product();
        if buf.len() - *pos < n * 8 {
            return Err(format_err(*pos, format!("truncated tensor {}", r.name)));
        }
        let data = buf[*pos..*pos + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *pos += n * 8;
        store.push(r.name.clone(), Tensor::new(r.shape.clone(), data)?);
    }
    Ok(store)
}

pub fn from_bytes(buf: &[u8]) -> Result<TrainedModels> {
    if buf.len() < 12 || &buf[..4] != MAGIC {
        return Err(format_err(0, "bad magic, expected \"MIRM\""));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let len = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes")) as usize;
    if buf.len() - 12 < len {
        return Err(format_err(8, "truncated architecture record"));
    }
    let arch: Architecture =
        serde_json::from_slice(&buf[12..12 + len]).map_err(|e| format_err(12, format!("bad architecture record: {e}")))?;
    let mut pos = 12 + len;

    let enc_fresh = EncoderModel::<f64>::new(&arch.encoder, 0);
    let n_enc = enc_fresh.params.len();
    let n_pol = arch
        .policy
        .as_ref()
        .map_or(0, |p| PolicyHead::<f64>::new(p, &arch.encoder, 0).params.len());
    if arch.tensors.len() < n_enc + n_pol {
        return Err(format_err(12, "architecture record lists too few tensors"));
    }
    let encoder = EncoderModel::from_params(&arch.encoder, read_store(buf, &mut pos, &arch.tensors[..n_enc])?)?;
    let policy = match &arch.policy {
        Some(p) => Some(PolicyHead::from_params(
            p,
            &arch.encoder,
            read_store(buf, &mut pos, &arch.tensors[n_enc..n_enc + n_pol])?,
        )?),
        None => None,
    };
    let classifier = match &arch.classifier {
        Some(c) => Some(PairClassifier::from_params(
            arch.encoder.embed_dim,
            c.hidden,
            c.classes,
            read_store(buf, &mut pos, &arch.tensors[n_enc + n_pol..])?,
        )?),
        None => None,
    };
    if pos != buf.len() {
        return Err(format_err(pos, "trailing bytes"));
    }
    Ok(TrainedModels {
        kind: arch.method,
        encoder,
        policy,
        classifier,
    })
}

pub fn load(path: &Path) -> Result<TrainedModels> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::train::TrainConfig;

    fn models(kind: LossKind) -> TrainedModels {
        TrainedModels::init(&TrainConfig {
            loss_kind: kind,
            encoder: EncoderConfig::tiny(),
            policy_hidden: vec![8],
            classifier_hidden: 8,
            ..TrainConfig::default()
        })
    }

    #[test]
    fn round_trip_every_method() {
        for kind in LossKind::ALL {
            let m = models(kind);
            let bytes = to_bytes(&m);
            assert_eq!(&bytes[..4], b"MIRM");
            assert_eq!(from_bytes(&bytes).unwrap(), m);
        }
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = to_bytes(&models(LossKind::Gcp));
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(from_bytes(&v), Err(CheckpointError::Format { offset: 4, .. })));
    }
}
