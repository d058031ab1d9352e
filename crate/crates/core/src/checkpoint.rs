//! Binary checkpoint format.
//!
//! Layout: the 8-byte magic `ATPLCKP1`, a little-endian `u64` header
//! length, a UTF-8 JSON header (format version, config, dimensions,
//! category names, optional vocabulary, ordered tensor manifest), then every
//! tensor's entries as little-endian `f64` in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ModelDims, TrainConfig};
use crate::ingest::Vocabulary;
use crate::model::ModelParams;
use crate::numeric::Rng;

pub const MAGIC: &[u8; 8] = b"ATPLCKP1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(String),
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("tensor {name}: manifest says {found:?}, model expects {expected:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("tensor manifest mismatch: expected {expected}, found {found}")]
    Manifest { expected: String, found: String },
    #[error("{0} unexpected bytes after the tensor payload")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: TrainConfig,
    dims: ModelDims,
    categories: Vec<String>,
    vocab: Option<Vec<String>>,
    tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint: parameters plus the vocabulary used to train them,
/// when one was stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Option<Vocabulary>,
}

pub fn to_bytes(params: &ModelParams, vocab: Option<&Vocabulary>) -> Vec<u8> {
    let tensors = params.named_tensors();
    let header = Header {
        format_version: FORMAT_VERSION,
        config: params.config.clone(),
        dims: params.dims,
        categories: params.classifier.category_names.clone(),
        vocab: vocab.map(|v| v.tokens().to_vec()),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let payload: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
    let mut out = Vec::with_capacity(16 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() {
        return Err(CheckpointError::Truncated(
            "file shorter than the magic".into(),
        ));
    }
    let magic = &bytes[..8];
    if magic != MAGIC {
        if magic[..7] == MAGIC[..7] {
            return Err(CheckpointError::Version(
                String::from_utf8_lossy(&magic[7..]).into_owned(),
            ));
        }
        return Err(CheckpointError::BadMagic);
    }
    let len_bytes: [u8; 8] = bytes
        .get(8..16)
        .ok_or_else(|| CheckpointError::Truncated("missing header length".into()))?
        .try_into()
        .expect("slice of 8");
    let header_len = u64::from_le_bytes(len_bytes);
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| {
            CheckpointError::Truncated(format!(
                "header of {header_len} bytes exceeds file of {} bytes",
                bytes.len()
            ))
        })?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version(header.format_version.to_string()));
    }

    // Skeleton with the shapes the config implies; its values are overwritten.
    let mut params = ModelParams::init_with_rng(
        &header.config,
        header.dims,
        header.categories.clone(),
        &mut Rng::new(0),
    )
    .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let expected: Vec<(String, (usize, usize))> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape()))
        .collect();
    if expected.len() != header.tensors.len() {
        return Err(CheckpointError::Manifest {
            expected: format!("{} tensors", expected.len()),
            found: format!("{} tensors", header.tensors.len()),
        });
    }
    for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name {
            return Err(CheckpointError::Manifest {
                expected: name.clone(),
                found: entry.name.clone(),
            });
        }
        if *shape != (entry.rows, entry.cols) {
            return Err(CheckpointError::Shape {
                name: name.clone(),
                expected: *shape,
                found: (entry.rows, entry.cols),
            });
        }
    }

    let mut cursor = header_end;
    for t in params.tensors_mut() {
        let n = t.len() * 8;
        let chunk = bytes.get(cursor..cursor + n).ok_or_else(|| {
            CheckpointError::Truncated(format!("tensor payload ends at byte {}", bytes.len()))
        })?;
        for (x, b) in t.data_mut().iter_mut().zip(chunk.chunks_exact(8)) {
            *x = f64::from_le_bytes(b.try_into().expect("chunk of 8"));
        }
        cursor += n;
    }
    if cursor != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - cursor));
    }

    let vocab = header
        .vocab
        .map(Vocabulary::from_tokens)
        .transpose()
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if let Some(v) = &vocab {
        if v.len() != header.dims.vocab_size {
            return Err(CheckpointError::Header(format!(
                "stored vocabulary has {} tokens but vocab_size is {}",
                v.len(),
                header.dims.vocab_size
            )));
        }
    }
    Ok(Checkpoint { params, vocab })
}

pub fn save_checkpoint(
    params: &ModelParams,
    vocab: Option<&Vocabulary>,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, to_bytes(params, vocab))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::randomize;

    fn model() -> ModelParams {
        let config = TrainConfig {
            d_model: 4,
            d_k: Some(3),
            d_ff: Some(5),
            layers: 2,
            ..Default::default()
        };
        let dims = ModelDims {
            vocab_size: 6,
            max_len: 4,
            num_classes: 2,
        };
        let mut p = ModelParams::init(&config, dims, vec!["x".into(), "y".into()]).unwrap();
        randomize(&mut p, &mut Rng::new(3));
        p
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(
            ["<pad>", "<unk>", "a", "b", "c", "d"]
                .map(String::from)
                .to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let p = model();
        let bytes = to_bytes(&p, Some(&vocab()));
        let ck = from_bytes(&bytes).unwrap();
        assert_eq!(ck.params, p);
        assert_eq!(ck.vocab, Some(vocab()));
        assert_eq!(to_bytes(&ck.params, ck.vocab.as_ref()), bytes);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = to_bytes(&model(), None);
        bytes[7] = b'2';
        assert!(matches!(
            from_bytes(&bytes),
            Err(CheckpointError::Version(_))
        ));
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn corrupted_header_byte_is_a_parse_error() {
        let mut bytes = to_bytes(&model(), None);
        bytes[16] = b'[';
        assert!(matches!(
            from_bytes(&bytes),
            Err(CheckpointError::Header(_))
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = to_bytes(&model(), None);
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated(_))
        ));
        assert!(matches!(
            from_bytes(&bytes[..12]),
            Err(CheckpointError::Truncated(_))
        ));
    }

    #[test]
    fn wrong_manifest_length_is_a_shape_error() {
        let bytes = to_bytes(&model(), None);
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[16..16 + header_len]).unwrap();
        let tampered = json.replacen(
            r#""name":"classifier.b_c","rows":1,"cols":2"#,
            r#""name":"classifier.b_c","rows":1,"cols":3"#,
            1,
        );
        assert_ne!(tampered, json);
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(tampered.len() as u64).to_le_bytes());
        out.extend_from_slice(tampered.as_bytes());
        out.extend_from_slice(&bytes[16 + header_len..]);
        assert!(matches!(
            from_bytes(&out),
            Err(CheckpointError::Shape { .. })
        ));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = to_bytes(&model(), None);
        bytes.push(0);
        assert!(matches!(
            from_bytes(&bytes),
            Err(CheckpointError::TrailingBytes(1))
        ));
    }
}
