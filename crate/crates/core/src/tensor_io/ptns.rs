//! PTNS: the portable on-disk tensor format.
//!
//! Layout, with no padding anywhere:
//!
//! | offset      | size      | content                                   |
//! |-------------|-----------|-------------------------------------------|
//! | 0           | 4         | magic `PTNS`                              |
//! | 4           | 2         | format version, u16 LE (currently 1)      |
//! | 6           | 2         | header length `H`, u16 LE                 |
//! | 8           | H         | UTF-8 JSON header                         |
//! | 8 + H       | 4·rows·cols | f32 LE payload, row-major               |
//!
//! The JSON header carries `task_id`, `seed`, `step`, `rows` and `cols`.
//! Sentence-embedding vectors reuse the format as `1 × d` tensors whose
//! header additionally carries `"kind": "semb"` and `encoder_id`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PromptMatrix, SentenceEmbeddingVec, TensorIoError};

pub const MAGIC: &[u8; 4] = b"PTNS";
pub const VERSION: u16 = 1;

const PREAMBLE_LEN: usize = 8;

/// Decoding failures. Every variant carries the byte offset at which the
/// problem was detected.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PtnsError {
    #[error("bad magic {found:?} at byte 0, expected \"PTNS\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported format version {version} at byte 4")]
    VersionUnsupported { version: u16 },
    #[error("truncated at byte {offset}: needed {needed} more bytes, {available} available")]
    TruncatedPayload {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("malformed header at byte {offset}: {reason}")]
    HeaderMalformed { offset: usize, reason: String },
    #[error("{count} trailing bytes after payload at byte {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("non-finite entry {value} at byte {offset} (row {row}, col {col})")]
    NonFiniteEntry {
        offset: usize,
        row: usize,
        col: usize,
        value: f32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PtnsHeader {
    pub task_id: String,
    pub seed: u64,
    pub step: u64,
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_id: Option<String>,
}

/// A decoded but not yet domain-validated tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PtnsTensor {
    pub header: PtnsHeader,
    pub data: Vec<f32>,
}

fn need(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8], PtnsError> {
    let available = bytes.len().saturating_sub(offset);
    if available < len {
        return Err(PtnsError::TruncatedPayload {
            offset,
            needed: len,
            available,
        });
    }
    Ok(&bytes[offset..offset + len])
}

pub fn decode(bytes: &[u8]) -> Result<PtnsTensor, PtnsError> {
    let magic = need(bytes, 0, 4)?;
    if magic != MAGIC {
        return Err(PtnsError::BadMagic {
            found: magic.to_vec(),
        });
    }
    let version = u16::from_le_bytes(need(bytes, 4, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(PtnsError::VersionUnsupported { version });
    }
    let header_len = u16::from_le_bytes(need(bytes, 6, 2)?.try_into().unwrap()) as usize;
    let raw_header = need(bytes, PREAMBLE_LEN, header_len)?;
    let header_text =
        std::str::from_utf8(raw_header).map_err(|e| PtnsError::HeaderMalformed {
            offset: PREAMBLE_LEN + e.valid_up_to(),
            reason: "header is not valid UTF-8".into(),
        })?;
    let header: PtnsHeader =
        serde_json::from_str(header_text).map_err(|e| PtnsError::HeaderMalformed {
            offset: PREAMBLE_LEN,
            reason: e.to_string(),
        })?;
    if header.rows == 0 || header.cols == 0 {
        return Err(PtnsError::HeaderMalformed {
            offset: PREAMBLE_LEN,
            reason: format!("shape {}x{} has a zero dimension", header.rows, header.cols),
        });
    }

    let payload_offset = PREAMBLE_LEN + header_len;
    let payload_len = header
        .rows
        .checked_mul(header.cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| PtnsError::HeaderMalformed {
            offset: PREAMBLE_LEN,
            reason: format!("shape {}x{} overflows", header.rows, header.cols),
        })?;
    let payload = need(bytes, payload_offset, payload_len)?;
    let end = payload_offset + payload_len;
    if bytes.len() > end {
        return Err(PtnsError::TrailingBytes {
            offset: end,
            count: bytes.len() - end,
        });
    }

    let mut data = Vec::with_capacity(header.rows * header.cols);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let value = f32::from_le_bytes(chunk.try_into().unwrap());
        if !value.is_finite() {
            return Err(PtnsError::NonFiniteEntry {
                offset: payload_offset + 4 * i,
                row: i / header.cols,
                col: i % header.cols,
                value,
            });
        }
        data.push(value);
    }
    Ok(PtnsTensor { header, data })
}

pub fn encode(tensor: &PtnsTensor) -> Vec<u8> {
    let header = serde_json::to_vec(&tensor.header).expect("header serializes");
    let header_len = u16::try_from(header.len()).expect("PTNS header exceeds 65535 bytes");
    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + 4 * tensor.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_tensor(path: &Path) -> Result<PtnsTensor, TensorIoError> {
    let bytes = fs::read(path).map_err(|source| TensorIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes).map_err(|source| TensorIoError::Ptns {
        path: path.to_path_buf(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), TensorIoError> {
    fs::write(path, bytes).map_err(|source| TensorIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_f32(values: &[f64], task_id: &str) -> Result<Vec<f32>, TensorIoError> {
    values
        .iter()
        .map(|&v| {
            let narrowed = v as f32;
            if narrowed.is_finite() {
                Ok(narrowed)
            } else {
                Err(TensorIoError::InvariantViolation(format!(
                    "task {task_id}: value {v} does not fit in f32"
                )))
            }
        })
        .collect()
}

pub fn load_prompt_matrix(path: impl AsRef<Path>) -> Result<PromptMatrix, TensorIoError> {
    let path = path.as_ref();
    let tensor = read_tensor(path)?;
    let h = tensor.header;
    if h.rows != super::EXPECTED_PROMPT_TOKENS {
        log::warn!(
            "{}: task {} has {} prompt tokens (expected {})",
            path.display(),
            h.task_id,
            h.rows,
            super::EXPECTED_PROMPT_TOKENS
        );
    }
    let data = tensor.data.into_iter().map(f64::from).collect();
    PromptMatrix::new(h.task_id, h.seed, h.step, h.rows, h.cols, data)
}

pub fn save_prompt_matrix(m: &PromptMatrix, path: impl AsRef<Path>) -> Result<(), TensorIoError> {
    m.validate()?;
    let tensor = PtnsTensor {
        header: PtnsHeader {
            task_id: m.task_id().to_string(),
            seed: m.seed(),
            step: m.step(),
            rows: m.rows(),
            cols: m.cols(),
            kind: None,
            encoder_id: None,
        },
        data: to_f32(m.data(), m.task_id())?,
    };
    write_bytes(path.as_ref(), &encode(&tensor))
}

/// Loads a `1 × d` sentence-embedding tensor. When the header names an
/// encoder it must agree with `expected_encoder`.
pub fn load_sentence_embedding(
    path: impl AsRef<Path>,
    expected_encoder: &str,
) -> Result<SentenceEmbeddingVec, TensorIoError> {
    let path = path.as_ref();
    let tensor = read_tensor(path)?;
    let h = tensor.header;
    let bad = |reason: String| TensorIoError::InvariantViolation(format!("{}: {reason}", path.display()));
    if h.rows != 1 {
        return Err(bad(format!(
            "sentence embedding for {} must be 1 x d, found {} x {}",
            h.task_id, h.rows, h.cols
        )));
    }
    if let Some(kind) = &h.kind {
        if kind != "semb" {
            return Err(bad(format!("expected kind \"semb\", found {kind:?}")));
        }
    }
    if let Some(enc) = &h.encoder_id {
        if enc != expected_encoder {
            return Err(bad(format!(
                "encoder {enc:?} in header, manifest says {expected_encoder:?}"
            )));
        }
    }
    let data = tensor.data.into_iter().map(f64::from).collect();
    SentenceEmbeddingVec::new(h.task_id, expected_encoder.to_string(), data)
}

pub fn save_sentence_embedding(
    v: &SentenceEmbeddingVec,
    path: impl AsRef<Path>,
) -> Result<(), TensorIoError> {
    let tensor = PtnsTensor {
        header: PtnsHeader {
            task_id: v.task_id().to_string(),
            seed: 0,
            step: 0,
            rows: 1,
            cols: v.dim(),
            kind: Some("semb".into()),
            encoder_id: Some(v.encoder_id().to_string()),
        },
        data: to_f32(v.data(), v.task_id())?,
    };
    write_bytes(path.as_ref(), &encode(&tensor))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PtnsTensor {
        PtnsTensor {
            header: PtnsHeader {
                task_id: "cb".into(),
                seed: 42,
                step: 30000,
                rows: 2,
                cols: 3,
                kind: None,
                encoder_id: None,
            },
            data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        }
    }

    fn payload_offset(bytes: &[u8]) -> usize {
        8 + u16::from_le_bytes([bytes[6], bytes[7]]) as usize
    }

    #[test]
    fn roundtrip_bytes() {
        let t = sample();
        assert_eq!(decode(&encode(&t)).unwrap(), t);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[0..4], b"PTNS");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        let off = payload_offset(&bytes);
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..off]).unwrap();
        assert_eq!(header["task_id"], "cb");
        assert_eq!(header["rows"], 2);
        assert_eq!(bytes.len(), off + 6 * 4);
        assert_eq!(&bytes[off..off + 4], &1.0f32.to_le_bytes());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&sample());
        bytes[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bytes), Err(PtnsError::BadMagic { .. })));
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = encode(&sample());
        bytes[4..6].copy_from_slice(&2u16.to_le_bytes());
        assert_eq!(
            decode(&bytes),
            Err(PtnsError::VersionUnsupported { version: 2 })
        );
    }

    #[test]
    fn truncation_everywhere_is_an_error() {
        let bytes = encode(&sample());
        for cut in 0..bytes.len() {
            let err = decode(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, PtnsError::TruncatedPayload { .. } | PtnsError::HeaderMalformed { .. }),
                "cut at {cut}: {err:?}"
            );
        }
        let err = decode(&bytes[..bytes.len() - 1]).unwrap_err();
        assert_eq!(
            err,
            PtnsError::TruncatedPayload {
                offset: payload_offset(&bytes),
                needed: 24,
                available: 23
            }
        );
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&sample());
        let end = bytes.len();
        bytes.push(0);
        assert_eq!(
            decode(&bytes),
            Err(PtnsError::TrailingBytes { offset: end, count: 1 })
        );
    }

    #[test]
    fn non_finite_entry_names_offset() {
        let mut bytes = encode(&sample());
        let off = payload_offset(&bytes) + 4 * 4;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode(&bytes) {
            Err(PtnsError::NonFiniteEntry { offset, row, col, .. }) => {
                assert_eq!((offset, row, col), (off, 1, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_header_json() {
        let mut bytes = encode(&sample());
        bytes[8] = b'[';
        assert!(matches!(
            decode(&bytes),
            Err(PtnsError::HeaderMalformed { offset: 8, .. })
        ));
    }

    #[test]
    fn zero_dimension_header() {
        let mut t = sample();
        t.header.rows = 0;
        t.data.clear();
        assert!(matches!(
            decode(&encode(&t)),
            Err(PtnsError::HeaderMalformed { .. })
        ));
    }
}
