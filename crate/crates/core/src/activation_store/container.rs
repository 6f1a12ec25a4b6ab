//! The `.actv` container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes            | content                                              |
//! |------------------|------------------------------------------------------|
//! | 0..4             | magic `ACTV`                                         |
//! | 4..8             | u32 version (= 1)                                    |
//! | 8..16            | u64 header length `H`                                |
//! | 16..16+H         | UTF-8 JSON header                                    |
//! | 16+H..           | `record_count * layer_count` blocks of `hidden_dim` |
//! |                  | binary32 values, record-major then layer-major       |
//!
//! The header carries `positive_class` so readers know that logits point
//! toward female / white / rich.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActivationDataset, ActivationRecord, AttributeLabel, CueKind};
use crate::error::{domain, FormatError, Result};
use crate::util::atomic_write;

pub const ACTV_MAGIC: &[u8; 4] = b"ACTV";
pub const ACTV_VERSION: u32 = 1;
const PREAMBLE: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PositiveClass {
    gender: String,
    race: String,
    class: String,
}

impl PositiveClass {
    fn convention() -> Self {
        Self { gender: "female".into(), race: "white".into(), class: "rich".into() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordMeta {
    prompt_id: String,
    turn_index: u32,
    language_code: String,
    cue_kind: CueKind,
    item_id: Option<String>,
    labels: AttributeLabel,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model_id: String,
    layer_count: usize,
    hidden_dim: usize,
    normalized: bool,
    record_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    positive_class: Option<PositiveClass>,
    records: Vec<RecordMeta>,
}

/// Serializes a dataset into container bytes.
pub fn encode(ds: &ActivationDataset) -> Result<Vec<u8>> {
    for r in &ds.records {
        if r.vectors.len() != ds.layer_count || r.vectors.iter().any(|v| v.len() != ds.hidden_dim)
        {
            return Err(domain(format!(
                "record {} does not match the dataset shape ({} layers x {})",
                r.prompt_id, ds.layer_count, ds.hidden_dim
            )));
        }
    }
    let header = Header {
        model_id: ds.model_id.clone(),
        layer_count: ds.layer_count,
        hidden_dim: ds.hidden_dim,
        normalized: ds.normalized,
        record_count: ds.records.len(),
        provenance: ds.provenance.clone(),
        positive_class: Some(PositiveClass::convention()),
        records: ds
            .records
            .iter()
            .map(|r| RecordMeta {
                prompt_id: r.prompt_id.clone(),
                turn_index: r.turn_index,
                language_code: r.language_code.clone(),
                cue_kind: r.cue_kind,
                item_id: r.item_id.clone(),
                labels: r.labels,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload = ds.records.len() * ds.layer_count * ds.hidden_dim * 4;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload);
    out.extend_from_slice(ACTV_MAGIC);
    out.extend_from_slice(&ACTV_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for r in &ds.records {
        for v in &r.vectors {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn take(bytes: &[u8], offset: usize, len: usize) -> std::result::Result<&[u8], FormatError> {
    let available = bytes.len().saturating_sub(offset);
    if available < len {
        return Err(FormatError::Truncated {
            offset: offset as u64,
            needed: len as u64,
            available: available as u64,
        });
    }
    Ok(&bytes[offset..offset + len])
}

/// Parses container bytes. Nothing is returned unless the whole file is
/// consistent.
pub fn decode(bytes: &[u8]) -> std::result::Result<ActivationDataset, FormatError> {
    if bytes.len() < 4 || &bytes[..4] != ACTV_MAGIC {
        return Err(FormatError::BadMagic { offset: 0 });
    }
    let version = u32::from_le_bytes(take(bytes, 4, 4)?.try_into().unwrap());
    if version != ACTV_VERSION {
        return Err(FormatError::VersionMismatch { offset: 4, found: version, expected: ACTV_VERSION });
    }
    let header_len = u64::from_le_bytes(take(bytes, 8, 8)?.try_into().unwrap());
    let header_len = usize::try_from(header_len).map_err(|_| FormatError::Header {
        offset: 8,
        message: format!("header length {header_len} does not fit in memory"),
    })?;
    let header_bytes = take(bytes, PREAMBLE, header_len)?;
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| FormatError::Header {
        offset: PREAMBLE as u64,
        message: e.to_string(),
    })?;
    if let Some(pc) = &header.positive_class {
        if *pc != PositiveClass::convention() {
            return Err(FormatError::Header {
                offset: PREAMBLE as u64,
                message: format!("unsupported positive_class convention {pc:?}"),
            });
        }
    }
    if header.layer_count == 0 || header.hidden_dim == 0 {
        return Err(FormatError::DimensionMismatch {
            offset: PREAMBLE as u64,
            message: format!(
                "layer_count {} and hidden_dim {} must both be positive",
                header.layer_count, header.hidden_dim
            ),
        });
    }
    if header.record_count != header.records.len() {
        return Err(FormatError::DimensionMismatch {
            offset: PREAMBLE as u64,
            message: format!(
                "record_count is {} but {} record entries are listed",
                header.record_count,
                header.records.len()
            ),
        });
    }
    let payload_start = PREAMBLE + header_len;
    let block = header.hidden_dim.checked_mul(4);
    let expected = block
        .and_then(|b| b.checked_mul(header.layer_count))
        .and_then(|b| b.checked_mul(header.record_count));
    let (block, expected) = match (block, expected) {
        (Some(b), Some(e)) => (b, e),
        _ => {
            return Err(FormatError::DimensionMismatch {
                offset: PREAMBLE as u64,
                message: "declared tensor payload size overflows".into(),
            })
        }
    };
    let available = bytes.len() - payload_start;
    if available < expected {
        let whole = available / block;
        return Err(FormatError::Truncated {
            offset: (payload_start + whole * block) as u64,
            needed: block as u64,
            available: (available % block) as u64,
        });
    }
    if available > expected {
        return Err(FormatError::DimensionMismatch {
            offset: (payload_start + expected) as u64,
            message: format!("{} trailing bytes after the declared blocks", available - expected),
        });
    }

    let mut cursor = payload_start;
    let mut records = Vec::with_capacity(header.record_count);
    for meta in header.records {
        let mut vectors = Vec::with_capacity(header.layer_count);
        for _ in 0..header.layer_count {
            let v: Vec<f32> = bytes[cursor..cursor + block]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cursor += block;
            vectors.push(v);
        }
        records.push(ActivationRecord {
            prompt_id: meta.prompt_id,
            turn_index: meta.turn_index,
            language_code: meta.language_code,
            cue_kind: meta.cue_kind,
            item_id: meta.item_id,
            labels: meta.labels,
            vectors,
        });
    }
    Ok(ActivationDataset {
        model_id: header.model_id,
        layer_count: header.layer_count,
        hidden_dim: header.hidden_dim,
        normalized: header.normalized,
        provenance: header.provenance,
        records,
    })
}

/// Writes the dataset through a temp file renamed into place.
pub fn write_dataset(ds: &ActivationDataset, path: &Path) -> Result<()> {
    let bytes = encode(ds)?;
    atomic_write(path, &bytes)
}

pub fn read_dataset(path: &Path) -> Result<ActivationDataset> {
    let bytes = fs::read(path)?;
    Ok(decode(&bytes)?)
}
