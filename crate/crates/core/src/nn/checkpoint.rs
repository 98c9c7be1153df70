//! Binary checkpoint files.
//!
//! Byte layout (all integers little endian):
//!
//! | offset      | size    | content                                        |
//! |-------------|---------|------------------------------------------------|
//! | 0           | 4       | magic `NTRC`                                   |
//! | 4           | 4       | format version (`u32`)                         |
//! | 8           | 4       | header length `H` (`u32`)                      |
//! | 12          | H       | UTF-8 JSON header ([`CheckpointHeader`])       |
//! | 12 + H      | 8 · N   | `f64` arrays, concatenated in header order     |
//! | end − 4     | 4       | CRC-32 (IEEE) of every preceding byte          |

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NnError, ParamVector, Segment};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NTRC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    /// What produced the file, e.g. `"il"`, `"rl"` or `"init"`.
    pub kind: String,
    pub seed: u64,
    pub segments: Vec<Segment>,
    pub hyperparameters: serde_json::Value,
    /// Trainer progress needed to resume (iteration, schedules, optimizer t).
    pub state: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
}

/// Parameters plus any extra named arrays (optimizer moments).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub arrays: Vec<Vec<f64>>,
}

impl Checkpoint {
    /// Checkpoint holding `params` as the `params` array.
    pub fn new(kind: &str, seed: u64, params: &ParamVector, hyperparameters: serde_json::Value, state: serde_json::Value) -> Self {
        let header = CheckpointHeader {
            kind: kind.to_string(),
            seed,
            segments: params.segments().to_vec(),
            hyperparameters,
            state,
            arrays: vec![ArrayEntry { name: "params".into(), len: params.len() }],
        };
        Self { header, arrays: vec![params.as_slice().to_vec()] }
    }

    pub fn push_array(&mut self, name: &str, data: Vec<f64>) {
        self.header.arrays.push(ArrayEntry { name: name.to_string(), len: data.len() });
        self.arrays.push(data);
    }

    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.header.arrays.iter().position(|a| a.name == name).map(|k| self.arrays[k].as_slice())
    }

    pub fn params(&self) -> Result<ParamVector, NnError> {
        let data = self.array("params").ok_or_else(|| NnError::Checkpoint("missing params array".into()))?;
        ParamVector::from_parts(self.header.segments.clone(), data.to_vec())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let n: usize = self.arrays.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * n);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for a in &self.arrays {
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |m: &str| NnError::Checkpoint(m.to_string());
        if bytes.len() < 16 {
            return Err(bad("truncated file"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(bad("checksum mismatch"));
        }
        if body[..4] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(NnError::UnknownVersion(version));
        }
        let hlen = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
        let header_bytes = body.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(header_bytes).map_err(|e| NnError::Checkpoint(format!("header: {e}")))?;
        let mut rest = &body[12 + hlen..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in &header.arrays {
            let need = entry.len * 8;
            if rest.len() < need {
                return Err(bad("truncated array data"));
            }
            let (chunk, tail) = rest.split_at(need);
            arrays.push(chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { header, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| NnError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bytes = std::fs::read(path).map_err(|e| NnError::Io(e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}
