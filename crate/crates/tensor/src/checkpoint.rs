//! Self-describing parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "EGATCKPT"
//! version  u32
//! hdr_len  u64
//! header   hdr_len bytes of UTF-8 JSON: { metadata, entries: [{name, shape, precision}] }
//! payload  raw little-endian values of every entry, in header order
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::optim::ParamStore;
use crate::scalar::{Float, Precision};
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 8] = b"EGATCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryHeader {
    pub name: String,
    pub shape: Vec<usize>,
    pub precision: Precision,
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: serde_json::Value,
    entries: Vec<EntryHeader>,
}

/// A parameter set plus arbitrary JSON metadata (configs, vocabulary).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub metadata: serde_json::Value,
    pub entries: Vec<(EntryHeader, Vec<u8>)>,
}

fn corrupt(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_params<T: Float>(metadata: serde_json::Value, params: &ParamStore<T>) -> Self {
        let entries = params
            .iter()
            .map(|(name, t)| {
                let mut bytes = Vec::with_capacity(t.len() * T::PRECISION.byte_width());
                for &v in t.data() {
                    v.write_le(&mut bytes);
                }
                (
                    EntryHeader {
                        name: name.to_string(),
                        shape: t.shape().to_vec(),
                        precision: T::PRECISION,
                    },
                    bytes,
                )
            })
            .collect();
        Self {
            version: VERSION,
            metadata,
            entries,
        }
    }

    /// Decodes the entries into a store of precision `T`, converting if the
    /// stored precision differs.
    pub fn to_params<T: Float>(&self) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for (h, bytes) in &self.entries {
            let width = h.precision.byte_width();
            let values: Vec<T> = match h.precision {
                Precision::F32 => bytes
                    .chunks_exact(width)
                    .map(|c| T::of(f32::read_le(c) as f64))
                    .collect(),
                Precision::F64 => bytes
                    .chunks_exact(width)
                    .map(|c| T::of(f64::read_le(c)))
                    .collect(),
            };
            store.insert(h.name.clone(), Tensor::new(h.shape.clone(), values)?)?;
        }
        Ok(store)
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let header = Header {
            metadata: self.metadata.clone(),
            entries: self.entries.iter().map(|(h, _)| h.clone()).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
        out.write_all(MAGIC)?;
        out.write_all(&self.version.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for (_, bytes) in &self.entries {
            out.write_all(bytes)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        input.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| corrupt(e.to_string()))?;
        let mut entries = Vec::with_capacity(header.entries.len());
        for h in header.entries {
            let mut bytes = vec![0u8; numel(&h.shape) * h.precision.byte_width()];
            input.read_exact(&mut bytes)?;
            entries.push((h, bytes));
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(corrupt(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self {
            version,
            metadata: header.metadata,
            entries,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}
