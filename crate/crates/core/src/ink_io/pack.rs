//! Packed dataset file: every expression's ink and label graph in one file,
//! so training never touches XML.
//!
//! Layout: the magic line, a little-endian `u64` index length, the JSON
//! index, then the JSON records back to back. Index offsets are relative to
//! the first record.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::InkExpression;
use crate::error::{Error, Result};
use crate::label_graph::LabelGraph;

pub const PACK_MAGIC: &[u8] = b"EGATPACK 1\n";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackEntry {
    pub id: String,
    pub offset: u64,
    pub len: u64,
}

#[derive(Serialize, Deserialize)]
struct Record {
    ink: InkExpression,
    gold: LabelGraph,
}

/// Writes `items` in order. Ids must be unique.
pub fn write_pack(items: &[(InkExpression, LabelGraph)], mut out: impl Write) -> Result<()> {
    let mut body = Vec::new();
    let mut index = Vec::with_capacity(items.len());
    let mut seen = std::collections::HashSet::new();
    for (ink, gold) in items {
        if !seen.insert(ink.id.as_str()) {
            return Err(Error::Data(format!("duplicate expression id '{}'", ink.id)));
        }
        if gold.len() != ink.len() {
            return Err(Error::Data(format!(
                "{}: {} strokes but {} labeled",
                ink.id,
                ink.len(),
                gold.len()
            )));
        }
        let start = body.len() as u64;
        serde_json::to_writer(&mut body, &Record { ink: ink.clone(), gold: gold.clone() })?;
        index.push(PackEntry { id: ink.id.clone(), offset: start, len: body.len() as u64 - start });
    }
    let header = serde_json::to_vec(&index)?;
    out.write_all(PACK_MAGIC)?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(&body)?;
    Ok(())
}

/// A loaded pack with random access by position.
#[derive(Clone, Debug)]
pub struct Pack {
    pub index: Vec<PackEntry>,
    body: Vec<u8>,
}

impl Pack {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Data(format!("pack: {msg}"));
        let rest = bytes.strip_prefix(PACK_MAGIC).ok_or_else(|| bad("bad magic"))?;
        if rest.len() < 8 {
            return Err(bad("truncated header"));
        }
        let hlen = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
        let rest = &rest[8..];
        if rest.len() < hlen {
            return Err(bad("truncated index"));
        }
        let index: Vec<PackEntry> = serde_json::from_slice(&rest[..hlen])?;
        let body = rest[hlen..].to_vec();
        for e in &index {
            if e.offset.checked_add(e.len).is_none_or(|end| end > body.len() as u64) {
                return Err(bad(&format!("record '{}' runs past the end", e.id)));
            }
        }
        Ok(Self { index, body })
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, k: usize) -> Result<(InkExpression, LabelGraph)> {
        let e = &self.index[k];
        let raw = &self.body[e.offset as usize..(e.offset + e.len) as usize];
        let r: Record = serde_json::from_slice(raw)?;
        if r.ink.id != e.id {
            return Err(Error::Data(format!("pack: index says '{}', record says '{}'", e.id, r.ink.id)));
        }
        Ok((r.ink, r.gold))
    }

    pub fn records(&self) -> Result<Vec<(InkExpression, LabelGraph)>> {
        (0..self.len()).map(|k| self.get(k)).collect()
    }
}
