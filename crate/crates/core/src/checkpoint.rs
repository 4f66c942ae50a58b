//! Binary container for named float tensors plus a JSON manifest.
//!
//! Layout: `b"MSPE"`, format version (u32 LE), manifest length (u32 LE),
//! UTF-8 JSON manifest, then the payload of little-endian f32 blocks. Entry
//! offsets are relative to the start of the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MSPE";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub kind: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Resolved run configuration, stored verbatim.
    pub config: serde_json::Value,
    pub entries: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    kind: String,
    shape: [usize; 4],
    dtype: String,
    offset: usize,
    length: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: serde_json::Value,
    entries: Vec<ManifestEntry>,
}

impl Checkpoint {
    pub fn new(config: serde_json::Value) -> Self {
        Checkpoint {
            config,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, kind: impl Into<String>, tensor: Tensor) {
        self.entries.push(Entry {
            name: name.into(),
            kind: kind.into(),
            tensor,
        });
    }

    /// Add every parameter of `store` under `prefix`.
    pub fn push_params(&mut self, prefix: &str, store: &ParamStore) {
        for (k, t) in store.iter() {
            self.push(format!("{prefix}{k}"), "param", t.clone());
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        match self.entries.iter().find(|e| e.name == name) {
            Some(e) => Ok(&e.tensor),
            None => invalid(format!("checkpoint has no entry '{name}'")),
        }
    }

    /// Parameters stored under `prefix`, with the prefix removed.
    pub fn params(&self, prefix: &str) -> ParamStore {
        let mut store = ParamStore::new();
        for e in &self.entries {
            if e.kind == "param" {
                if let Some(k) = e.name.strip_prefix(prefix) {
                    store.insert(k, e.tensor.clone());
                }
            }
        }
        store
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let length = e.tensor.len() * 4;
            entries.push(ManifestEntry {
                name: e.name.clone(),
                kind: e.kind.clone(),
                shape: e.tensor.shape(),
                dtype: "f32le".into(),
                offset,
                length,
            });
            offset += length;
        }
        let manifest = serde_json::to_vec(&Manifest {
            config: self.config.clone(),
            entries,
        })?;
        let header_len = u32::try_from(manifest.len()).map_err(|_| Error::InvalidArgument("manifest too large".into()))?;
        let mut out = Vec::with_capacity(PREFIX + manifest.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&manifest);
        for e in &self.entries {
            for v in e.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX {
            return format_err(bytes.len(), format!("file is {} bytes, shorter than the {PREFIX}-byte prefix", bytes.len()));
        }
        if &bytes[..4] != MAGIC {
            return format_err(0, "missing MSPE magic");
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let payload_start = PREFIX + header_len;
        if payload_start > bytes.len() {
            return format_err(8, format!("manifest length {header_len} runs past the end of the file"));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[PREFIX..payload_start]).map_err(|e| Error::Format {
            offset: PREFIX,
            message: format!("manifest: {e}"),
        })?;
        let payload = &bytes[payload_start..];
        let mut spans: Vec<(usize, usize)> = Vec::new();
        let mut entries = Vec::with_capacity(manifest.entries.len());
        for m in manifest.entries {
            if m.dtype != "f32le" {
                return format_err(PREFIX, format!("entry '{}' has unsupported dtype {}", m.name, m.dtype));
            }
            let count: usize = m.shape.iter().product();
            let end = m.offset.checked_add(m.length);
            match end {
                Some(end) if m.length == count * 4 && end <= payload.len() => spans.push((m.offset, end)),
                _ => {
                    return format_err(
                        payload_start + m.offset,
                        format!(
                            "entry '{}' ({} bytes at {}) does not fit shape {:?} or the {}-byte payload",
                            m.name,
                            m.length,
                            m.offset,
                            m.shape,
                            payload.len()
                        ),
                    )
                }
            }
            let data = payload[m.offset..m.offset + m.length]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push(Entry {
                name: m.name,
                kind: m.kind,
                tensor: Tensor::new(m.shape, data)?,
            });
        }
        spans.sort_unstable();
        if let Some(w) = spans.windows(2).find(|w| w[1].0 < w[0].1) {
            return format_err(payload_start + w[1].0, "overlapping entries");
        }
        Ok(Checkpoint {
            config: manifest.config,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
