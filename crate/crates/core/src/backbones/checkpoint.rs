//! Checkpoint container:
//!
//! ```text
//! "TSDACKPT" | u32 version | u64 header length | JSON header | tensor payload
//! ```
//!
//! The header carries the backbone spec, free-form metadata and a tensor
//! index (group, name, shape, dtype, byte offset into the payload). Tensors
//! are written as `f64le`; `f32le` blobs are accepted on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackboneSpec, Network};
use crate::error::{Error, Result};
use crate::nn::TensorStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"TSDACKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: BackboneSpec,
    pub metadata: serde_json::Value,
    /// Named tensor groups, e.g. `extractor`, `buffers`, `head`.
    pub groups: Vec<(String, TensorStore)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: BackboneSpec,
    metadata: serde_json::Value,
    groups: Vec<String>,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    group: String,
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
}

impl Checkpoint {
    pub fn from_network(net: &Network, metadata: serde_json::Value) -> Self {
        Self {
            spec: net.spec().clone(),
            metadata,
            groups: vec![
                ("extractor".into(), net.extractor.params.clone()),
                ("buffers".into(), net.extractor.buffers.clone()),
                ("head".into(), net.head.params.clone()),
            ],
        }
    }

    pub fn group(&self, name: &str) -> Option<&TensorStore> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    /// Rebuilds the network described by the spec and overwrites every
    /// tensor with the stored values.
    pub fn to_network(&self) -> Result<Network> {
        let mut net = Network::build(&self.spec, 0)?;
        for (group, dst) in [
            ("extractor", &mut net.extractor.params),
            ("buffers", &mut net.extractor.buffers),
            ("head", &mut net.head.params),
        ] {
            let src = self
                .group(group)
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks group {group}")))?;
            if src.names() != dst.names() {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint group {group} does not match the spec's layout"
                )));
            }
            for (i, t) in src.tensors().iter().enumerate() {
                let slot = crate::nn::Slot(i);
                if dst.get(slot).shape() != t.shape() {
                    return Err(Error::InvalidArgument(format!(
                        "checkpoint tensor {} has shape {:?}",
                        src.names()[i],
                        t.shape()
                    )));
                }
                *dst.get_mut(slot) = t.clone();
            }
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        for (group, store) in &self.groups {
            for (name, t) in store.iter() {
                tensors.push(Entry {
                    group: group.clone(),
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    dtype: "f64le".into(),
                    offset: payload.len(),
                });
                for v in t.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let header = serde_json::to_vec(&Header {
            spec: self.spec.clone(),
            metadata: self.metadata.clone(),
            groups: self.groups.iter().map(|(g, _)| g.clone()).collect(),
            tensors,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |detail: &str| Error::Format {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
        let payload = &bytes[header_end..];
        let mut groups: Vec<(String, TensorStore)> = header
            .groups
            .into_iter()
            .map(|g| (g, TensorStore::new()))
            .collect();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let width = match e.dtype.as_str() {
                "f64le" => 8,
                "f32le" => 4,
                other => return Err(bad(&format!("unknown dtype {other}"))),
            };
            let raw = payload
                .get(e.offset..e.offset + n * width)
                .ok_or_else(|| bad(&format!("tensor {} out of bounds", e.name)))?;
            let data: Vec<f64> = if width == 8 {
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect()
            } else {
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect()
            };
            let t = Tensor::new(e.shape, data)?;
            let (_, store) = groups
                .iter_mut()
                .find(|(g, _)| *g == e.group)
                .ok_or_else(|| bad(&format!("tensor {} in undeclared group", e.name)))?;
            store.push(e.name, t);
        }
        Ok(Self {
            spec: header.spec,
            metadata: header.metadata,
            groups,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    Checkpoint::from_bytes(&bytes, path)
}
