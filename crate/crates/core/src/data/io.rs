//! On-disk dataset layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/domain_<id>/{train,test}/samples.f32le   "TSDA1", u32 N, u32 C, u32 T, N*C*T f32
//! <dir>/domain_<id>/{train,test}/labels.i32le    u32 N, N i32
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Domain, Split, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 5] = b"TSDA1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub num_domains: usize,
    pub channels: usize,
    pub classes: usize,
    pub window_length: usize,
    pub domains: Vec<DomainEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainEntry {
    pub id: u32,
    pub train: SplitEntry,
    pub test: SplitEntry,
}

/// Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub samples: String,
    pub labels: String,
    pub count: usize,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().expect("4 bytes"))
}

fn mismatch(path: &Path, detail: String) -> Error {
    Error::ShapeMismatch {
        path: path.to_path_buf(),
        detail,
    }
}

fn read_samples(path: &Path, expect: [usize; 3]) -> Result<Tensor> {
    let b = read(path)?;
    if b.len() < MAGIC.len() + 12 || &b[..5] != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: "missing TSDA1 header".into(),
        });
    }
    let dims = [u32_at(&b, 5), u32_at(&b, 9), u32_at(&b, 13)].map(|d| d as usize);
    if dims != expect {
        return Err(mismatch(
            path,
            format!("header (N, C, T) = {dims:?}, manifest expects {expect:?}"),
        ));
    }
    let n: usize = dims.iter().product();
    let payload = &b[17..];
    if payload.len() != n * 4 {
        return Err(mismatch(
            path,
            format!("payload has {} bytes, expected {}", payload.len(), n * 4),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::new(dims.to_vec(), data)
}

fn read_labels(path: &Path, expect: usize, classes: usize) -> Result<Vec<usize>> {
    let b = read(path)?;
    if b.len() < 4 {
        return Err(mismatch(path, "truncated label header".into()));
    }
    let n = u32_at(&b, 0) as usize;
    if n != expect || b.len() != 4 + 4 * n {
        return Err(mismatch(
            path,
            format!("{n} labels / {} bytes, manifest expects {expect}", b.len()),
        ));
    }
    b[4..]
        .chunks_exact(4)
        .map(|c| {
            let y = i32::from_le_bytes(c.try_into().expect("4 bytes"));
            if y < 0 || y as usize >= classes {
                Err(Error::UnknownClass {
                    path: path.to_path_buf(),
                    label: y as i64,
                    num_classes: classes,
                })
            } else {
                Ok(y as usize)
            }
        })
        .collect()
}

/// Parses the manifest alone.
pub fn read_manifest(manifest_path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(manifest_path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: manifest_path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Loads every domain listed in the manifest at `manifest_path`.
pub fn load_dataset(manifest_path: &Path) -> Result<BTreeMap<u32, Domain>> {
    let m = read_manifest(manifest_path)?;
    if m.domains.len() != m.num_domains {
        return Err(mismatch(
            manifest_path,
            format!(
                "num_domains = {} but {} listed",
                m.num_domains,
                m.domains.len()
            ),
        ));
    }
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = BTreeMap::new();
    for d in &m.domains {
        let load = |e: &SplitEntry, split: Split| -> Result<TimeSeriesDataset> {
            let samples = read_samples(
                &root.join(&e.samples),
                [e.count, m.channels, m.window_length],
            )?;
            let labels = read_labels(&root.join(&e.labels), e.count, m.classes)?;
            TimeSeriesDataset::new(
                format!("{}/{}", m.name, d.id),
                samples,
                labels,
                m.classes,
                split,
            )
        };
        let dom = Domain {
            train: load(&d.train, Split::Train)?,
            test: load(&d.test, Split::Test)?,
        };
        out.insert(d.id, dom);
    }
    Ok(out)
}

fn write_split(dir: &Path, rel: &str, ds: &TimeSeriesDataset) -> Result<SplitEntry> {
    let full = dir.join(rel);
    fs::create_dir_all(&full)?;
    let s = ds.samples();
    let mut b = Vec::with_capacity(17 + 4 * s.len());
    b.extend_from_slice(MAGIC);
    for d in s.shape() {
        b.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in s.data() {
        b.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(full.join("samples.f32le"), b)?;
    let mut l = Vec::with_capacity(4 + 4 * ds.len());
    l.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    for &y in ds.labels() {
        l.extend_from_slice(&(y as i32).to_le_bytes());
    }
    fs::write(full.join("labels.i32le"), l)?;
    Ok(SplitEntry {
        samples: format!("{rel}/samples.f32le"),
        labels: format!("{rel}/labels.i32le"),
        count: ds.len(),
    })
}

/// Writes `domains` under `dir` and returns the manifest written to
/// `dir/manifest.json`. Samples are stored as `f32`.
pub fn save_dataset(
    dir: &Path,
    name: &str,
    domains: &BTreeMap<u32, Domain>,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let first = domains.values().next();
    let mut entries = Vec::new();
    for (id, d) in domains {
        entries.push(DomainEntry {
            id: *id,
            train: write_split(dir, &format!("domain_{id}/train"), &d.train)?,
            test: write_split(dir, &format!("domain_{id}/test"), &d.test)?,
        });
    }
    let m = DatasetManifest {
        name: name.to_string(),
        num_domains: entries.len(),
        channels: first.map_or(0, |d| d.channels()),
        classes: first.map_or(0, |d| d.num_classes()),
        window_length: first.map_or(0, |d| d.train.length()),
        domains: entries,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(m)
}

/// Path of the manifest inside a dataset directory.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}
