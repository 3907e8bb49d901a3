//! The ADMD binary dataset format.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic        4 bytes  "ADMD"
//! version      u32      1
//! num_classes  u32
//! per class:   class_id u32, num_images u32
//!   per image: n u32, c u32, n·c f32 values, descriptor-major
//! ```
//!
//! Values are stored as `f32`; loading widens them to `f64`, so
//! save → load → save is byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use adm_core::{DescriptorSet, LabeledClass, LabeledDataset};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ADMD";
pub const VERSION: u32 = 1;

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

pub fn encode(dataset: &LabeledDataset) -> Result<Vec<u8>> {
    let values: usize = dataset
        .classes()
        .iter()
        .flat_map(|c| &c.images)
        .map(|d| 8 + 4 * d.as_slice().len())
        .sum();
    let mut out = Vec::with_capacity(12 + 8 * dataset.classes().len() + values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(dataset.classes().len(), "class count")?.to_le_bytes());
    for class in dataset.classes() {
        out.extend_from_slice(&class.id.to_le_bytes());
        out.extend_from_slice(&to_u32(class.images.len(), "image count")?.to_le_bytes());
        for img in &class.images {
            out.extend_from_slice(&to_u32(img.len(), "descriptor count")?.to_le_bytes());
            out.extend_from_slice(&to_u32(img.dim(), "descriptor dimension")?.to_le_bytes());
            for &v in img.as_slice() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!(
                "truncated at byte {} while reading {what}",
                self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let num_classes = r.u32("class count")? as usize;
    let mut dim: Option<usize> = None;
    let mut classes = Vec::with_capacity(num_classes.min(1 << 16));
    for _ in 0..num_classes {
        let id = r.u32("class id")?;
        let num_images = r.u32("image count")? as usize;
        let mut images = Vec::with_capacity(num_images.min(1 << 16));
        for _ in 0..num_images {
            let n = r.u32("descriptor count")? as usize;
            let c = r.u32("descriptor dimension")? as usize;
            match dim {
                None => dim = Some(c),
                Some(d) if d != c => {
                    return Err(Error::InconsistentDim {
                        expected: d,
                        actual: c,
                    })
                }
                _ => {}
            }
            let len = n
                .checked_mul(c)
                .and_then(|v| v.checked_mul(4))
                .ok_or_else(|| Error::Format("descriptor block size overflows".into()))?;
            let raw = r.take(len, "descriptor values")?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            images.push(DescriptorSet::new(n, c, data).map_err(|e| Error::Format(e.to_string()))?);
        }
        classes.push(LabeledClass { id, images });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last class",
            bytes.len() - r.pos
        )));
    }
    LabeledDataset::new(classes).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_dataset(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(dataset)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Optional human metadata stored next to a dataset as `<path>.meta.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    #[serde(default)]
    pub class_names: BTreeMap<u32, String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_meta(path: &Path, meta: &Meta) -> Result<()> {
    crate::io::write_json(&meta_path(path), meta)
}

/// `None` when the sidecar does not exist.
pub fn read_meta(path: &Path) -> Result<Option<Meta>> {
    let p = meta_path(path);
    if !p.exists() {
        return Ok(None);
    }
    crate::io::read_json(&p).map(Some)
}
