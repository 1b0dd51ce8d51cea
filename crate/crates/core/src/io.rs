//! Binary container files: a magic tag, a JSON manifest, then raw array
//! payloads.
//!
//! Layout on disk:
//!
//! ```text
//! bytes 0..8    magic (identifies the container kind)
//! bytes 8..16   manifest length, u64 little-endian
//! manifest      JSON: { "format_version", "meta", "arrays": [{name,dtype,shape}] }
//! payload       arrays in manifest order; f32 little-endian or raw u8
//! ```
//!
//! Round trips are bit-exact: floats are written with `to_le_bytes` and read
//! back with `from_le_bytes`, never re-parsed through text.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC_DATASET: &[u8; 8] = b"SCRLDS1\0";
pub const MAGIC_LABELS: &[u8; 8] = b"SCRLLB1\0";
pub const MAGIC_PARAMS: &[u8; 8] = b"SCRLPS1\0";
pub const MAGIC_CHECKPOINT: &[u8; 8] = b"SCRLCK1\0";

const FORMAT_VERSION: u32 = 1;

/// Payload of one named array.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "f32",
            ArrayData::U8(_) => "u8",
        }
    }

    fn byte_len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len() * 4,
            ArrayData::U8(v) => v.len(),
        }
    }
}

/// One named, shaped array inside a container.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn f32(name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> NamedArray {
        NamedArray {
            name: name.into(),
            shape: shape.to_vec(),
            data: ArrayData::F32(data),
        }
    }

    pub fn u8(name: impl Into<String>, shape: &[usize], data: Vec<u8>) -> NamedArray {
        NamedArray {
            name: name.into(),
            shape: shape.to_vec(),
            data: ArrayData::U8(data),
        }
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            ArrayData::F32(v) => Ok(v),
            _ => Err(Error::format(
                format!("array '{}'", self.name),
                "expected dtype f32",
            )),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            ArrayData::U8(v) => Ok(v),
            _ => Err(Error::format(
                format!("array '{}'", self.name),
                "expected dtype u8",
            )),
        }
    }
}

/// A manifest-plus-payload container.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    /// Free-form metadata block, owned by the caller.
    pub meta: Value,
    pub arrays: Vec<NamedArray>,
}

impl Container {
    pub fn new(meta: Value) -> Container {
        Container {
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, array: NamedArray) {
        self.arrays.push(array);
    }

    /// Look up an array by name.
    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::format(format!("array '{name}'"), "missing from container"))
    }

    /// Parse the metadata block into a typed struct.
    pub fn meta_as<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.meta.clone())
            .map_err(|e| Error::format("meta", e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    meta: Value,
    arrays: Vec<ManifestArray>,
}

#[derive(Serialize, Deserialize)]
struct ManifestArray {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

fn shape_len(shape: &[usize], name: &str) -> Result<usize> {
    let mut n: usize = 1;
    for &d in shape {
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::format(format!("array '{name}'"), "shape overflows usize"))?;
    }
    Ok(n)
}

/// Serialize a container to bytes.
pub fn to_bytes(magic: &[u8; 8], container: &Container) -> Result<Vec<u8>> {
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        meta: container.meta.clone(),
        arrays: container
            .arrays
            .iter()
            .map(|a| ManifestArray {
                name: a.name.clone(),
                dtype: a.data.dtype().to_string(),
                shape: a.shape.clone(),
            })
            .collect(),
    };
    for a in &container.arrays {
        let n = shape_len(&a.shape, &a.name)?;
        if n != a.data.len() {
            return Err(Error::format(
                format!("array '{}'", a.name),
                format!("shape {:?} implies {n} elements, payload has {}", a.shape, a.data.len()),
            ));
        }
    }
    let manifest_bytes =
        serde_json::to_vec(&manifest).map_err(|e| Error::format("manifest", e.to_string()))?;
    let payload_len: usize = container.arrays.iter().map(|a| a.data.byte_len()).sum();
    let mut out = Vec::with_capacity(16 + manifest_bytes.len() + payload_len);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    for a in &container.arrays {
        match &a.data {
            ArrayData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            ArrayData::U8(v) => out.extend_from_slice(v),
        }
    }
    Ok(out)
}

/// Parse a container from bytes, checking the magic tag and all lengths.
pub fn from_bytes(magic: &[u8; 8], bytes: &[u8]) -> Result<Container> {
    if bytes.len() < 16 {
        return Err(Error::format("header", "file shorter than fixed header"));
    }
    if &bytes[0..8] != magic {
        return Err(Error::format(
            "magic",
            format!("expected {:?}, found {:?}", magic, &bytes[0..8]),
        ));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let manifest_end = 16usize
        .checked_add(manifest_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format("manifest", "declared length exceeds file size"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..manifest_end])
        .map_err(|e| Error::format("manifest", e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(
            "format_version",
            format!("unsupported version {}", manifest.format_version),
        ));
    }
    let mut cursor = manifest_end;
    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    for m in &manifest.arrays {
        let n = shape_len(&m.shape, &m.name)?;
        let (data, nbytes) = match m.dtype.as_str() {
            "f32" => {
                let nbytes = n * 4;
                if cursor + nbytes > bytes.len() {
                    return Err(Error::format(
                        format!("array '{}'", m.name),
                        "payload truncated",
                    ));
                }
                let v = bytes[cursor..cursor + nbytes]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                (ArrayData::F32(v), nbytes)
            }
            "u8" => {
                if cursor + n > bytes.len() {
                    return Err(Error::format(
                        format!("array '{}'", m.name),
                        "payload truncated",
                    ));
                }
                (ArrayData::U8(bytes[cursor..cursor + n].to_vec()), n)
            }
            other => {
                return Err(Error::format(
                    format!("array '{}'", m.name),
                    format!("unknown dtype '{other}'"),
                ))
            }
        };
        arrays.push(NamedArray {
            name: m.name.clone(),
            shape: m.shape.clone(),
            data,
        });
        cursor += nbytes;
    }
    if cursor != bytes.len() {
        return Err(Error::format(
            "payload",
            format!("{} trailing bytes after last array", bytes.len() - cursor),
        ));
    }
    Ok(Container {
        meta: manifest.meta,
        arrays,
    })
}

/// Write a container to a file.
pub fn write_file(path: &Path, magic: &[u8; 8], container: &Container) -> Result<()> {
    let bytes = to_bytes(magic, container)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a container from a file.
pub fn read_file(path: &Path, magic: &[u8; 8]) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(magic, &bytes)
}
