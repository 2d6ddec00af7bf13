//! Directory archives of named float tensors: a text manifest plus one
//! little-endian blob. Checkpoints and embedding galleries use this format.
//!
//! ```text
//! tcgl-archive v1 checkpoint
//! blob 1234 9a0b1c2d
//! meta epoch 12
//! tensor encoder.snippet.weight f64 32x32 0 8192 1f2e3d4c
//! ```
//!
//! Tensor byte ranges are contiguous and in manifest order. Scalars use `-`
//! as their shape.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const BLOB_FILE: &str = "data.bin";
const MAGIC: &str = "tcgl-archive";
const VERSION: &str = "v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub dtype: Dtype,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<StoredTensor>,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::format("archive", reason)
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c.is_control())
}

impl Archive {
    pub fn new(kind: &str) -> Self {
        Archive {
            kind: kind.to_string(),
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn push_tensor(&mut self, name: &str, dtype: Dtype, tensor: Tensor) {
        self.tensors.push(StoredTensor {
            name: name.to_string(),
            dtype,
            tensor,
        });
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| bad(format!("missing meta entry `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.meta(key)?;
        v.parse()
            .map_err(|_| bad(format!("meta entry `{key}` has invalid value `{v}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<&StoredTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| bad(format!("missing tensor `{name}`")))
    }

    /// Manifest text and blob bytes.
    pub fn encode(&self) -> Result<(String, Vec<u8>)> {
        if !is_token(&self.kind) {
            return Err(Error::invalid(format!("invalid archive kind `{}`", self.kind)));
        }
        let mut blob = Vec::new();
        let mut lines = String::new();
        for (k, v) in &self.meta {
            if !is_token(k) || v.contains(['\n', '\r']) {
                return Err(Error::invalid(format!("invalid meta entry `{k}`")));
            }
            let _ = writeln!(lines, "meta {k} {v}");
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.tensors {
            if !is_token(&t.name) || !seen.insert(t.name.as_str()) {
                return Err(Error::invalid(format!("invalid or duplicate tensor name `{}`", t.name)));
            }
            let offset = blob.len();
            for &v in t.tensor.data() {
                match t.dtype {
                    Dtype::F32 => blob.extend_from_slice(&(v as f32).to_le_bytes()),
                    Dtype::F64 => blob.extend_from_slice(&v.to_le_bytes()),
                }
            }
            let bytes = &blob[offset..];
            let shape = if t.tensor.shape().is_empty() {
                "-".to_string()
            } else {
                t.tensor
                    .shape()
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join("x")
            };
            let _ = writeln!(
                lines,
                "tensor {} {} {shape} {offset} {} {:08x}",
                t.name,
                t.dtype.name(),
                bytes.len(),
                crc32fast::hash(bytes)
            );
        }
        let manifest = format!(
            "{MAGIC} {VERSION} {}\nblob {} {:08x}\n{lines}",
            self.kind,
            blob.len(),
            crc32fast::hash(&blob)
        );
        Ok((manifest, blob))
    }

    pub fn decode(manifest: &str, blob: &[u8]) -> Result<Self> {
        let mut lines = manifest.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("empty manifest"))?
            .split(' ')
            .collect();
        if header.len() != 3 || header[0] != MAGIC {
            return Err(bad("not a tcgl archive manifest"));
        }
        if header[1] != VERSION {
            return Err(bad(format!(
                "unsupported version `{}` (expected {VERSION})",
                header[1]
            )));
        }
        if !is_token(header[2]) {
            return Err(bad("invalid archive kind"));
        }
        let blob_line: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("missing blob line"))?
            .split(' ')
            .collect();
        if blob_line.len() != 3 || blob_line[0] != "blob" {
            return Err(bad("malformed blob line"));
        }
        let blob_len: usize = blob_line[1].parse().map_err(|_| bad("malformed blob length"))?;
        if blob.len() != blob_len {
            return Err(bad(format!(
                "blob holds {} bytes but the manifest declares {blob_len} (truncated?)",
                blob.len()
            )));
        }
        let blob_crc = u32::from_str_radix(blob_line[2], 16).map_err(|_| bad("malformed blob checksum"))?;
        if crc32fast::hash(blob) != blob_crc {
            return Err(bad("blob checksum mismatch"));
        }

        let mut archive = Archive::new(header[2]);
        let mut cursor = 0usize;
        for (no, line) in lines.enumerate() {
            let no = no + 3;
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                if !is_token(k) {
                    return Err(bad(format!("line {no}: invalid meta key")));
                }
                archive.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let t = decode_tensor_line(rest, blob, cursor)
                    .map_err(|e| bad(format!("line {no}: {e}")))?;
                if archive.tensors.iter().any(|x| x.name == t.name) {
                    return Err(bad(format!("line {no}: duplicate tensor `{}`", t.name)));
                }
                cursor += t.tensor.len() * t.dtype.width();
                archive.tensors.push(t);
            } else if !line.is_empty() {
                return Err(bad(format!("line {no}: unrecognised entry")));
            }
        }
        if cursor != blob.len() {
            return Err(bad(format!("{} trailing blob bytes", blob.len() - cursor)));
        }
        Ok(archive)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let (manifest, blob) = self.encode()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let blob_path = dir.join(BLOB_FILE);
        fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
        // The manifest goes last so a torn write never looks complete.
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, manifest).map_err(|e| Error::io(&tmp, e))?;
        let path = dir.join(MANIFEST_FILE);
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let manifest = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let bpath = dir.join(BLOB_FILE);
        let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        Archive::decode(&manifest, &blob)
    }
}

fn decode_tensor_line(rest: &str, blob: &[u8], cursor: usize) -> std::result::Result<StoredTensor, String> {
    let f: Vec<&str> = rest.split(' ').collect();
    if f.len() != 6 {
        return Err("expected `tensor name dtype shape offset bytes crc`".into());
    }
    if !is_token(f[0]) {
        return Err("invalid tensor name".into());
    }
    let dtype = match f[1] {
        "f32" => Dtype::F32,
        "f64" => Dtype::F64,
        other => return Err(format!("unknown dtype `{other}`")),
    };
    let shape: Vec<usize> = if f[2] == "-" {
        Vec::new()
    } else {
        f[2].split('x')
            .map(|d| d.parse::<usize>().map_err(|_| format!("bad shape `{}`", f[2])))
            .collect::<std::result::Result<_, _>>()?
    };
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or("shape overflows")?;
    let offset: usize = f[3].parse().map_err(|_| "bad offset")?;
    let nbytes: usize = f[4].parse().map_err(|_| "bad byte count")?;
    let crc = u32::from_str_radix(f[5], 16).map_err(|_| "bad checksum")?;
    if offset != cursor {
        return Err(format!("offset {offset} does not follow the previous tensor at {cursor}"));
    }
    if count.checked_mul(dtype.width()) != Some(nbytes) {
        return Err(format!("{nbytes} bytes do not match shape {shape:?}"));
    }
    let end = offset.checked_add(nbytes).ok_or("byte range overflows")?;
    let bytes = blob.get(offset..end).ok_or("byte range outside the blob")?;
    if crc32fast::hash(bytes) != crc {
        return Err(format!("checksum mismatch for `{}`", f[0]));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let tensor = Tensor::new(shape, data).map_err(|e| e.to_string())?;
    Ok(StoredTensor {
        name: f[0].to_string(),
        dtype,
        tensor,
    })
}
