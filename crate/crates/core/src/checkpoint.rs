//! Binary tensor container used for checkpoints and embedding imports.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MTCH"            4 bytes
//! version           u32
//! manifest length   u64
//! manifest          UTF-8 JSON {"D", "N_c", "vocab_size", "max_len", "margin"}
//! per tensor:
//!   name length     u32
//!   name            UTF-8 bytes
//!   rank            u32
//!   dims            rank × u64
//!   data            row-major f32
//! ```
//!
//! Parameters live in memory as `f64` and are narrowed to `f32` on save.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Hyperparams, ModelParams};

pub const MAGIC: &[u8; 4] = b"MTCH";
pub const FORMAT_VERSION: u32 = 1;

pub const EMBEDDING: &str = "embedding";
pub const PROJ_WEIGHT: &str = "proj_weight";
pub const PROJ_BIAS: &str = "proj_bias";
pub const CONVERSION: &str = "conversion";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "N_c")]
    pub contexts: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub margin: f64,
}

impl Manifest {
    pub fn hyper(&self) -> Hyperparams {
        Hyperparams {
            dim: self.dim,
            contexts: self.contexts,
            max_len: self.max_len,
            margin: self.margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: Vec<f32>,
}

/// Manifest plus an ordered list of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub manifest: Manifest,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(
                "checkpoint",
                "offset 0",
                format!("bad magic {magic:?}, expected {MAGIC:?}"),
            ));
        }
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                "checkpoint",
                "offset 4",
                format!("unsupported format version {version}"),
            ));
        }
        let manifest_len = r.u64("manifest length")?;
        let manifest_at = r.pos;
        let manifest_bytes = r.take(to_usize(manifest_len, manifest_at)?, "manifest")?;
        let manifest: Manifest = serde_json::from_slice(manifest_bytes).map_err(|e| {
            Error::format("checkpoint manifest", format!("offset {manifest_at}"), e.to_string())
        })?;
        let mut tensors = Vec::new();
        while r.pos < bytes.len() {
            let at = r.pos;
            let name_len = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|e| Error::format("checkpoint", format!("offset {at}"), e.to_string()))?
                .to_string();
            let rank = r.u32("tensor rank")? as usize;
            let dims = (0..rank)
                .map(|_| r.u64("tensor dim"))
                .collect::<Result<Vec<_>>>()?;
            let count = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d)).ok_or_else(|| {
                Error::format("checkpoint", format!("offset {at}"), "tensor size overflows")
            })?;
            let byte_len = to_usize(count, at)?.checked_mul(4).ok_or_else(|| {
                Error::format("checkpoint", format!("offset {at}"), "tensor size overflows")
            })?;
            let data = r
                .take(byte_len, &name)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Tensor { name, dims, data });
        }
        Ok(Self { manifest, tensors })
    }
}

fn to_usize(v: u64, at: usize) -> Result<usize> {
    usize::try_from(v)
        .map_err(|_| Error::format("checkpoint", format!("offset {at}"), "length exceeds address space"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(
                "checkpoint",
                format!("offset {}", self.pos),
                format!("truncated while reading {what} ({n} bytes wanted, {} left)", self.bytes.len() - self.pos),
            )
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

fn tensor2(name: &str, a: &Array2<f64>) -> Tensor {
    Tensor {
        name: name.to_string(),
        dims: a.shape().iter().map(|&d| d as u64).collect(),
        data: a.iter().map(|&v| v as f32).collect(),
    }
}

impl From<&ModelParams> for Container {
    fn from(p: &ModelParams) -> Self {
        Container {
            manifest: Manifest {
                dim: p.hyper.dim,
                contexts: p.hyper.contexts,
                vocab_size: p.vocab_size(),
                max_len: p.hyper.max_len,
                margin: p.hyper.margin,
            },
            tensors: vec![
                tensor2(EMBEDDING, &p.embedding),
                tensor2(PROJ_WEIGHT, &p.proj_weight),
                Tensor {
                    name: PROJ_BIAS.to_string(),
                    dims: vec![p.proj_bias.len() as u64],
                    data: p.proj_bias.iter().map(|&v| v as f32).collect(),
                },
                tensor2(CONVERSION, &p.conversion),
            ],
        }
    }
}

fn expect_tensor<'a>(c: &'a Container, name: &str, dims: &[usize]) -> Result<&'a Tensor> {
    let t = c
        .tensor(name)
        .ok_or_else(|| Error::Integrity(format!("checkpoint has no tensor {name:?}")))?;
    let want: Vec<u64> = dims.iter().map(|&d| d as u64).collect();
    if t.dims != want {
        return Err(Error::Integrity(format!(
            "tensor {name:?} has dims {:?} but the manifest implies {want:?}",
            t.dims
        )));
    }
    Ok(t)
}

fn widen(t: &Tensor) -> Vec<f64> {
    t.data.iter().map(|&v| f64::from(v)).collect()
}

/// The embedding table of a container, validated against its manifest.
pub fn embedding_from(c: &Container) -> Result<Array2<f64>> {
    let m = &c.manifest;
    let t = expect_tensor(c, EMBEDDING, &[m.vocab_size, m.dim])?;
    Ok(Array2::from_shape_vec((m.vocab_size, m.dim), widen(t)).expect("dims checked"))
}

impl TryFrom<&Container> for ModelParams {
    type Error = Error;

    fn try_from(c: &Container) -> Result<Self> {
        let m = c.manifest;
        m.hyper()
            .validate()
            .map_err(|e| Error::Integrity(format!("manifest: {e}")))?;
        for t in &c.tensors {
            if ![EMBEDDING, PROJ_WEIGHT, PROJ_BIAS, CONVERSION].contains(&t.name.as_str()) {
                return Err(Error::Integrity(format!("unexpected tensor {:?}", t.name)));
            }
        }
        let (d, nc) = (m.dim, m.contexts);
        let embedding = embedding_from(c)?;
        let pw = expect_tensor(c, PROJ_WEIGHT, &[nc * d, d])?;
        let pb = expect_tensor(c, PROJ_BIAS, &[nc * d])?;
        let cv = expect_tensor(c, CONVERSION, &[d, d])?;
        let params = ModelParams {
            hyper: m.hyper(),
            embedding,
            proj_weight: Array2::from_shape_vec((nc * d, d), widen(pw)).expect("dims checked"),
            proj_bias: Array1::from_vec(widen(pb)),
            conversion: Array2::from_shape_vec((d, d), widen(cv)).expect("dims checked"),
        };
        params
            .validate()
            .map_err(|e| Error::Integrity(e.to_string()))?;
        Ok(params)
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &Container::from(params).to_bytes())
}

pub fn load_container(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Container::from_bytes(&bytes)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    ModelParams::try_from(&load_container(path)?)
}
