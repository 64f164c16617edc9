//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic, a little-endian `u32` version, a `u64` header
//! length, the JSON header, then every tensor as little-endian `f32` in the
//! order the header lists them.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PIGVAECK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize, Clone, Copy, PartialEq, Eq, Debug)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Param,
    Extra,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    kind: Kind,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    #[serde(default)]
    state: Option<serde_json::Value>,
    tensors: Vec<Entry>,
}

/// Parameters plus optional training state (free-form JSON and named tensors).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub state: Option<serde_json::Value>,
    pub extras: BTreeMap<String, Tensor<f32>>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(params: &ModelParams<T>) -> Self {
        Self { params: params.cast(), state: None, extras: BTreeMap::new() }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut entries = Vec::new();
        let mut blobs: Vec<&Tensor<f32>> = Vec::new();
        for (name, t) in self.params.iter() {
            entries.push(Entry { name: name.into(), shape: t.shape().to_vec(), kind: Kind::Param });
            blobs.push(t);
        }
        for (name, t) in &self.extras {
            entries.push(Entry { name: name.clone(), shape: t.shape().to_vec(), kind: Kind::Extra });
            blobs.push(t);
        }
        let header = Header { config: self.params.config().clone(), state: self.state.clone(), tensors: entries };
        let json = serde_json::to_vec(&header).map_err(|e| bad(path, format!("header: {e}")))?;
        let tmp = path.with_extension("tmp");
        let write = || -> std::io::Result<()> {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(CHECKPOINT_MAGIC)?;
            w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
            w.write_all(&(json.len() as u64).to_le_bytes())?;
            w.write_all(&json)?;
            for t in blobs {
                for v in t.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
            std::fs::rename(&tmp, path)
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut fixed = [0u8; 20];
        r.read_exact(&mut fixed).map_err(|_| bad(path, "truncated preamble".into()))?;
        if &fixed[..8] != CHECKPOINT_MAGIC {
            return Err(bad(path, "not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(fixed[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(path, format!("version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let len = u64::from_le_bytes(fixed[12..20].try_into().expect("8 bytes"));
        let len = usize::try_from(len).map_err(|_| bad(path, "header too large".into()))?;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|_| bad(path, "truncated header".into()))?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| bad(path, format!("header: {e}")))?;
        let mut params = BTreeMap::new();
        let mut extras = BTreeMap::new();
        for entry in header.tensors {
            let numel: usize = entry.shape.iter().product();
            let mut bytes = vec![0u8; numel * 4];
            r.read_exact(&mut bytes).map_err(|_| bad(path, format!("truncated tensor `{}`", entry.name)))?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let t = Tensor::new(&entry.shape, data)?;
            let target = if entry.kind == Kind::Param { &mut params } else { &mut extras };
            if target.insert(entry.name.clone(), t).is_some() {
                return Err(bad(path, format!("duplicate tensor `{}`", entry.name)));
            }
        }
        if r.read(&mut [0u8; 1]).map_err(|e| Error::io(path, e))? != 0 {
            return Err(bad(path, "trailing bytes".into()));
        }
        let params = ModelParams::from_tensors(&header.config, params).map_err(|e| bad(path, e.to_string()))?;
        Ok(Self { params, state: header.state, extras })
    }
}

fn bad(path: &Path, detail: String) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), detail }
}
