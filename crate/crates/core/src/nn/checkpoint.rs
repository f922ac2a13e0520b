//! Binary model checkpoint: magic, format version, JSON header, raw parameters.
//!
//! Layout (all integers little-endian):
//! `b"SHKFUSE\0"` | `u32` version | `u64` header length | header JSON |
//! `u64` parameter count | parameters as `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::model::{ArchitectureSpec, FusionModel, Standardizers};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SHKFUSE\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    spec: ArchitectureSpec,
    standardizers: Standardizers,
    seed: u64,
    #[serde(default)]
    metadata: Value,
}

/// A model plus free-form metadata (feature pipeline, calibration, ...).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: FusionModel,
    pub metadata: Value,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode(model: &FusionModel, metadata: &Value) -> Result<Vec<u8>> {
    let header = Header {
        spec: model.spec().clone(),
        standardizers: model.standardizers.clone(),
        seed: model.seed,
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    let params = model.params();
    let mut out = Vec::with_capacity(28 + json.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("not a model checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let hlen = usize::try_from(r.u64()?).map_err(|_| bad("header too large"))?;
    let header: Header =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| bad(format!("header: {e}")))?;
    let n = usize::try_from(r.u64()?).map_err(|_| bad("parameter count too large"))?;
    let raw = r.take(n.checked_mul(8).ok_or_else(|| bad("parameter count too large"))?)?;
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let model = FusionModel::from_parts(header.spec, params, header.standardizers, header.seed)
        .map_err(|e| bad(e.to_string()))?;
    Ok(Checkpoint {
        model,
        metadata: header.metadata,
    })
}

/// Human-readable summary written next to the binary file.
pub fn summary(model: &FusionModel, metadata: &Value) -> Value {
    let spec = model.spec();
    serde_json::json!({
        "format_version": FORMAT_VERSION,
        "variant": spec.variant,
        "branch_in": spec.branch_in(),
        "trunk_in": spec.trunk_in(),
        "fusion_dim": spec.fusion_dim(),
        "out_dim": spec.out_dim,
        "n_params": model.n_params(),
        "seed": model.seed,
        "metadata": metadata,
    })
}

/// Sidecar path: `model.ckpt` -> `model.ckpt.json`.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub fn save(path: &Path, model: &FusionModel, metadata: &Value) -> Result<()> {
    std::fs::write(path, encode(model, metadata)?).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&summary(model, metadata))
        .map_err(|e| Error::json(&side, e))?;
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
