//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"SPADECKP"  u32 version  u64 header_len  header JSON (config + variant)
//! u64 param_count
//! per param: u64 name_len  name  u64 ndim  u64 dims[ndim]  f64 values[numel]
//! ```

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Param, SpadeModel, VariantFlag};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SPADECKP";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    variant: VariantFlag,
    config: ModelConfig,
}

pub fn to_bytes(model: &SpadeModel) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        variant: model.variant(),
        config: model.config().clone(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&(p.name.len() as u64).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u64).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.take(8)?.read_exact(&mut b).expect("eight bytes");
        Ok(u64::from_le_bytes(b))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.bytes.len().max(64))
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {v}")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<SpadeModel> {
    let mut r = Reader { bytes };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let mut vb = [0u8; 4];
    vb.copy_from_slice(r.take(4)?);
    let version = u32::from_le_bytes(vb);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let header_len = r.len()?;
    let header: Header =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let count = r.len()?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.len()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = r.len()?;
        let dims = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let raw = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("overflow".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        let value = Tensor::new(dims, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        params.push(Param { name, value });
    }
    if !r.bytes.is_empty() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    SpadeModel::from_parts(header.config, header.variant, params)
}

pub fn save(model: &SpadeModel, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load(path: &Path) -> Result<SpadeModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and checks that its architecture matches `expected`.
pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<SpadeModel> {
    let model = load(path)?;
    let reference = SpadeModel::new(expected.clone(), model.variant(), 0)?;
    for (want, got) in reference.params().iter().zip(model.params()) {
        if want.name != got.name || want.value.shape() != got.value.shape() {
            return Err(Error::Checkpoint(format!(
                "checkpoint parameter `{}` {:?} does not match configured `{}` {:?}",
                got.name,
                got.value.shape(),
                want.name,
                want.value.shape()
            )));
        }
    }
    if reference.params().len() != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameter tensors, config expects {}",
            model.params().len(),
            reference.params().len()
        )));
    }
    Ok(model)
}

/// SHA-256 over parameter names, shapes and values, as lowercase hex.
pub fn checksum(model: &SpadeModel) -> String {
    let mut h = Sha256::new();
    for p in model.params() {
        h.update(p.name.as_bytes());
        for &d in p.value.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
