//! Named-array parameter snapshots.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "FPARAMS1"
//! family  u8       0 linear, 1 dnn, 2 lstm, 3 transformer
//! count   u32      number of tensors
//! repeated count times:
//!   name_len u32, name (UTF-8)
//!   ndim u32, dims u64 × ndim
//!   payload f64 × product(dims)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Family, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{NamedTensor, Tensor};

const MAGIC: &[u8; 8] = b"FPARAMS1";

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.push(params.family().tag());
    out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for t in params.tensors() {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.tensor.shape().len() as u32).to_le_bytes());
        for &d in t.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(mut bytes: &[u8]) -> Result<ModelParams> {
    let mut magic = [0u8; 8];
    read_exact(&mut bytes, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let mut tag = [0u8; 1];
    read_exact(&mut bytes, &mut tag)?;
    let family = Family::from_tag(tag[0])
        .ok_or_else(|| Error::Snapshot(format!("family tag {}", tag[0])))?;
    let count = read_u32(&mut bytes)? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = read_u32(&mut bytes)? as usize;
        let mut name = vec![0u8; len];
        read_exact(&mut bytes, &mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Snapshot("name is not UTF-8".into()))?;
        let ndim = read_u32(&mut bytes)? as usize;
        let mut shape = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            shape.push(read_u64(&mut bytes)? as usize);
        }
        let n: usize = shape.iter().product();
        if n * 8 > bytes.len() {
            return Err(Error::Snapshot(format!("truncated payload for `{name}`")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            read_exact(&mut bytes, &mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        let tensor =
            Tensor::new(shape, data).map_err(|e| Error::Snapshot(format!("`{name}`: {e}")))?;
        tensors.push(NamedTensor::new(name, tensor));
    }
    if !bytes.is_empty() {
        return Err(Error::Snapshot("trailing bytes".into()));
    }
    Ok(ModelParams::new(family, tensors))
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}

fn read_exact(src: &mut &[u8], dst: &mut [u8]) -> Result<()> {
    src.read_exact(dst)
        .map_err(|_| Error::Snapshot("unexpected end of data".into()))
}

fn read_u32(src: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(src, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(src: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(src, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
