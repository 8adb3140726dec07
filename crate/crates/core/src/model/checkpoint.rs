//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "ICLDUAL1" | u32 version | u32 len, config text (key=value lines)
//! u32 n_arrays | per array: u32 len, name | u32 rank | u32 dims.. | floats
//! ```
//!
//! Float width follows the `precision` key of the stored config.

use std::collections::BTreeMap;
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::tensor::{Precision, Real};
use crate::Error;
use crate::Result;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ICLDUAL1";
pub const CHECKPOINT_VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub(crate) fn encode<T: Real>(config: &ModelConfig, params: &ModelParams<T>) -> Result<Vec<u8>> {
    params.check_shapes(config)?;
    let config = ModelConfig { precision: T::PRECISION, ..config.clone() };
    let mut out = Vec::with_capacity(params.n_params() * T::PRECISION.byte_width() + 1024);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let text = config.to_string();
    push_u32(&mut out, text.len());
    out.extend_from_slice(text.as_bytes());
    let slots = params.slots();
    push_u32(&mut out, slots.len());
    for (name, shape, values) in slots {
        push_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, shape.len());
        for d in shape {
            push_u32(&mut out, d);
        }
        for &v in values {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn text(&mut self) -> Result<&'a str> {
        let n = self.u32()?;
        let path = self.path;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::format(path, "invalid UTF-8"))
    }
}

fn read_header<'a>(r: &mut Reader<'a>) -> Result<ModelConfig> {
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format(r.path, "not an ICLDUAL1 checkpoint"));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(r.path, format!("unsupported checkpoint version {version}")));
    }
    let mut kv = BTreeMap::new();
    for line in r.text()?.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(r.path, format!("bad config line {line:?}")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    ModelConfig::default()
        .apply_kv(&kv)
        .map_err(|e| Error::format(r.path, format!("stored config: {e}")))
}

pub(crate) fn decode<T: Real>(bytes: &[u8], path: &Path) -> Result<(ModelConfig, ModelParams<T>)> {
    let mut r = Reader { bytes, pos: 0, path };
    let stored = read_header(&mut r)?;
    let width = stored.precision.byte_width();
    let mut params = ModelParams::<T>::zeros(&stored);
    let expected: Vec<(String, Vec<usize>)> = params.slots().into_iter().map(|(n, s, _)| (n, s)).collect();
    let n_arrays = r.u32()?;
    if n_arrays != expected.len() {
        return Err(Error::format(path, format!("{n_arrays} arrays, config implies {}", expected.len())));
    }
    for ((name, shape), slot) in expected.iter().zip(params.slots_mut()) {
        let got = r.text()?;
        if got != name {
            return Err(Error::format(path, format!("array {got:?} where {name:?} expected")));
        }
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(Error::format(path, format!("{name}: shape {dims:?}, config implies {shape:?}")));
        }
        let raw = r.take(slot.len() * width)?;
        for (dst, chunk) in slot.iter_mut().zip(raw.chunks_exact(width)) {
            *dst = match stored.precision {
                Precision::Single => T::from_f64(f32::read_le(chunk) as f64),
                Precision::Double => T::from_f64(f64::read_le(chunk)),
            };
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last array"));
    }
    Ok((stored, params))
}

pub fn save_checkpoint<T: Real>(path: &Path, config: &ModelConfig, params: &ModelParams<T>) -> Result<()> {
    let bytes = encode(config, params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Load parameters, converting to `T` if the file was stored at the other precision.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(ModelConfig, ModelParams<T>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn read_checkpoint_config(path: &Path) -> Result<ModelConfig> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_header(&mut Reader { bytes: &bytes, pos: 0, path })
}
