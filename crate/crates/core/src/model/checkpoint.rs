//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FASTCKPT"  u32 version
//! u32 len, config as key=value text
//! f64 norm mean, f64 norm std
//! u32 count, then per sensor: u32 len, utf-8 id
//! u32 count, then per tensor: u32 len, name, u8 dtype tag, u32 ndim,
//!            u64 extents, little-endian payload
//! 32-byte SHA-256 of everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{FastModel, ModelConfig, ModelMeta};
use crate::data::NormStats;
use crate::error::{FastError, Result};
use crate::kv::KvMap;
use crate::numerics::{numel, DType, Real};
use crate::params::Parameterized;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FASTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| FastError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| FastError::Checkpoint("invalid utf-8 string".into()))
    }
}

impl<T: Real> FastModel<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.config.to_kv().to_text());
        out.extend_from_slice(&self.meta.norm.mean.to_le_bytes());
        out.extend_from_slice(&self.meta.norm.std.to_le_bytes());
        put_u32(&mut out, self.meta.sensor_ids.len());
        for id in &self.meta.sensor_ids {
            put_str(&mut out, id);
        }
        let params = self.named_params();
        put_u32(&mut out, params.len());
        for (name, t) in params {
            put_str(&mut out, &name);
            out.push(T::DTYPE.tag());
            put_u32(&mut out, t.shape().len());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(FastError::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()? as u32;
        if version != CHECKPOINT_VERSION {
            return Err(FastError::Checkpoint(format!(
                "format version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(FastError::Checkpoint("checksum mismatch (corrupt file)".into()));
        }
        let config = ModelConfig::from_kv(&KvMap::parse(&r.string()?)?)?;
        let norm = NormStats {
            mean: r.f64()?,
            std: r.f64()?,
        };
        let ids = (0..r.u32()?).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let mut model = FastModel::<T>::new(&config)?;
        model.meta = ModelMeta {
            norm,
            sensor_ids: ids,
        };

        let mut blobs = std::collections::HashMap::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let tag = r.take(1)?[0];
            let dtype = DType::from_tag(tag)
                .ok_or_else(|| FastError::Checkpoint(format!("{name}: unknown dtype tag {tag}")))?;
            let shape = (0..r.u32()?)
                .map(|_| r.u64().map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let raw = r.take(numel(&shape) * dtype.width())?;
            let data: Vec<T> = match dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| T::c(f32::read_le(c) as f64)).collect(),
                DType::F64 => raw.chunks_exact(8).map(|c| T::c(f64::read_le(c))).collect(),
            };
            blobs.insert(name, (shape, data));
        }
        if r.pos != body.len() {
            return Err(FastError::Checkpoint("trailing bytes after tensors".into()));
        }

        let mut err = None;
        model.visit_mut("", &mut |name, t| {
            if err.is_some() {
                return;
            }
            match blobs.remove(name) {
                None => err = Some(FastError::Checkpoint(format!("missing tensor {name}"))),
                Some((shape, _)) if shape != t.shape() => {
                    err = Some(FastError::Checkpoint(format!(
                        "{name}: stored shape {shape:?}, expected {:?}",
                        t.shape()
                    )))
                }
                Some((_, data)) => t.data_mut().copy_from_slice(&data),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if let Some(extra) = blobs.keys().next() {
            return Err(FastError::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| FastError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| FastError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks the sensor count against the data it will run on.
    pub fn load_for(path: &Path, n_sensors: usize) -> Result<Self> {
        let m = Self::load(path)?;
        m.check_compatible(n_sensors, m.config.t_hist)?;
        Ok(m)
    }

    /// Hex SHA-256 of the serialized model.
    pub fn checksum(&self) -> String {
        Sha256::digest(self.to_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
