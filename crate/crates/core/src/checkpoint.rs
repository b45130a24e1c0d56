//! Versioned little-endian checkpoint files.
//!
//! Layout: magic, version, epoch, optimizer step, config hash, config text,
//! then a manifest of `(name, dtype, shape, offset, length)` entries and the
//! raw tensor bytes they point into. Tensors are parameters (`param/…`) and
//! the AdamW moments (`adam_m/…`, `adam_v/…`).

use std::path::Path;

use crate::autodiff::{DType, Real};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::Model;
use crate::optim::AdamWState;

pub const MAGIC: &[u8; 8] = b"NTXCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Little-endian element bytes.
    pub bytes: Vec<u8>,
}

impl NamedTensor {
    fn from_slice<T: Real>(name: String, shape: &[usize], data: &[T]) -> Self {
        let mut bytes = Vec::with_capacity(data.len() * T::DTYPE.size());
        for &v in data {
            v.write_le(&mut bytes);
        }
        NamedTensor {
            name,
            dtype: T::DTYPE,
            shape: shape.to_vec(),
            bytes,
        }
    }

    /// Elements converted to `T`.
    pub fn values<T: Real>(&self) -> Vec<T> {
        let size = self.dtype.size();
        self.bytes
            .chunks_exact(size)
            .map(|c| match self.dtype {
                DType::F32 => T::c(f32::read_le(c) as f64),
                DType::F64 => T::c(f64::read_le(c)),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: u32,
    pub step: u64,
    pub config_hash: [u8; 32],
    pub config_text: String,
    pub tensors: Vec<NamedTensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.bytes.len() - self.pos < n {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    /// Snapshot of the model parameters and optimizer moments.
    pub fn capture<T: Real>(model: &Model<T>, opt: &AdamWState<T>, cfg: &TrainConfig, epoch: u32) -> Self {
        let mut tensors = Vec::new();
        for p in model.store.iter() {
            tensors.push(NamedTensor::from_slice(format!("param/{}", p.name), p.value.shape(), p.value.data()));
        }
        for (p, (m, v)) in model.store.iter().zip(opt.m.iter().zip(&opt.v)) {
            tensors.push(NamedTensor::from_slice(format!("adam_m/{}", p.name), p.value.shape(), m));
            tensors.push(NamedTensor::from_slice(format!("adam_v/{}", p.name), p.value.shape(), v));
        }
        Checkpoint {
            epoch,
            step: opt.step,
            config_hash: cfg.hash(),
            config_text: cfg.to_text(),
            tensors,
        }
    }

    pub fn config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig::parse(&self.config_text)?;
        if cfg.hash() != self.config_hash {
            return Err(Error::Contract("checkpoint config hash does not match its config text".into()));
        }
        Ok(cfg)
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copies stored values into `model` and `opt`, converting precision if
    /// needed.
    pub fn restore<T: Real>(&self, model: &mut Model<T>, opt: &mut AdamWState<T>) -> Result<()> {
        for (i, p) in model.store.iter_mut().enumerate() {
            let get = |prefix: &str| -> Result<Vec<T>> {
                let key = format!("{prefix}/{}", p.name);
                let t = self
                    .tensor(&key)
                    .ok_or_else(|| Error::Contract(format!("checkpoint lacks tensor `{key}`")))?;
                if t.shape != p.value.shape() {
                    return Err(Error::shape("restore", format!("{key}: {:?} vs {:?}", t.shape, p.value.shape())));
                }
                Ok(t.values())
            };
            let (pv, mv, vv) = (get("param")?, get("adam_m")?, get("adam_v")?);
            p.value.data_mut().copy_from_slice(&pv);
            opt.m[i] = mv;
            opt.v[i] = vv;
        }
        opt.step = self.step;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(self.config_text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dtype.tag());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(t.bytes.len() as u64).to_le_bytes());
            offset += t.bytes.len() as u64;
        }
        for t in &self.tensors {
            out.extend_from_slice(&t.bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let epoch = r.u32()?;
        let step = r.u64()?;
        let config_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let n = r.u32()? as usize;
        let config_text = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| "config text is not UTF-8")?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
            let dtype = DType::from_tag(r.u8()?).ok_or("unknown dtype tag")?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let offset = r.u64()? as usize;
            let nbytes = r.u64()? as usize;
            if shape.iter().product::<usize>() * dtype.size() != nbytes {
                return Err(format!("tensor `{name}`: {nbytes} bytes do not match shape {shape:?}"));
            }
            entries.push((name, dtype, shape, offset, nbytes));
        }
        let data = &bytes[r.pos..];
        let mut tensors = Vec::with_capacity(count);
        for (name, dtype, shape, offset, nbytes) in entries {
            let end = offset.checked_add(nbytes).filter(|&e| e <= data.len()).ok_or_else(|| {
                format!("tensor `{name}` extends past the end of the file")
            })?;
            tensors.push(NamedTensor {
                name,
                dtype,
                shape,
                bytes: data[offset..end].to_vec(),
            });
        }
        Ok(Checkpoint {
            epoch,
            step,
            config_hash,
            config_text,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}
