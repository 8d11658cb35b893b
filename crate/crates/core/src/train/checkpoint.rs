//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "TRJMCKPT"
//! version  u32
//! config   u64 length + UTF-8 `key = value` text
//! step     u64
//! best     f64      best validation ADE
//! count    u64      number of parameter tensors
//! manifest count × (u32 name length, name, u32 rank, rank × u64 dims)
//! payload  u64 scalar count + that many f64, in manifest order
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::TrajMamba;
use crate::numerics::Tensor;

use super::TrainConfig;

pub const MAGIC: &[u8; 8] = b"TRJMCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Optimizer steps taken when the parameters were captured.
    pub step: usize,
    pub best_val_ade: f64,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(config: &TrainConfig, model: &TrajMamba, step: usize, best_val_ade: f64) -> Self {
        let store = model.store();
        let mut config = config.clone();
        config.model = model.config().clone();
        Checkpoint {
            config,
            step,
            best_val_ade,
            params: store.names().iter().cloned().zip(store.tensors().iter().cloned()).collect(),
        }
    }

    /// Rebuilds the model; names and shapes are validated against the
    /// stored config's layout.
    pub fn model(&self) -> Result<TrajMamba> {
        TrajMamba::from_parameters(self.config.model.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text = self.config.to_text();
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.step as u64).to_le_bytes());
        out.extend_from_slice(&self.best_val_ade.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        let total: usize = self.params.iter().map(|(_, t)| t.numel()).sum();
        out.extend_from_slice(&(total as u64).to_le_bytes());
        for (_, t) in &self.params {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses and validates a checkpoint, including the parameter layout.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("version {version} is not supported (expected {VERSION})")));
        }
        let text_len = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
        let config = TrainConfig::parse(text, "checkpoint config")?;
        let step = r.u64()? as usize;
        let best_val_ade = f64::from_le_bytes(r.array()?);
        let count = r.u64()? as usize;
        let mut manifest = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            manifest.push((name, shape));
        }
        let expected: usize = manifest.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        let declared = r.u64()? as usize;
        let remaining = bytes.len() - r.pos;
        if declared != expected || remaining != expected * 8 {
            return Err(Error::Checkpoint(format!(
                "payload length mismatch: manifest needs {expected} values, header declares {declared}, file holds {} bytes",
                remaining
            )));
        }
        let mut params = Vec::with_capacity(count);
        for (name, shape) in manifest {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.array().map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
            params.push((name, Tensor::new(&shape, data)?));
        }
        let ckpt = Checkpoint {
            config,
            step,
            best_val_ade,
            params,
        };
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file: wanted {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice of length N"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }
}
