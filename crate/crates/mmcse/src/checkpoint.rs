//! Binary encoder checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "MMCSECKP"
//! version      u32      CHECKPOINT_VERSION
//! step         u64      training step the parameters come from
//! config_len   u32      then config_len bytes of UTF-8 run config (key = value)
//! count        u32      number of parameters
//! per parameter:
//!   name_len   u32      then name_len bytes of UTF-8 name
//!   ndim       u32      then ndim × u64 dimensions
//!   data       f64 × product(dims), row-major, IEEE-754 bit patterns
//! ```
//!
//! Floats are stored bit-for-bit, so save → load is exact.

use std::path::Path;

use mmcse_core::autograd::ParamStore;
use mmcse_core::encoder::Encoder;
use mmcse_core::Tensor;

use crate::{write_file, CliError, Result, RunConfig};

pub const MAGIC: &[u8; 8] = b"MMCSECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(config: &RunConfig, step: u64, params: &ParamStore) -> Self {
        Checkpoint {
            config: config.clone(),
            step,
            params: params.clone(),
        }
    }

    pub fn encoder(&self) -> Result<Encoder> {
        Ok(Encoder::from_params(self.config.encoder(), &self.params)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        let cfg = self.config.to_text();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (_, p) in self.params.iter() {
            out.extend_from_slice(&(p.name().len() as u32).to_le_bytes());
            out.extend_from_slice(p.name().as_bytes());
            let shape = p.value().shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value().data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(CliError::format(path, "not an mmcse checkpoint"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CliError::format(
                path,
                format!("checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"),
            ));
        }
        let step = r.u64()?;
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| CliError::format(path, "config is not UTF-8"))?;
        let config = RunConfig::parse(text)?;
        let count = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CliError::format(path, "parameter name is not UTF-8"))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.u64().map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
            params.add(name, Tensor::new(shape, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(CliError::format(path, "trailing bytes after the last parameter"));
        }
        Ok(Checkpoint { config, step, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CliError::format(self.path, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
