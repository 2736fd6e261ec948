//! Parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TSC1"  u32 version  u32 config_len  config JSON (UTF-8)
//! u32 count, then per parameter:
//!   u32 name_len  name (UTF-8)  u32 rank  u32 × rank dims  f32 × Π dims
//! ```

use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TSC1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ParamSet<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::shape(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl Checkpoint {
    pub fn new(config: RunConfig, params: ParamSet<f32>) -> Self {
        Checkpoint { config, params }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        put_u32(&mut out, cfg.len())?;
        out.extend_from_slice(&cfg);
        put_u32(&mut out, self.params.len())?;
        for p in self.params.iter() {
            put_u32(&mut out, p.name.len())?;
            out.extend_from_slice(p.name.as_bytes());
            put_u32(&mut out, p.value.rank())?;
            for &d in p.value.shape() {
                put_u32(&mut out, d)?;
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(0, "bad magic, expected TSC1"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let cfg_len = r.u32("config length")? as usize;
        let cfg_at = r.pos;
        let cfg_bytes = r.take(cfg_len, "config")?;
        let text = std::str::from_utf8(cfg_bytes)
            .map_err(|_| Error::format(cfg_at, "config is not UTF-8"))?;
        let config = RunConfig::from_json(text)
            .map_err(|e| Error::format(cfg_at, format!("embedded config: {e}")))?;
        let count = r.u32("parameter count")? as usize;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name_at = r.pos;
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::format(name_at, "parameter name is not UTF-8"))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            if rank > 8 {
                return Err(Error::format(r.pos - 4, format!("rank {rank} too large")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("dimension")? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4).map(|_| n))
                .ok_or_else(|| Error::format(r.pos, "dimensions overflow"))?;
            let data = r
                .take(n * 4, "payload")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params
                .insert(name, Tensor::new(&dims, data)?)
                .map_err(|e| Error::format(name_at, e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos, "trailing bytes after last parameter"));
        }
        Ok(Checkpoint { config, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes)
    }

    /// Builds the model, failing unless the stored architecture equals the
    /// one in `expected`. Training settings may differ.
    pub fn into_model(self, expected: &RunConfig) -> Result<Model<f32>> {
        if self.config.model() != expected.model() {
            return Err(Error::format(
                8,
                "checkpoint architecture does not match the loading configuration",
            ));
        }
        Model::from_params(&self.config.model(), self.params)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.bytes.len(), format!("truncated {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}
