//! Binary checkpoint: configuration, parameters, EMA, loss ledger, Adam
//! moments and the position in the random stream.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::codec::Reader;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::oa::LossLedger;

pub const MAGIC: &[u8; 4] = b"ARDM";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub params: Vec<f32>,
    pub ema: Vec<f32>,
    pub ledger: LossLedger,
    pub adam_m: Vec<f32>,
    pub adam_v: Vec<f32>,
    /// Base seed; optimizer step `n` draws from stream `n` of it.
    pub seed: u64,
    pub step: u64,
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend(x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let config = self.config.to_text();
        let n = self.params.len();
        let mut out = Vec::with_capacity(64 + config.len() + 16 * n + 16 * self.ledger.components().len());
        out.extend_from_slice(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend((config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend((n as u64).to_le_bytes());
        put_f32s(&mut out, &self.params);
        put_f32s(&mut out, &self.ema);
        out.extend((self.ledger.dims() as u32).to_le_bytes());
        out.extend((self.ledger.stages() as u32).to_le_bytes());
        out.extend(self.ledger.momentum().to_le_bytes());
        for c in self.ledger.components() {
            out.extend(c.to_le_bytes());
        }
        for c in self.ledger.counts() {
            out.extend(c.to_le_bytes());
        }
        put_f32s(&mut out, &self.adam_m);
        put_f32s(&mut out, &self.adam_v);
        out.extend(self.seed.to_le_bytes());
        out.extend(self.step.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("config is not UTF-8".into()))?;
        let config = Config::parse(text)?;
        let n = usize::try_from(r.u64()?).map_err(|_| Error::Format("parameter count too large".into()))?;
        if n.saturating_mul(16) > r.remaining() {
            return Err(Error::Format(format!("{n} parameters do not fit the file")));
        }
        let f32s = |r: &mut Reader| (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>();
        let params = f32s(&mut r)?;
        let ema = f32s(&mut r)?;
        let dims = r.u32()? as usize;
        let stages = r.u32()? as usize;
        let momentum = r.f64()?;
        let slots = dims.saturating_mul(stages);
        if slots.saturating_mul(16) > r.remaining() {
            return Err(Error::Format("ledger does not fit the file".into()));
        }
        let components = (0..slots).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let counts = (0..slots).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let ledger = LossLedger::from_parts(dims, stages, momentum, components, counts)?;
        let adam_m = f32s(&mut r)?;
        let adam_v = f32s(&mut r)?;
        let seed = r.u64()?;
        let step = r.u64()?;
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { config, params, ema, ledger, adam_m, adam_v, seed, step })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// 64-bit identity used by compressed files.
    pub fn hash(&self) -> u64 {
        model_hash(&self.to_bytes())
    }
}

/// First eight bytes (little-endian) of the SHA-256 of `bytes`.
pub fn model_hash(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
