use crate::error::{Error, Result};
use crate::ordering::Permutation;
use crate::schedule::Schedule;

pub const MAGIC: &[u8; 4] = b"ARDC";
pub const VERSION: u16 = 1;

/// Header plus rANS payload. Order-agnostic models store `branching = 0`
/// and `stages = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedFile {
    pub dims: u32,
    pub classes: u32,
    pub branching: u16,
    pub stages: u16,
    pub precision: u16,
    pub model_hash: u64,
    /// One schedule per stage, all with the same budget.
    pub schedules: Vec<Schedule>,
    pub permutation: Permutation,
    pub payload: Vec<u8>,
}

impl CompressedFile {
    pub fn budget(&self) -> usize {
        self.schedules.first().map_or(0, Schedule::budget)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.payload.len() + 4 * (self.dims as usize + self.budget()));
        out.extend_from_slice(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend(self.dims.to_le_bytes());
        out.extend(self.classes.to_le_bytes());
        out.extend(self.branching.to_le_bytes());
        out.extend(self.stages.to_le_bytes());
        out.extend(self.precision.to_le_bytes());
        out.extend(self.model_hash.to_le_bytes());
        out.extend((self.budget() as u32).to_le_bytes());
        for s in &self.schedules {
            for &step in s.steps() {
                out.extend(step.to_le_bytes());
            }
        }
        for &r in self.permutation.ranks() {
            out.extend(r.to_le_bytes());
        }
        out.extend((self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a compressed file".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dims = r.u32()?;
        let classes = r.u32()?;
        let branching = r.u16()?;
        let stages = r.u16()?;
        let precision = r.u16()?;
        let model_hash = r.u64()?;
        let budget = r.u32()? as usize;
        if stages == 0 || budget == 0 || budget > dims as usize {
            return Err(Error::Format(format!("budget {budget} for {dims} dims over {stages} stages")));
        }
        let mut schedules = Vec::with_capacity(stages as usize);
        for _ in 0..stages {
            let steps = (0..budget).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            if steps.last() != Some(&dims) {
                return Err(Error::Format("schedule does not end at D".into()));
            }
            schedules.push(Schedule::new(steps, f64::NAN).map_err(|e| Error::Format(e.to_string()))?);
        }
        let ranks = (0..dims).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let permutation = Permutation::from_ranks(ranks).map_err(|e| Error::Format(e.to_string()))?;
        let len = r.u64()?;
        let payload = r.take(usize::try_from(len).map_err(|_| Error::Format("payload too long".into()))?)?.to_vec();
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { dims, classes, branching, stages, precision, model_hash, schedules, permutation, payload })
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
