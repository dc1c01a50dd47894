//! Record datasets, their binary file format and synthetic sources with
//! exactly known entropy.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::codec::Reader;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::rng::{categorical, stream};

/// `count` records of `dims` symbols in `0..classes`, stored flat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    dims: usize,
    classes: usize,
    symbols: Vec<u32>,
}

fn symbol_width(classes: usize) -> usize {
    match classes {
        0..=256 => 1,
        257..=65536 => 2,
        _ => 4,
    }
}

impl Dataset {
    pub fn from_flat(dims: usize, classes: usize, symbols: Vec<u32>) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if !symbols.len().is_multiple_of(dims) {
            return Err(Error::Shape(format!("{} symbols do not form {dims}-dim records", symbols.len())));
        }
        if let Some(&bad) = symbols.iter().find(|&&v| v as usize >= classes) {
            return Err(Error::Shape(format!("class {bad} out of range for {classes} classes")));
        }
        Ok(Self { dims, classes, symbols })
    }

    pub fn new(dims: usize, classes: usize, records: &[Vec<u32>]) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| r.len() != dims) {
            return Err(Error::Shape(format!("record of length {} in a {dims}-dim dataset", r.len())));
        }
        Self::from_flat(dims, classes, records.concat())
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.symbols.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn record(&self, i: usize) -> &[u32] {
        &self.symbols[i * self.dims..(i + 1) * self.dims]
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = &[u32]> {
        self.symbols.chunks_exact(self.dims)
    }

    pub fn to_vecs(&self) -> Vec<Vec<u32>> {
        self.records().map(<[u32]>::to_vec).collect()
    }

    pub fn symbols(&self) -> &[u32] {
        &self.symbols
    }

    /// `u32 D, u32 K, u64 count`, then symbols at 1, 2 or 4 bytes each.
    pub fn to_bytes(&self) -> Vec<u8> {
        let w = symbol_width(self.classes);
        let mut out = Vec::with_capacity(16 + w * self.symbols.len());
        out.extend((self.dims as u32).to_le_bytes());
        out.extend((self.classes as u32).to_le_bytes());
        out.extend((self.len() as u64).to_le_bytes());
        for &v in &self.symbols {
            out.extend_from_slice(&v.to_le_bytes()[..w]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let dims = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let count = usize::try_from(r.u64()?).map_err(|_| Error::Format("record count too large".into()))?;
        let w = symbol_width(classes);
        let n = count.checked_mul(dims).filter(|n| n.checked_mul(w) == Some(r.remaining()));
        let n = n.ok_or_else(|| Error::Format(format!("{} payload bytes for {count} records", r.remaining())))?;
        let body = r.take(n * w)?;
        let symbols = body
            .chunks_exact(w)
            .map(|c| {
                let mut b = [0u8; 4];
                b[..w].copy_from_slice(c);
                u32::from_le_bytes(b)
            })
            .collect();
        Self::from_flat(dims, classes, symbols).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Entropy of a synthetic source, bits/dim.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entropy {
    /// Exact entropy of one `D`-dim record divided by `D`.
    pub block: f64,
    /// Entropy rate of the generating process (equal to `block` for
    /// i.i.d. sources).
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    Iid {
        probs: Vec<f64>,
    },
    /// First symbol from `initial`, then rows of `transitions`.
    Markov {
        initial: Vec<f64>,
        transitions: Vec<Vec<f64>>,
    },
    /// Uniform over `templates` distinct ramp images with `levels` classes.
    ToyImages {
        levels: usize,
        templates: usize,
    },
    /// Fixed-length chunks of a file; the tail shorter than `D` is dropped.
    RawBytes {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: SourceKind,
    pub dims: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn check_probs(p: &[f64], what: &str) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.len() < 2 || p.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("invalid probabilities in {what}: {p:?}")));
    }
    Ok(())
}

fn entropy_bits(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum()
}

/// Stationary distribution by power iteration from uniform.
pub fn stationary(transitions: &[Vec<f64>]) -> Vec<f64> {
    let k = transitions.len();
    let mut p = vec![1.0 / k as f64; k];
    for _ in 0..100_000 {
        let next = step_marginal(&p, transitions);
        let delta: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if delta < 1e-15 {
            break;
        }
    }
    p
}

fn step_marginal(p: &[f64], transitions: &[Vec<f64>]) -> Vec<f64> {
    let mut next = vec![0.0; p.len()];
    for (i, row) in transitions.iter().enumerate() {
        for (j, &t) in row.iter().enumerate() {
            next[j] += p[i] * t;
        }
    }
    next
}

impl SourceKind {
    pub fn classes(&self) -> usize {
        match self {
            SourceKind::Iid { probs } => probs.len(),
            SourceKind::Markov { transitions, .. } => transitions.len(),
            SourceKind::ToyImages { levels, .. } => *levels,
            SourceKind::RawBytes { .. } => 256,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            SourceKind::Iid { probs } => check_probs(probs, "data.probs"),
            SourceKind::Markov { initial, transitions } => {
                check_probs(initial, "initial distribution")?;
                for row in transitions {
                    if row.len() != transitions.len() {
                        return Err(Error::Config("transition matrix must be square".into()));
                    }
                    check_probs(row, "data.transitions")?;
                }
                if initial.len() != transitions.len() {
                    return Err(Error::Config("initial distribution does not match the transitions".into()));
                }
                Ok(())
            }
            SourceKind::ToyImages { levels, templates } => {
                if *levels < 2 || *templates == 0 {
                    return Err(Error::Config("toy images need ≥ 2 levels and ≥ 1 template".into()));
                }
                Ok(())
            }
            SourceKind::RawBytes { .. } => Ok(()),
        }
    }
}

impl DatasetSpec {
    pub fn new(kind: SourceKind, dims: usize, train: usize, val: usize, test: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidDimension(0));
        }
        kind.validate()?;
        Ok(Self { kind, dims, train, val, test })
    }

    pub fn iid(probs: Vec<f64>, dims: usize, train: usize, val: usize, test: usize) -> Result<Self> {
        Self::new(SourceKind::Iid { probs }, dims, train, val, test)
    }

    /// A Markov chain started from its stationary distribution.
    pub fn markov(transitions: Vec<Vec<f64>>, dims: usize, train: usize, val: usize, test: usize) -> Result<Self> {
        let initial = stationary(&transitions);
        Self::new(SourceKind::Markov { initial, transitions }, dims, train, val, test)
    }

    pub fn from_config(c: &Config) -> Result<Self> {
        let dims = c.require("dims")?;
        let kind = match c.require::<String>("data.kind")?.as_str() {
            "iid" => SourceKind::Iid {
                probs: c.list("data.probs")?.ok_or_else(|| Error::Config("missing key `data.probs`".into()))?,
            },
            "markov" => {
                let transitions = c
                    .matrix("data.transitions")?
                    .ok_or_else(|| Error::Config("missing key `data.transitions`".into()))?;
                let initial = match c.list("data.probs")? {
                    Some(p) => p,
                    None => stationary(&transitions),
                };
                SourceKind::Markov { initial, transitions }
            }
            "toy-images" => {
                SourceKind::ToyImages { levels: c.require("classes")?, templates: c.get_or("data.templates", 16)? }
            }
            "raw-bytes" => SourceKind::RawBytes { path: c.require::<String>("data.path")?.into() },
            other => return Err(Error::Config(format!("unknown data.kind `{other}`"))),
        };
        if let Some(k) = c.get::<usize>("classes")? {
            if k != kind.classes() {
                return Err(Error::Config(format!("classes = {k} but the source has {}", kind.classes())));
            }
        }
        Self::new(
            kind,
            dims,
            c.get_or("data.train", 10_000)?,
            c.get_or("data.val", 1_000)?,
            c.get_or("data.test", 1_000)?,
        )
    }

    pub fn classes(&self) -> usize {
        self.kind.classes()
    }

    /// Exact entropy for synthetic kinds.
    pub fn entropy(&self) -> Option<Entropy> {
        let d = self.dims as f64;
        match &self.kind {
            SourceKind::Iid { probs } => {
                let h = entropy_bits(probs);
                Some(Entropy { block: h, rate: h })
            }
            SourceKind::Markov { initial, transitions } => {
                let row_h: Vec<f64> = transitions.iter().map(|r| entropy_bits(r)).collect();
                let mut marginal = initial.clone();
                let mut total = entropy_bits(initial);
                for _ in 1..self.dims {
                    total += marginal.iter().zip(&row_h).map(|(p, h)| p * h).sum::<f64>();
                    marginal = step_marginal(&marginal, transitions);
                }
                let pi = stationary(transitions);
                let rate = pi.iter().zip(&row_h).map(|(p, h)| p * h).sum();
                Some(Entropy { block: total / d, rate })
            }
            SourceKind::ToyImages { templates, .. } => {
                let h = (*templates as f64).log2() / d;
                Some(Entropy { block: h, rate: h })
            }
            SourceKind::RawBytes { .. } => None,
        }
    }

    /// Deterministic train/val/test splits.
    pub fn generate(&self, seed: u64) -> Result<Splits> {
        let (d, k) = (self.dims, self.classes());
        let records = |n: usize, split: u64, draw: &dyn Fn(&mut crate::rng::Rng) -> Vec<u32>| {
            let mut rng = stream(seed, split);
            Dataset::new(d, k, &(0..n).map(|_| draw(&mut rng)).collect::<Vec<_>>())
        };
        let split3 = |draw: &dyn Fn(&mut crate::rng::Rng) -> Vec<u32>| -> Result<Splits> {
            Ok(Splits {
                train: records(self.train, 1, draw)?,
                val: records(self.val, 2, draw)?,
                test: records(self.test, 3, draw)?,
            })
        };
        match &self.kind {
            SourceKind::Iid { probs } => split3(&|rng| (0..d).map(|_| categorical(rng, probs) as u32).collect()),
            SourceKind::Markov { initial, transitions } => split3(&|rng| {
                let mut x = Vec::with_capacity(d);
                let mut s = categorical(rng, initial);
                x.push(s as u32);
                for _ in 1..d {
                    s = categorical(rng, &transitions[s]);
                    x.push(s as u32);
                }
                x
            }),
            SourceKind::ToyImages { levels, templates } => {
                let bank = toy_templates(d, *levels, *templates, seed)?;
                split3(&|rng| bank[rng.random_range(0..bank.len())].clone())
            }
            SourceKind::RawBytes { path } => {
                let bytes = std::fs::read(path)?;
                let mut chunks: Vec<Vec<u32>> =
                    bytes.chunks_exact(d).map(|c| c.iter().map(|&b| b as u32).collect()).collect();
                chunks.shuffle(&mut stream(seed, 1));
                let n = chunks.len();
                let (train, val) = (n * 90 / 100, n * 5 / 100);
                Ok(Splits {
                    train: Dataset::new(d, 256, &chunks[..train])?,
                    val: Dataset::new(d, 256, &chunks[train..train + val])?,
                    test: Dataset::new(d, 256, &chunks[train + val..])?,
                })
            }
        }
    }
}

/// Distinct linear-ramp images on the squarest grid with `dims` cells.
fn toy_templates(dims: usize, levels: usize, count: usize, seed: u64) -> Result<Vec<Vec<u32>>> {
    let width = (1..=dims).rev().find(|w| dims.is_multiple_of(*w) && w * w <= dims).unwrap_or(1);
    let width = dims / width;
    let mut rng = stream(seed, 0);
    let mut bank: Vec<Vec<u32>> = Vec::with_capacity(count);
    for _ in 0..count.saturating_mul(1000) {
        if bank.len() == count {
            break;
        }
        let (a, b, c) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0));
        let img: Vec<u32> = (0..dims)
            .map(|i| {
                let (r, col) = ((i / width) as f64, (i % width) as f64);
                let v: f64 = (a * r + b * col) / width as f64 + c;
                ((v.rem_euclid(1.0) * levels as f64) as usize).min(levels - 1) as u32
            })
            .collect();
        if !bank.contains(&img) {
            bank.push(img);
        }
    }
    if bank.len() < count {
        return Err(Error::Config(format!("could not draw {count} distinct templates")));
    }
    Ok(bank)
}
