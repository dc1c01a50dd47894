//! The conditional-network interface shared by the objectives, samplers and
//! the codec, plus a few fixed networks used as oracles in tests.

use std::cell::Cell;

use crate::ordering::Mask;

/// What a network emits per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// A normalized probability vector over all `K` classes.
    Full,
    /// Unnormalized logits over the `b` children of the current branch.
    Branch,
}

/// `θ = f(i, m, s, t)`.
pub trait ConditionalModel {
    fn dims(&self) -> usize;
    fn classes(&self) -> usize;

    fn head(&self) -> Head {
        Head::Full
    }

    /// Row width of [`ConditionalModel::predict`]: `K` for full heads.
    fn width(&self) -> usize {
        self.classes()
    }

    /// Row-major `dims × width` output for input `input` under `mask`, at
    /// 1-based stage `stage` and step `step`.
    fn predict(&self, input: &[u32], mask: &Mask, stage: usize, step: usize) -> Vec<f64>;
}

impl<M: ConditionalModel + ?Sized> ConditionalModel for &M {
    fn dims(&self) -> usize {
        (**self).dims()
    }
    fn classes(&self) -> usize {
        (**self).classes()
    }
    fn head(&self) -> Head {
        (**self).head()
    }
    fn width(&self) -> usize {
        (**self).width()
    }
    fn predict(&self, input: &[u32], mask: &Mask, stage: usize, step: usize) -> Vec<f64> {
        (**self).predict(input, mask, stage, step)
    }
}

/// Uniform over all classes, whatever the input.
#[derive(Debug, Clone)]
pub struct UniformModel {
    pub dims: usize,
    pub classes: usize,
}

impl ConditionalModel for UniformModel {
    fn dims(&self) -> usize {
        self.dims
    }
    fn classes(&self) -> usize {
        self.classes
    }
    fn predict(&self, _: &[u32], _: &Mask, _: usize, _: usize) -> Vec<f64> {
        vec![1.0 / self.classes as f64; self.dims * self.classes]
    }
}

/// Input-independent network: the same row per dimension at every call.
#[derive(Debug, Clone)]
pub struct StaticModel {
    pub dims: usize,
    pub classes: usize,
    pub rows: Vec<f64>,
}

impl StaticModel {
    pub fn repeated(dims: usize, row: &[f64]) -> Self {
        Self { dims, classes: row.len(), rows: row.repeat(dims) }
    }

    pub fn point_mass(dims: usize, classes: usize, class: u32) -> Self {
        let mut row = vec![0.0; classes];
        row[class as usize] = 1.0;
        Self::repeated(dims, &row)
    }
}

impl ConditionalModel for StaticModel {
    fn dims(&self) -> usize {
        self.dims
    }
    fn classes(&self) -> usize {
        self.classes
    }
    fn predict(&self, _: &[u32], _: &Mask, _: usize, _: usize) -> Vec<f64> {
        self.rows.clone()
    }
}

/// A deterministic, input-dependent pseudo-random network. Every distinct
/// `(input, mask, stage, step)` gets its own strictly positive rows.
#[derive(Debug, Clone)]
pub struct HashedModel {
    pub dims: usize,
    pub classes: usize,
    pub seed: u64,
    /// Branch width when emitting logits; `None` for a full head.
    pub branch: Option<usize>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ConditionalModel for HashedModel {
    fn dims(&self) -> usize {
        self.dims
    }
    fn classes(&self) -> usize {
        self.classes
    }
    fn head(&self) -> Head {
        if self.branch.is_some() {
            Head::Branch
        } else {
            Head::Full
        }
    }
    fn width(&self) -> usize {
        self.branch.unwrap_or(self.classes)
    }
    fn predict(&self, input: &[u32], mask: &Mask, stage: usize, step: usize) -> Vec<f64> {
        let mut h = splitmix(self.seed ^ ((stage as u64) << 48) ^ ((step as u64) << 32));
        for (i, &v) in input.iter().enumerate() {
            h = splitmix(h ^ (v as u64) ^ ((mask.get(i) as u64) << 40));
        }
        let w = self.width();
        let mut out = Vec::with_capacity(self.dims * w);
        for d in 0..self.dims {
            let mut row: Vec<f64> = (0..w)
                .map(|k| {
                    let r = splitmix(h ^ ((d * w + k) as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
                    // logits in [-2, 2)
                    (r >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
                })
                .collect();
            if self.branch.is_none() {
                let z: f64 = row.iter().map(|l| l.exp()).sum();
                row.iter_mut().for_each(|l| *l = l.exp() / z);
            }
            out.extend(row);
        }
        out
    }
}

/// Counts network evaluations of the wrapped model.
#[derive(Debug)]
pub struct CountingModel<M> {
    pub inner: M,
    calls: Cell<usize>,
}

impl<M> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        Self { inner, calls: Cell::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn reset(&self) {
        self.calls.set(0);
    }
}

impl<M: ConditionalModel> ConditionalModel for CountingModel<M> {
    fn dims(&self) -> usize {
        self.inner.dims()
    }
    fn classes(&self) -> usize {
        self.inner.classes()
    }
    fn head(&self) -> Head {
        self.inner.head()
    }
    fn width(&self) -> usize {
        self.inner.width()
    }
    fn predict(&self, input: &[u32], mask: &Mask, stage: usize, step: usize) -> Vec<f64> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict(input, mask, stage, step)
    }
}
