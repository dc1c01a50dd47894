//! A small conditional network `f(i, m, s, t)` with hand-derived gradients.
//!
//! Every dimension is embedded from its class, a normalized copy of the
//! class value, its mask bit, the stage one-hot and `t / D`. Residual blocks
//! then mix a position-wise affine map with a pooled context vector, so each
//! output depends on every input. A per-dimension linear head produces `K`
//! logits (data parametrization) or `b` branch logits (direct).

mod objective;
mod optim;

pub use objective::{Objective, Term};
pub use optim::{adam_step, clip_grad_norm, ema_update, AdamConfig, ParamStore};

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ConditionalModel, Head};
use crate::ordering::{AbsorbingState, Mask};
use crate::process::Variant;
use crate::rng::Rng;
use crate::upscale::{softmax, stage_count, TransitionSet};

/// Floating-point element type of the network.
pub trait Real:
    Copy
    + Send
    + Sync
    + Debug
    + Default
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}
impl_real!(f32);
impl_real!(f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parametrization {
    /// `K` outputs per dimension, renormalized onto the branch.
    Data,
    /// `b` branch logits per dimension.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dims: usize,
    pub classes: usize,
    /// Upscaling branch factor; 0 for an order-agnostic model.
    pub branching: usize,
    pub parametrization: Parametrization,
    pub hidden: usize,
    pub depth: usize,
    pub time_input: bool,
    pub positional: bool,
    /// Absorbing class of order-agnostic models.
    pub absorbing: u32,
}

impl ModelConfig {
    pub fn order_agnostic(dims: usize, classes: usize, hidden: usize, depth: usize) -> Self {
        Self {
            dims,
            classes,
            branching: 0,
            parametrization: Parametrization::Data,
            hidden,
            depth,
            time_input: true,
            positional: true,
            absorbing: 0,
        }
    }

    pub fn upscale(dims: usize, classes: usize, branching: usize, hidden: usize, depth: usize) -> Self {
        Self { branching, ..Self::order_agnostic(dims, classes, hidden, depth) }
    }

    pub fn stages(&self) -> usize {
        if self.branching == 0 {
            1
        } else {
            stage_count(self.classes, self.branching)
        }
    }

    pub fn head(&self) -> Head {
        match self.parametrization {
            Parametrization::Data => Head::Full,
            Parametrization::Direct => Head::Branch,
        }
    }

    /// Output width per dimension.
    pub fn width(&self) -> usize {
        match self.parametrization {
            Parametrization::Data => self.classes,
            Parametrization::Direct => self.branching,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dims == 0 {
            return bad("dims must be positive");
        }
        if self.classes < 2 {
            return bad("classes must be at least 2");
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive");
        }
        if self.branching == 1 {
            return bad("branching must be 0 (order agnostic) or at least 2");
        }
        if self.parametrization == Parametrization::Direct && (self.branching < 2 || self.stages() < 2) {
            return bad("direct parametrization needs an upscale model with at least 2 stages");
        }
        if self.branching == 0 && self.absorbing as usize >= self.classes {
            return bad("absorbing class out of range");
        }
        Ok(())
    }

    pub fn variant(&self) -> Result<Variant> {
        self.validate()?;
        Ok(if self.branching == 0 {
            Variant::OrderAgnostic { absorbing: AbsorbingState::Broadcast(self.absorbing) }
        } else {
            Variant::Upscale(TransitionSet::new(self.classes, self.branching)?)
        })
    }

    fn features(&self) -> usize {
        self.stages() + 3
    }
}

/// Offsets of each parameter block in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub embedding: usize,
    pub input_weight: usize,
    pub input_bias: usize,
    pub position: Option<usize>,
    pub blocks: Vec<BlockLayout>,
    pub head_weight: usize,
    pub head_bias: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub gate_weight: usize,
    pub gate_bias: usize,
    pub mix_weight: usize,
    pub context_weight: usize,
    pub mix_bias: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let h = c.hidden;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let embedding = take(c.classes * h);
        let input_weight = take(h * c.features());
        let input_bias = take(h);
        let position = c.positional.then(|| take(c.dims * h));
        let blocks = (0..c.depth)
            .map(|_| BlockLayout {
                gate_weight: take(h * h),
                gate_bias: take(h),
                mix_weight: take(h * h),
                context_weight: take(h * h),
                mix_bias: take(h),
            })
            .collect();
        let head_weight = take(c.width() * h);
        let head_bias = take(c.width());
        Self { embedding, input_weight, input_bias, position, blocks, head_weight, head_bias, total: at }
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    F::from_f64(1.0) / (F::from_f64(1.0) + (-x).exp())
}

fn swish<F: Real>(x: F) -> F {
    x * sigmoid(x)
}

fn swish_grad<F: Real>(x: F) -> F {
    let s = sigmoid(x);
    s + x * s * (F::from_f64(1.0) - s)
}

/// `out[o] += Σ_i w[o·n + i] · x[i]`
fn matvec_add<F: Real>(w: &[F], x: &[F], out: &mut [F]) {
    let n = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &w[o * n..(o + 1) * n];
        let mut acc = F::default();
        for (a, b) in row.iter().zip(x) {
            acc += *a * *b;
        }
        *y += acc;
    }
}

/// `dx += Wᵀ dy` and `dW += dy ⊗ x`.
fn matvec_backward<F: Real>(w: &[F], x: &[F], dy: &[F], dw: &mut [F], dx: &mut [F]) {
    let n = x.len();
    for (o, &g) in dy.iter().enumerate() {
        let row = &w[o * n..(o + 1) * n];
        let drow = &mut dw[o * n..(o + 1) * n];
        for i in 0..n {
            dx[i] += row[i] * g;
            drow[i] += g * x[i];
        }
    }
}

struct Cache<F> {
    features: Vec<F>,
    /// Block inputs; `hidden[depth]` feeds the head.
    hidden: Vec<Vec<F>>,
    gate_pre: Vec<Vec<F>>,
    context: Vec<Vec<F>>,
    mix_pre: Vec<Vec<F>>,
    logits: Vec<F>,
}

/// Network shape and parameter layout; parameters live outside.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: ModelConfig,
    layout: Layout,
}

/// `(loss_bits, component_bits, elbo_bits)` of one objective.
type ExampleStats = (f64, f64, f64);

impl Network {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        Ok(Self { config, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Training initialization: zero output head, so every dimension starts
    /// out uniform.
    pub fn init<F: Real>(&self, rng: &mut Rng) -> Vec<F> {
        self.init_with_head(rng, 0.0)
    }

    /// Initialization with a random output head of standard deviation
    /// `head_std`, for tests that need a non-trivial untrained network.
    pub fn init_with_head<F: Real>(&self, rng: &mut Rng, head_std: f64) -> Vec<F> {
        let c = &self.config;
        let l = &self.layout;
        let h = c.hidden;
        let mut p = vec![F::default(); l.total];
        let mut fill = |p: &mut [F], std: f64| {
            if std > 0.0 {
                let normal = Normal::new(0.0, std).expect("valid std");
                for v in p {
                    *v = F::from_f64(normal.sample(rng));
                }
            }
        };
        fill(&mut p[l.embedding..l.embedding + c.classes * h], 0.5);
        fill(&mut p[l.input_weight..l.input_weight + h * c.features()], 0.5);
        if let Some(pos) = l.position {
            fill(&mut p[pos..pos + c.dims * h], 0.5);
        }
        let scale = 1.0 / (h as f64).sqrt();
        for b in &l.blocks {
            fill(&mut p[b.gate_weight..b.gate_weight + h * h], scale);
            fill(&mut p[b.mix_weight..b.mix_weight + h * h], scale);
            fill(&mut p[b.context_weight..b.context_weight + h * h], scale);
        }
        fill(&mut p[l.head_weight..l.head_weight + c.width() * h], head_std);
        fill(&mut p[l.head_bias..l.head_bias + c.width()], head_std);
        p
    }

    fn check(&self, input: &[u32], mask: &Mask, stage: usize, step: usize) -> Result<()> {
        let c = &self.config;
        if input.len() != c.dims || mask.len() != c.dims {
            return Err(Error::Shape(format!(
                "expected {} dims, got input {} mask {}",
                c.dims,
                input.len(),
                mask.len()
            )));
        }
        if let Some(&v) = input.iter().find(|&&v| v as usize >= c.classes) {
            return Err(Error::Shape(format!("class {v} out of range")));
        }
        if stage == 0 || stage > c.stages() {
            return Err(Error::StageOutOfRange { stage, min: 1, max: c.stages() });
        }
        if step == 0 || step > c.dims {
            return Err(Error::StepOutOfRange { step, max: c.dims });
        }
        Ok(())
    }

    fn run<F: Real>(&self, params: &[F], input: &[u32], mask: &Mask, stage: usize, step: usize) -> Cache<F> {
        let c = &self.config;
        let l = &self.layout;
        let (d, h, w, nf) = (c.dims, c.hidden, c.width(), c.features());

        let mut features = vec![F::default(); d * nf];
        let time = if c.time_input { step as f64 / d as f64 } else { 0.0 };
        for i in 0..d {
            let f = &mut features[i * nf..(i + 1) * nf];
            f[0] = F::from_f64(input[i] as f64 / c.classes as f64 - 0.5);
            f[1] = F::from_f64(mask.get(i) as u8 as f64);
            f[1 + stage] = F::from_f64(1.0);
            f[nf - 1] = F::from_f64(time);
        }

        let mut h0 = vec![F::default(); d * h];
        for i in 0..d {
            let row = &mut h0[i * h..(i + 1) * h];
            let e = input[i] as usize * h;
            for o in 0..h {
                row[o] = params[l.embedding + e + o] + params[l.input_bias + o];
                if let Some(pos) = l.position {
                    row[o] += params[pos + i * h + o];
                }
            }
            matvec_add(&params[l.input_weight..l.input_weight + h * nf], &features[i * nf..(i + 1) * nf], row);
        }

        let inv_d = F::from_f64(1.0 / d as f64);
        let mut hidden = vec![h0];
        let mut gate_pre = Vec::with_capacity(c.depth);
        let mut context = Vec::with_capacity(c.depth);
        let mut mix_pre = Vec::with_capacity(c.depth);
        for b in &l.blocks {
            let x = hidden.last().unwrap();
            let mut r = vec![F::default(); d * h];
            let mut ctx = vec![F::default(); h];
            for i in 0..d {
                let ri = &mut r[i * h..(i + 1) * h];
                ri.copy_from_slice(&params[b.gate_bias..b.gate_bias + h]);
                matvec_add(&params[b.gate_weight..b.gate_weight + h * h], &x[i * h..(i + 1) * h], ri);
                for o in 0..h {
                    ctx[o] += swish(ri[o]) * inv_d;
                }
            }
            let mut shared = params[b.mix_bias..b.mix_bias + h].to_vec();
            matvec_add(&params[b.context_weight..b.context_weight + h * h], &ctx, &mut shared);
            let mut z = vec![F::default(); d * h];
            let mut next = x.clone();
            for i in 0..d {
                let zi = &mut z[i * h..(i + 1) * h];
                zi.copy_from_slice(&shared);
                matvec_add(&params[b.mix_weight..b.mix_weight + h * h], &x[i * h..(i + 1) * h], zi);
                for o in 0..h {
                    next[i * h + o] += swish(zi[o]);
                }
            }
            gate_pre.push(r);
            context.push(ctx);
            mix_pre.push(z);
            hidden.push(next);
        }

        let top = hidden.last().unwrap();
        let mut logits = vec![F::default(); d * w];
        for i in 0..d {
            let out = &mut logits[i * w..(i + 1) * w];
            out.copy_from_slice(&params[l.head_bias..l.head_bias + w]);
            matvec_add(&params[l.head_weight..l.head_weight + w * h], &top[i * h..(i + 1) * h], out);
        }
        Cache { features, hidden, gate_pre, context, mix_pre, logits }
    }

    /// Row-major `D × width` logits.
    pub fn forward<F: Real>(
        &self,
        params: &[F],
        input: &[u32],
        mask: &Mask,
        stage: usize,
        step: usize,
    ) -> Result<Vec<F>> {
        self.check(input, mask, stage, step)?;
        if params.len() != self.layout.total {
            return Err(Error::Shape(format!("{} parameters, expected {}", params.len(), self.layout.total)));
        }
        Ok(self.run(params, input, mask, stage, step).logits)
    }

    fn backward<F: Real>(&self, params: &[F], input: &[u32], cache: &Cache<F>, dlogits: &[F], grad: &mut [F]) {
        let c = &self.config;
        let l = &self.layout;
        let (d, h, w, nf) = (c.dims, c.hidden, c.width(), c.features());

        let top = &cache.hidden[c.depth];
        let mut dh = vec![F::default(); d * h];
        for i in 0..d {
            let dy = &dlogits[i * w..(i + 1) * w];
            for (k, &g) in dy.iter().enumerate() {
                grad[l.head_bias + k] += g;
            }
            matvec_backward(
                &params[l.head_weight..l.head_weight + w * h],
                &top[i * h..(i + 1) * h],
                dy,
                &mut grad[l.head_weight..l.head_weight + w * h],
                &mut dh[i * h..(i + 1) * h],
            );
        }

        let inv_d = F::from_f64(1.0 / d as f64);
        for (bi, b) in l.blocks.iter().enumerate().rev() {
            let x = &cache.hidden[bi];
            let r = &cache.gate_pre[bi];
            let z = &cache.mix_pre[bi];
            let ctx = &cache.context[bi];
            let mut dx = dh.clone();
            let mut dz_sum = vec![F::default(); h];
            let mut dz = vec![F::default(); h];
            for i in 0..d {
                for o in 0..h {
                    dz[o] = dh[i * h + o] * swish_grad(z[i * h + o]);
                    grad[b.mix_bias + o] += dz[o];
                    dz_sum[o] += dz[o];
                }
                matvec_backward(
                    &params[b.mix_weight..b.mix_weight + h * h],
                    &x[i * h..(i + 1) * h],
                    &dz,
                    &mut grad[b.mix_weight..b.mix_weight + h * h],
                    &mut dx[i * h..(i + 1) * h],
                );
            }
            let mut dctx = vec![F::default(); h];
            matvec_backward(
                &params[b.context_weight..b.context_weight + h * h],
                ctx,
                &dz_sum,
                &mut grad[b.context_weight..b.context_weight + h * h],
                &mut dctx,
            );
            let mut dr = vec![F::default(); h];
            for i in 0..d {
                for o in 0..h {
                    dr[o] = dctx[o] * inv_d * swish_grad(r[i * h + o]);
                    grad[b.gate_bias + o] += dr[o];
                }
                matvec_backward(
                    &params[b.gate_weight..b.gate_weight + h * h],
                    &x[i * h..(i + 1) * h],
                    &dr,
                    &mut grad[b.gate_weight..b.gate_weight + h * h],
                    &mut dx[i * h..(i + 1) * h],
                );
            }
            dh = dx;
        }

        for i in 0..d {
            let g = &dh[i * h..(i + 1) * h];
            let e = l.embedding + input[i] as usize * h;
            for o in 0..h {
                grad[e + o] += g[o];
                grad[l.input_bias + o] += g[o];
                if let Some(pos) = l.position {
                    grad[pos + i * h + o] += g[o];
                }
            }
            let mut scratch = vec![F::default(); nf];
            matvec_backward(
                &params[l.input_weight..l.input_weight + h * nf],
                &cache.features[i * nf..(i + 1) * nf],
                g,
                &mut grad[l.input_weight..l.input_weight + h * nf],
                &mut scratch,
            );
        }
    }

    /// Loss and gradient of one objective, accumulated into `grad` with
    /// weight `scale`.
    fn example_grad<F: Real>(&self, params: &[F], obj: &Objective, scale: f64, grad: &mut [F]) -> ExampleStats {
        let w = self.config.width();
        let cache = self.run(params, &obj.input, &obj.mask, obj.stage, obj.step);
        let mut dlogits = vec![F::default(); cache.logits.len()];
        let mut bits_sum = 0.0;
        let ln2 = std::f64::consts::LN_2;
        for term in &obj.terms {
            let row: Vec<f64> = cache.logits[term.dim * w..(term.dim + 1) * w].iter().map(|v| v.to_f64()).collect();
            let lse = |r: &std::ops::Range<usize>| {
                let m = row[r.clone()].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                m + row[r.clone()].iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            };
            let lse_parent = lse(&term.parent);
            let lse_target = lse(&term.target);
            bits_sum += (lse_parent - lse_target) / ln2;
            let g = obj.coef * scale / ln2;
            let out = &mut dlogits[term.dim * w..(term.dim + 1) * w];
            for k in term.parent.clone() {
                out[k] += F::from_f64(g * (row[k] - lse_parent).exp());
            }
            for k in term.target.clone() {
                out[k] -= F::from_f64(g * (row[k] - lse_target).exp());
            }
        }
        self.backward(params, &obj.input, &cache, &dlogits, grad);
        let elbo_bits = obj.elbo_coef * bits_sum;
        (obj.coef * bits_sum, obj.component_scale * bits_sum, elbo_bits)
    }

    /// Mean objective over the batch (bits/dim: negative bound plus the
    /// weighted cross-entropy) and its exact gradient.
    pub fn loss_and_grad<F: Real>(&self, params: &[F], batch: &[Objective]) -> Result<LossAndGrad<F>> {
        const CHUNK: usize = 4;
        if params.len() != self.layout.total {
            return Err(Error::Shape(format!("{} parameters, expected {}", params.len(), self.layout.total)));
        }
        for obj in batch {
            self.check(&obj.input, &obj.mask, obj.stage, obj.step)?;
        }
        let scale = 1.0 / batch.len().max(1) as f64;
        // Fixed-size chunks summed in order keep the reduction independent
        // of the thread count.
        let partial: Vec<(Vec<F>, Vec<ExampleStats>)> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = vec![F::default(); self.layout.total];
                let stats = chunk.iter().map(|obj| self.example_grad(params, obj, scale, &mut g)).collect();
                (g, stats)
            })
            .collect();
        let mut grads = vec![F::default(); self.layout.total];
        let mut loss = 0.0;
        let mut elbo = 0.0;
        let mut components = Vec::with_capacity(batch.len());
        for (ci, (g, stats)) in partial.into_iter().enumerate() {
            for (a, b) in grads.iter_mut().zip(&g) {
                *a += *b;
            }
            for (j, (l, comp, e)) in stats.into_iter().enumerate() {
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss(ci * CHUNK + j));
                }
                loss += l * scale;
                elbo += e * scale;
                components.push(comp);
            }
        }
        Ok(LossAndGrad { loss_bits: loss, elbo_bits_per_dim: elbo, grads, components })
    }
}

#[derive(Debug, Clone)]
pub struct LossAndGrad<F> {
    /// Mean training objective in bits/dim.
    pub loss_bits: f64,
    /// Mean negative bound alone, bits/dim.
    pub elbo_bits_per_dim: f64,
    pub grads: Vec<F>,
    /// `L_t` in bits for each batch element, in batch order.
    pub components: Vec<f64>,
}

/// A network bound to a parameter vector, usable wherever a
/// [`ConditionalModel`] is expected.
#[derive(Debug, Clone, Copy)]
pub struct BackboneModel<'a, F> {
    pub network: &'a Network,
    pub params: &'a [F],
}

impl<'a, F: Real> BackboneModel<'a, F> {
    pub fn new(network: &'a Network, params: &'a [F]) -> Self {
        Self { network, params }
    }
}

impl<F: Real> ConditionalModel for BackboneModel<'_, F> {
    fn dims(&self) -> usize {
        self.network.config.dims
    }
    fn classes(&self) -> usize {
        self.network.config.classes
    }
    fn head(&self) -> Head {
        self.network.config.head()
    }
    fn width(&self) -> usize {
        self.network.config.width()
    }
    fn predict(&self, input: &[u32], mask: &Mask, stage: usize, step: usize) -> Vec<f64> {
        let logits =
            self.network.forward(self.params, input, mask, stage, step).expect("inputs validated by the caller");
        let logits: Vec<f64> = logits.into_iter().map(|v| v.to_f64()).collect();
        match self.head() {
            Head::Branch => logits,
            Head::Full => logits.chunks(self.width()).flat_map(softmax).collect(),
        }
    }
}

#[cfg(test)]
mod tests;
