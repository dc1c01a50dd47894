//! The generative walk shared by sampling, exact likelihood evaluation and
//! the codec: stages outer, schedule steps inner, one network call per step,
//! every dimension of a step drawn independently from that call.

use crate::error::{Error, Result};
use crate::model::{ConditionalModel, Head};
use crate::ordering::{absorb_input, mask_lt, AbsorbingState, Permutation};
use crate::rng::{categorical, Rng};
use crate::schedule::Schedule;
use crate::upscale::{branch_probabilities, downscale, TransitionSet};

/// Which generative process a model is trained for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Variant {
    OrderAgnostic { absorbing: AbsorbingState },
    Upscale(TransitionSet),
}

impl Variant {
    pub fn order_agnostic() -> Self {
        Variant::OrderAgnostic { absorbing: AbsorbingState::default() }
    }

    pub fn stages(&self) -> usize {
        match self {
            Variant::OrderAgnostic { .. } => 1,
            Variant::Upscale(t) => t.stages(),
        }
    }

    pub fn transitions(&self) -> Option<&TransitionSet> {
        match self {
            Variant::OrderAgnostic { .. } => None,
            Variant::Upscale(t) => Some(t),
        }
    }

    /// The state before any variable is generated.
    pub fn initial_state(&self, dims: usize) -> Vec<u32> {
        match self {
            Variant::OrderAgnostic { absorbing } => absorbing.fill(dims),
            Variant::Upscale(_) => vec![0; dims],
        }
    }

    /// The stage-`s` target of datapoint `x`.
    pub fn target(&self, x: &[u32], s: usize) -> Result<Vec<u32>> {
        match self {
            Variant::OrderAgnostic { .. } => Ok(x.to_vec()),
            Variant::Upscale(t) => downscale(x, s, t),
        }
    }
}

/// Distribution of one dimension over its admissible next values
/// `base + j · spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub base: u32,
    pub spacing: u32,
    pub probs: Vec<f64>,
}

impl Choice {
    pub fn value(&self, j: usize) -> u32 {
        self.base + j as u32 * self.spacing
    }

    pub fn index_of(&self, value: u32) -> Option<usize> {
        if value < self.base || !(value - self.base).is_multiple_of(self.spacing) {
            return None;
        }
        let j = ((value - self.base) / self.spacing) as usize;
        (j < self.probs.len()).then_some(j)
    }
}

pub(crate) fn check_row(row: &[f64], dim: usize) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < 0.0) {
        return Err(Error::Unnormalized { row: dim, sum });
    }
    Ok(())
}

/// One network call on `state`, returning the choices of `dims`.
pub fn step_choices<M: ConditionalModel>(
    model: &M,
    variant: &Variant,
    state: &[u32],
    sigma: &Permutation,
    stage: usize,
    step: usize,
    dims: &[usize],
) -> Result<Vec<Choice>> {
    let mask = mask_lt(sigma, step)?;
    let w = model.width();
    match variant {
        Variant::OrderAgnostic { absorbing } => {
            if model.head() != Head::Full {
                return Err(Error::Shape("order-agnostic models need a full head".into()));
            }
            let input = absorb_input(state, &mask, absorbing)?;
            let out = model.predict(&input, &mask, stage, step);
            dims.iter()
                .map(|&d| {
                    let row = &out[d * w..(d + 1) * w];
                    check_row(row, d)?;
                    Ok(Choice { base: 0, spacing: 1, probs: row.to_vec() })
                })
                .collect()
        }
        Variant::Upscale(t) => {
            let out = model.predict(state, &mask, stage, step);
            dims.iter()
                .map(|&d| {
                    let row = &out[d * w..(d + 1) * w];
                    if model.head() == Head::Full {
                        check_row(row, d)?;
                    }
                    let probs = branch_probabilities(row, model.head(), state[d], stage, t)?;
                    Ok(Choice { base: state[d], spacing: t.spacing(stage) as u32, probs })
                })
                .collect()
        }
    }
}

/// Decides each dimension's value during a walk.
pub trait Visitor {
    /// Returns the index into `choice` to commit for `dim`.
    fn choose(&mut self, stage: usize, dim: usize, choice: &Choice) -> Result<usize>;

    /// Called once per network call, before any of its dimensions are chosen.
    fn network_call(&mut self, _stage: usize, _step: usize) {}

    fn stage_done(&mut self, _stage: usize, _state: &[u32]) {}
}

/// Walks the generative process. `orders[s-1]` and `schedules[s-1]` drive
/// stage `s`; a single entry is reused for every stage.
pub fn walk<M: ConditionalModel, V: Visitor>(
    model: &M,
    variant: &Variant,
    orders: &[Permutation],
    schedules: &[Schedule],
    visitor: &mut V,
) -> Result<Vec<u32>> {
    let d = model.dims();
    let stages = variant.stages();
    for list_len in [orders.len(), schedules.len()] {
        if list_len != 1 && list_len != stages {
            return Err(Error::Shape(format!("{list_len} per-stage entries for {stages} stages")));
        }
    }
    let mut state = variant.initial_state(d);
    for stage in 1..=stages {
        let sigma = &orders[(stage - 1).min(orders.len() - 1)];
        let schedule = &schedules[(stage - 1).min(schedules.len() - 1)];
        if sigma.dims() != d || schedule.dims() != d {
            return Err(Error::Shape(format!("order/schedule do not cover {d} dims")));
        }
        let by_rank = sigma.dims_in_order();
        for (start, end) in schedule.segments() {
            let dims = &by_rank[start..end];
            visitor.network_call(stage, start + 1);
            let choices = step_choices(model, variant, &state, sigma, stage, start + 1, dims)?;
            for (&dim, choice) in dims.iter().zip(&choices) {
                let j = visitor.choose(stage, dim, choice)?;
                if j >= choice.probs.len() {
                    return Err(Error::Shape(format!("choice {j} out of range")));
                }
                state[dim] = choice.value(j);
            }
        }
        visitor.stage_done(stage, &state);
    }
    Ok(state)
}

struct Sampler<'r> {
    rng: &'r mut Rng,
}

impl Visitor for Sampler<'_> {
    fn choose(&mut self, _: usize, _: usize, choice: &Choice) -> Result<usize> {
        Ok(categorical(self.rng, &choice.probs))
    }
}

/// Ancestral sampling along the given orders and schedules.
pub fn sample_with<M: ConditionalModel>(
    model: &M,
    variant: &Variant,
    orders: &[Permutation],
    schedules: &[Schedule],
    rng: &mut Rng,
) -> Result<Vec<u32>> {
    walk(model, variant, orders, schedules, &mut Sampler { rng })
}

/// Replays a known datapoint, accumulating `log₂` probabilities.
pub(crate) struct Scorer {
    pub targets: Vec<Vec<u32>>,
    pub log2_sum: f64,
}

impl Visitor for Scorer {
    fn choose(&mut self, stage: usize, dim: usize, choice: &Choice) -> Result<usize> {
        let v = self.targets[stage - 1][dim];
        let j = choice.index_of(v).ok_or_else(|| Error::Shape(format!("value {v} unreachable at stage {stage}")))?;
        self.log2_sum += choice.probs[j].log2();
        Ok(j)
    }
}

pub(crate) fn stage_targets(x: &[u32], variant: &Variant) -> Result<Vec<Vec<u32>>> {
    (1..=variant.stages()).map(|s| variant.target(x, s)).collect()
}

/// `log₂ p(x | σ)` under a (possibly parallel) schedule.
pub fn scheduled_loglik<M: ConditionalModel>(
    x: &[u32],
    model: &M,
    variant: &Variant,
    sigma: &Permutation,
    schedules: &[Schedule],
) -> Result<f64> {
    if x.len() != model.dims() {
        return Err(Error::Shape(format!("datapoint has {} dims, model {}", x.len(), model.dims())));
    }
    let mut scorer = Scorer { targets: stage_targets(x, variant)?, log2_sum: 0.0 };
    walk(model, variant, std::slice::from_ref(sigma), schedules, &mut scorer)?;
    Ok(scorer.log2_sum)
}

/// `log₂ p(x | σ)` with one variable per step in every stage.
pub fn order_loglik<M: ConditionalModel>(x: &[u32], model: &M, variant: &Variant, sigma: &Permutation) -> Result<f64> {
    scheduled_loglik(x, model, variant, sigma, &[Schedule::sequential(x.len())])
}
