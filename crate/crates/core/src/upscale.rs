//! Depth upscaling: deterministic downscaling maps, their cumulative
//! products, the two parametrizations of the per-stage distributions, and
//! the stage-structured objective and sampler.
//!
//! Stages are 1-based. Stage `s` refines a value at stage `s − 1` by one
//! base-`b` digit, so a stage-`s` value is a multiple of `b^(S−s)` and
//! stage 0 is the all-zero absorbing state.

use std::ops::Range;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::{ConditionalModel, Head};
use crate::oa::ElboEstimate;
use crate::ordering::{mask_lt, sample_permutation, Permutation};
use crate::process::{self, Variant};
use crate::rng::Rng;
use crate::schedule::Schedule;

/// Probability floor applied before the data-parametrization quotient.
pub const PROB_FLOOR: f64 = 1e-10;

/// Downscaling maps stored as column maps (column → row) rather than dense
/// `K × K` matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionSet {
    classes: usize,
    branching: usize,
    stages: usize,
    /// `steps[s - 1]` is `P^(s)`; columns outside the image of the previous
    /// stage are all-zero and map to `None`.
    steps: Vec<Vec<Option<u32>>>,
    /// `cumulative[s - 1]` is `P̄^(s)` for `s` in `1..=S+1`.
    cumulative: Vec<Vec<u32>>,
}

/// `S = ⌈log_b K⌉`, computed exactly in integers.
pub fn stage_count(classes: usize, branching: usize) -> usize {
    let mut s = 0;
    let mut reach: u128 = 1;
    while reach < classes as u128 {
        reach *= branching as u128;
        s += 1;
    }
    s
}

fn lsb(k: u64, base: u64) -> u64 {
    k / base * base
}

impl TransitionSet {
    pub fn new(classes: usize, branching: usize) -> Result<Self> {
        if classes < 2 || branching < 2 || classes > u32::MAX as usize {
            return Err(Error::InvalidTransitions { classes, branching });
        }
        let stages = stage_count(classes, branching);
        let b = branching as u64;
        let pow = |e: usize| b.pow(e as u32);

        // P^(S+1−j) removes the j-th least significant digit from values
        // that already had the lower j−1 digits removed.
        let steps = (1..=stages)
            .map(|s| {
                let j = stages + 1 - s;
                (0..classes as u64).map(|k| (lsb(k, pow(j - 1)) == k).then(|| lsb(k, pow(j)) as u32)).collect()
            })
            .collect::<Vec<Vec<Option<u32>>>>();

        let mut cumulative = vec![Vec::new(); stages + 1];
        cumulative[stages] = (0..classes as u32).collect();
        for s in (1..=stages).rev() {
            let next = &cumulative[s];
            let step = &steps[s - 1];
            cumulative[s - 1] =
                next.iter().map(|&k| step[k as usize].expect("cumulative image lies in the step domain")).collect();
        }
        Ok(Self { classes, branching, stages, steps, cumulative })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    /// Column map of `P^(s)`, `s` in `1..=S`.
    pub fn step_map(&self, s: usize) -> &[Option<u32>] {
        &self.steps[s - 1]
    }

    /// Column map of `P̄^(s)`, `s` in `1..=S+1`.
    pub fn cumulative_map(&self, s: usize) -> &[u32] {
        &self.cumulative[s - 1]
    }

    /// Spacing between sibling values at stage `s`: `b^(S−s)`.
    pub fn spacing(&self, s: usize) -> u64 {
        (self.branching as u64).pow((self.stages - s) as u32)
    }

    /// Whether `value` is a valid stage-`s` value (`s` in `0..=S`).
    pub fn is_stage_value(&self, value: u32, s: usize) -> bool {
        (value as usize) < self.classes && (value as u64).is_multiple_of(self.spacing(s))
    }

    /// Stage-`s` values whose parent at stage `s − 1` is `parent`, in branch
    /// order. Fewer than `b` when the top of the class range is cut off.
    pub fn children(&self, s: usize, parent: u32) -> impl Iterator<Item = u32> + '_ {
        let w = self.spacing(s);
        (0..self.branching as u64)
            .map(move |j| parent as u64 + j * w)
            .take_while(|&c| c < self.classes as u64)
            .map(|c| c as u32)
    }

    pub fn child_count(&self, s: usize, parent: u32) -> usize {
        let w = self.spacing(s);
        let room = (self.classes as u64 - parent as u64).div_ceil(w);
        room.min(self.branching as u64) as usize
    }

    /// Data classes that downscale to `value` at stage `s`: `{k : P̄^(s+1) k = value}`.
    pub fn preimage(&self, s: usize, value: u32) -> Range<usize> {
        let start = value as usize;
        let end = (value as u64 + self.spacing(s)).min(self.classes as u64) as usize;
        start..end
    }
}

/// `x^(s) = P̄^(s+1) x`, per dimension.
pub fn downscale(x: &[u32], s: usize, transitions: &TransitionSet) -> Result<Vec<u32>> {
    if s > transitions.stages() {
        return Err(Error::StageOutOfRange { stage: s, min: 0, max: transitions.stages() });
    }
    let w = transitions.spacing(s) as u32;
    x.iter()
        .map(|&v| {
            if v as usize >= transitions.classes() {
                Err(Error::Shape(format!("class {v} out of range")))
            } else {
                Ok(v / w * w)
            }
        })
        .collect()
}

fn check_parent(parent: u32, s: usize, t: &TransitionSet) -> Result<()> {
    if s == 0 || s > t.stages() {
        return Err(Error::StageOutOfRange { stage: s, min: 1, max: t.stages() });
    }
    if !t.is_stage_value(parent, s - 1) {
        return Err(Error::Shape(format!("{parent} is not a stage-{} value", s - 1)));
    }
    Ok(())
}

/// `θ^(s) = (P^(s)ᵀ x^(s−1) ⊙ P̄^(s+1) θ) / (x^(s−1)ᵀ P̄^(s) θ)`, evaluated
/// through the column maps. `parent` is the class of the one-hot `x^(s−1)`.
pub fn data_parametrization(theta: &[f64], parent: u32, s: usize, t: &TransitionSet) -> Result<Vec<f64>> {
    check_parent(parent, s, t)?;
    if theta.len() != t.classes() {
        return Err(Error::Shape(format!("θ has {} entries, expected {}", theta.len(), t.classes())));
    }
    let finer = t.cumulative_map(s + 1);
    let coarser = t.cumulative_map(s);
    let step = t.step_map(s);

    let mut pushed = vec![0.0; t.classes()];
    let mut denominator = 0.0;
    for (k, &p) in theta.iter().enumerate() {
        let p = p.max(PROB_FLOOR);
        pushed[finer[k] as usize] += p;
        if coarser[k] == parent {
            denominator += p;
        }
    }
    if denominator <= 0.0 {
        return Err(Error::ZeroMass(parent));
    }
    Ok(pushed
        .iter()
        .zip(step)
        .map(|(&mass, row)| if *row == Some(parent) { mass / denominator } else { 0.0 })
        .collect())
}

/// Softmax over the branch logits, scattered onto the children of `parent`.
/// Logits past the number of valid children are ignored.
pub fn direct_parametrization(logits: &[f64], parent: u32, s: usize, t: &TransitionSet) -> Result<Vec<f64>> {
    check_parent(parent, s, t)?;
    if logits.len() != t.branching() {
        return Err(Error::Shape(format!("{} branch logits, expected {}", logits.len(), t.branching())));
    }
    let n = t.child_count(s, parent);
    let probs = softmax(&logits[..n]);
    let mut out = vec![0.0; t.classes()];
    for (c, p) in t.children(s, parent).zip(probs) {
        out[c as usize] = p;
    }
    Ok(out)
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

/// Branch probabilities (children of `parent`, in branch order) from one
/// network row, under whichever parametrization the head implies.
pub fn branch_probabilities(row: &[f64], head: Head, parent: u32, s: usize, t: &TransitionSet) -> Result<Vec<f64>> {
    let full = match head {
        Head::Full => data_parametrization(row, parent, s, t)?,
        Head::Branch => direct_parametrization(row, parent, s, t)?,
    };
    Ok(t.children(s, parent).map(|c| full[c as usize]).collect())
}

/// Upscale objective at fixed `(s, t, σ)`. The returned value is already
/// scaled by `S` to account for the uniformly drawn stage.
pub fn upscale_elbo_at<M: ConditionalModel>(
    x: &[u32],
    model: &M,
    transitions: &TransitionSet,
    s: usize,
    t: usize,
    sigma: &Permutation,
) -> Result<ElboEstimate> {
    let d = x.len();
    let stages = transitions.stages();
    if s == 0 || s > stages {
        return Err(Error::StageOutOfRange { stage: s, min: 1, max: stages });
    }
    if sigma.dims() != d || model.dims() != d {
        return Err(Error::Shape(format!("datapoint has {d} dims")));
    }
    let current = downscale(x, s, transitions)?;
    let previous = downscale(x, s - 1, transitions)?;
    let mask = mask_lt(sigma, t)?;
    let input: Vec<u32> = (0..d).map(|i| if mask.get(i) { current[i] } else { previous[i] }).collect();
    let out = model.predict(&input, &mask, s, t);
    let w = model.width();
    let head = model.head();

    let mut log_sum = 0.0;
    for i in (0..d).filter(|&i| !mask.get(i)) {
        let row = &out[i * w..(i + 1) * w];
        if head == Head::Full {
            process::check_row(row, i)?;
        }
        let probs = branch_probabilities(row, head, previous[i], s, transitions)?;
        let j = ((current[i] - previous[i]) as u64 / transitions.spacing(s)) as usize;
        log_sum += probs[j].log2();
    }
    let component = -log_sum / (d - t + 1) as f64;
    Ok(ElboEstimate {
        value_bits: -(stages as f64) * d as f64 * component,
        stage: s,
        step: t,
        component_bits: component,
        ce_bits: -log_sum,
    })
}

/// Draws `s ~ U(1..S)`, `t ~ U(1..D)` and `σ`, then evaluates one network call.
pub fn upscale_elbo_step<M: ConditionalModel>(
    x: &[u32],
    model: &M,
    transitions: &TransitionSet,
    rng: &mut Rng,
) -> Result<ElboEstimate> {
    let d = x.len();
    if d == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let s = rng.random_range(1..=transitions.stages());
    let t = rng.random_range(1..=d);
    let sigma = sample_permutation(rng, d)?;
    upscale_elbo_at(x, model, transitions, s, t, &sigma)
}

/// Stage-by-stage sampling with a fresh order per stage; `D · S` calls.
pub fn upscale_sample<M: ConditionalModel>(model: &M, transitions: &TransitionSet, rng: &mut Rng) -> Result<Vec<u32>> {
    let d = model.dims();
    let orders = (0..transitions.stages()).map(|_| sample_permutation(rng, d)).collect::<Result<Vec<_>>>()?;
    let schedules = vec![Schedule::sequential(d); transitions.stages()];
    let variant = Variant::Upscale(transitions.clone());
    process::sample_with(model, &variant, &orders, &schedules, rng)
}

/// `Σ_s log₂ p(x^(s) | x^(s−1))` along a fixed order in every stage.
pub fn exact_stagewise_order_loglik<M: ConditionalModel>(
    x: &[u32],
    model: &M,
    transitions: &TransitionSet,
    sigma: &Permutation,
) -> Result<f64> {
    let variant = Variant::Upscale(transitions.clone());
    process::order_loglik(x, model, &variant, sigma)
}

/// Mean over all `D!` orders of [`exact_stagewise_order_loglik`]: the bound
/// that [`upscale_elbo_step`] estimates. Oracle only.
pub fn exact_stagewise_loglik<M: ConditionalModel>(x: &[u32], model: &M, transitions: &TransitionSet) -> Result<f64> {
    let orders = crate::oa::all_permutations(x.len())?;
    let mut total = 0.0;
    for sigma in &orders {
        total += exact_stagewise_order_loglik(x, model, transitions, sigma)?;
    }
    Ok(total / orders.len() as f64)
}
