//! Order-agnostic ARDMs: the single-step objective, ancestral sampling,
//! exact likelihood oracles and the running loss-component ledger.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::ConditionalModel;
use crate::ordering::{absorb_input, mask_lt, sample_permutation, AbsorbingState, Permutation};
use crate::process::{self, Variant};
use crate::rng::Rng;
use crate::schedule::Schedule;

/// Largest `D` the exhaustive oracles accept.
pub const MAX_ORACLE_DIMS: usize = 6;

/// One stochastic evaluation of the bound. All quantities are in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboEstimate {
    /// Unbiased estimate of the bound on `log₂ p(x)`; negative.
    pub value_bits: f64,
    pub stage: usize,
    pub step: usize,
    /// The loss component `L_t`: mean bits per masked dimension.
    pub component_bits: f64,
    /// Unweighted cross-entropy over the masked dimensions.
    pub ce_bits: f64,
}

/// The objective at a fixed step and order.
pub fn elbo_at<M: ConditionalModel>(
    x: &[u32],
    model: &M,
    absorbing: &AbsorbingState,
    sigma: &Permutation,
    t: usize,
) -> Result<ElboEstimate> {
    let d = x.len();
    if sigma.dims() != d || model.dims() != d {
        return Err(Error::Shape(format!("datapoint has {d} dims, model {}", model.dims())));
    }
    if let Some(&bad) = x.iter().find(|&&v| v as usize >= model.classes()) {
        return Err(Error::Shape(format!("class {bad} out of range")));
    }
    let mask = mask_lt(sigma, t)?;
    if t > d {
        return Err(Error::StepOutOfRange { step: t, max: d });
    }
    let input = absorb_input(x, &mask, absorbing)?;
    let out = model.predict(&input, &mask, 1, t);
    let k = model.width();
    let mut log_sum = 0.0;
    for i in (0..d).filter(|&i| !mask.get(i)) {
        let row = &out[i * k..(i + 1) * k];
        process::check_row(row, i)?;
        log_sum += row[x[i] as usize].log2();
    }
    let component = -log_sum / (d - t + 1) as f64;
    Ok(ElboEstimate {
        value_bits: -(d as f64) * component,
        stage: 1,
        step: t,
        component_bits: component,
        ce_bits: -log_sum,
    })
}

/// Draws `t ~ U(1..D)` and `σ ~ U(S_D)` and evaluates the objective with a
/// single network call.
pub fn elbo_step<M: ConditionalModel>(
    x: &[u32],
    model: &M,
    absorbing: &AbsorbingState,
    rng: &mut Rng,
) -> Result<ElboEstimate> {
    let d = x.len();
    if d == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let t = rng.random_range(1..=d);
    let sigma = sample_permutation(rng, d)?;
    elbo_at(x, model, absorbing, &sigma, t)
}

/// Generates one variable per step; draws `σ` unless one is given.
pub fn sample<M: ConditionalModel>(
    model: &M,
    absorbing: &AbsorbingState,
    rng: &mut Rng,
    sigma: Option<&Permutation>,
) -> Result<Vec<u32>> {
    let d = model.dims();
    let sigma = match sigma {
        Some(s) => s.clone(),
        None => sample_permutation(rng, d)?,
    };
    let variant = Variant::OrderAgnostic { absorbing: absorbing.clone() };
    process::sample_with(model, &variant, &[sigma], &[Schedule::sequential(d)], rng)
}

/// `Σ_t log₂ p(x_{σ(t)} | x_{σ(<t)})`: `D` sequential network calls.
pub fn exact_order_loglik<M: ConditionalModel>(
    x: &[u32],
    model: &M,
    absorbing: &AbsorbingState,
    sigma: &Permutation,
) -> Result<f64> {
    let variant = Variant::OrderAgnostic { absorbing: absorbing.clone() };
    process::order_loglik(x, model, &variant, sigma)
}

/// All `D!` permutations in lexicographic order of their order lists.
pub fn all_permutations(dims: usize) -> Result<Vec<Permutation>> {
    if dims == 0 {
        return Err(Error::InvalidDimension(0));
    }
    if dims > 8 {
        return Err(Error::TooLarge(format!("{dims}! permutations")));
    }
    fn extend(prefix: &mut Vec<u32>, used: &mut [bool], out: &mut Vec<Permutation>) {
        if prefix.len() == used.len() {
            out.push(Permutation::from_order(prefix).expect("complete order"));
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i as u32 + 1);
                extend(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::new(), &mut vec![false; dims], &mut out);
    Ok(out)
}

/// Mean of [`exact_order_loglik`] over all `D!` orders: the exact
/// order-agnostic bound. Oracle only, `D ≤ 6`.
pub fn exact_oa_loglik<M: ConditionalModel>(x: &[u32], model: &M, absorbing: &AbsorbingState) -> Result<f64> {
    if x.len() > MAX_ORACLE_DIMS {
        return Err(Error::TooLarge(format!("exact bound needs D ≤ {MAX_ORACLE_DIMS}, got {}", x.len())));
    }
    let orders = all_permutations(x.len())?;
    let mut total = 0.0;
    for sigma in &orders {
        total += exact_order_loglik(x, model, absorbing, sigma)?;
    }
    Ok(total / orders.len() as f64)
}

/// Exponential moving averages of the per-step loss components `L_t`
/// (bits per dimension generated at step `t`), one row per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LossLedger {
    dims: usize,
    stages: usize,
    momentum: f64,
    components: Vec<f64>,
    counts: Vec<u64>,
}

/// Default smoothing of the ledger.
pub const LEDGER_MOMENTUM: f64 = 0.99;

impl LossLedger {
    pub fn new(dims: usize, stages: usize, momentum: f64) -> Result<Self> {
        if dims == 0 || stages == 0 {
            return Err(Error::InvalidDimension(dims.min(stages)));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("ledger momentum {momentum} outside [0, 1)")));
        }
        Ok(Self { dims, stages, momentum, components: vec![0.0; dims * stages], counts: vec![0; dims * stages] })
    }

    pub fn from_parts(
        dims: usize,
        stages: usize,
        momentum: f64,
        components: Vec<f64>,
        counts: Vec<u64>,
    ) -> Result<Self> {
        let mut ledger = Self::new(dims, stages, momentum)?;
        if components.len() != dims * stages || counts.len() != dims * stages {
            return Err(Error::Shape("ledger length does not match dims × stages".into()));
        }
        ledger.components = components;
        ledger.counts = counts;
        Ok(ledger)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Components of one stage, indexed by step − 1.
    pub fn stage(&self, stage: usize) -> &[f64] {
        &self.components[(stage - 1) * self.dims..stage * self.dims]
    }

    pub fn is_complete(&self) -> bool {
        self.counts.iter().all(|&c| c > 0)
    }

    /// Folds one observation of `L_t` at `(stage, step)` into the average.
    /// The first observation at a slot initializes it.
    pub fn update(&mut self, stage: usize, step: usize, observed_bits: f64) -> Result<()> {
        if stage == 0 || stage > self.stages {
            return Err(Error::StageOutOfRange { stage, min: 1, max: self.stages });
        }
        if step == 0 || step > self.dims {
            return Err(Error::StepOutOfRange { step, max: self.dims });
        }
        let i = (stage - 1) * self.dims + step - 1;
        self.components[i] = if self.counts[i] == 0 {
            observed_bits
        } else {
            self.momentum * self.components[i] + (1.0 - self.momentum) * observed_bits
        };
        self.counts[i] += 1;
        Ok(())
    }

    /// Stage-by-stage descending copy, the scheduler's input.
    pub fn sorted(&self) -> Vec<f64> {
        let bounds: Vec<usize> = (1..self.stages).map(|s| s * self.dims).collect();
        crate::schedule::sort_components(&self.components, &bounds)
    }

    /// Fraction of adjacent raw pairs (within a stage) that increase over `t`.
    pub fn inversion_fraction(&self) -> f64 {
        let mut inversions = 0;
        let mut pairs = 0;
        for s in 1..=self.stages {
            for w in self.stage(s).windows(2) {
                pairs += 1;
                if w[1] > w[0] {
                    inversions += 1;
                }
            }
        }
        if pairs == 0 {
            0.0
        } else {
            inversions as f64 / pairs as f64
        }
    }
}
