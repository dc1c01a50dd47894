use std::ops::Range;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::Head;
use crate::ordering::{absorb_input, mask_lt, sample_permutation, Mask, Permutation};
use crate::process::Variant;
use crate::rng::Rng;
use crate::upscale::downscale;

/// One conditional term: `log p = lse(logits[target]) − lse(logits[parent])`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub dim: usize,
    pub target: Range<usize>,
    pub parent: Range<usize>,
}

/// A single-call training example: network input plus the terms it scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub input: Vec<u32>,
    pub mask: Mask,
    pub stage: usize,
    pub step: usize,
    pub terms: Vec<Term>,
    /// Per-dimension weight of `Σ bits` in the training objective.
    pub coef: f64,
    /// Per-dimension weight of `Σ bits` in the negative bound alone.
    pub elbo_coef: f64,
    /// Maps `Σ bits` to the loss component `L_t`.
    pub component_scale: f64,
}

impl Objective {
    /// The example at fixed `(s, t, σ)`. `ce_weight` adds the unweighted
    /// cross-entropy over the masked dimensions to the objective.
    #[allow(clippy::too_many_arguments)]
    pub fn at(
        variant: &Variant,
        head: Head,
        classes: usize,
        x: &[u32],
        stage: usize,
        step: usize,
        sigma: &Permutation,
        ce_weight: f64,
    ) -> Result<Self> {
        let d = x.len();
        let stages = variant.stages();
        if stage == 0 || stage > stages {
            return Err(Error::StageOutOfRange { stage, min: 1, max: stages });
        }
        if step == 0 || step > d {
            return Err(Error::StepOutOfRange { step, max: d });
        }
        if sigma.dims() != d {
            return Err(Error::Shape(format!("order covers {} dims, datapoint {d}", sigma.dims())));
        }
        let mask = mask_lt(sigma, step)?;
        let open = (0..d).filter(|&i| !mask.get(i));
        let (input, terms) = match variant {
            Variant::OrderAgnostic { absorbing } => {
                if head != Head::Full {
                    return Err(Error::Shape("order-agnostic models need a full head".into()));
                }
                let input = absorb_input(x, &mask, absorbing)?;
                if let Some(&bad) = x.iter().find(|&&v| v as usize >= classes) {
                    return Err(Error::Shape(format!("class {bad} out of range")));
                }
                let terms = open
                    .map(|i| Term { dim: i, target: x[i] as usize..x[i] as usize + 1, parent: 0..classes })
                    .collect::<Vec<_>>();
                (input, terms)
            }
            Variant::Upscale(t) => {
                let current = downscale(x, stage, t)?;
                let previous = downscale(x, stage - 1, t)?;
                let input = (0..d).map(|i| if mask.get(i) { current[i] } else { previous[i] }).collect();
                let terms = open
                    .map(|i| match head {
                        Head::Full => Term {
                            dim: i,
                            target: t.preimage(stage, current[i]),
                            parent: t.preimage(stage - 1, previous[i]),
                        },
                        Head::Branch => {
                            let j = ((current[i] - previous[i]) as u64 / t.spacing(stage)) as usize;
                            Term { dim: i, target: j..j + 1, parent: 0..t.child_count(stage, previous[i]) }
                        }
                    })
                    .collect();
                (input, terms)
            }
        };
        let remaining = (d - step + 1) as f64;
        let elbo_coef = stages as f64 / remaining;
        Ok(Self {
            input,
            mask,
            stage,
            step,
            terms,
            coef: elbo_coef + ce_weight / d as f64,
            elbo_coef,
            component_scale: 1.0 / remaining,
        })
    }

    /// Draws `s` (upscale only), then `t`, then `σ`, in the same order as the
    /// stochastic bound estimators.
    pub fn sample(
        variant: &Variant,
        head: Head,
        classes: usize,
        x: &[u32],
        ce_weight: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let d = x.len();
        if d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        let stage = match variant {
            Variant::OrderAgnostic { .. } => 1,
            Variant::Upscale(t) => rng.random_range(1..=t.stages()),
        };
        let step = rng.random_range(1..=d);
        let sigma = sample_permutation(rng, d)?;
        Self::at(variant, head, classes, x, stage, step, &sigma, ce_weight)
    }
}
