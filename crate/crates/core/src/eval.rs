//! Negative log-likelihood estimates in bits/dim.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ConditionalModel;
use crate::oa::{elbo_at, elbo_step, exact_oa_loglik, MAX_ORACLE_DIMS};
use crate::ordering::sample_permutation;
use crate::process::Variant;
use crate::rng::stream;
use crate::upscale::{exact_stagewise_loglik, upscale_elbo_at, upscale_elbo_step};

/// Mean and standard error over `count` single-call estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub bits_per_dim: f64,
    pub stderr: f64,
    pub count: usize,
}

fn check_shapes<M: ConditionalModel>(model: &M, data: &Dataset) -> Result<()> {
    if data.dims() != model.dims() || data.classes() != model.classes() {
        return Err(Error::Shape(format!(
            "dataset is {}×{}, model {}×{}",
            data.dims(),
            data.classes(),
            model.dims(),
            model.classes()
        )));
    }
    if data.is_empty() {
        return Err(Error::Shape("empty dataset".into()));
    }
    Ok(())
}

/// Stochastic bound over `passes` passes; record `i` of pass `p` draws from
/// stream `p·N + i` of `seed`.
pub fn evaluate<M: ConditionalModel + Sync>(
    model: &M,
    variant: &Variant,
    data: &Dataset,
    passes: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_shapes(model, data)?;
    let n = data.len();
    let d = data.dims() as f64;
    let values = (0..passes * n)
        .into_par_iter()
        .map(|k| {
            let x = data.record(k % n);
            let mut rng = stream(seed, k as u64);
            let e = match variant {
                Variant::OrderAgnostic { absorbing } => elbo_step(x, model, absorbing, &mut rng)?,
                Variant::Upscale(t) => upscale_elbo_step(x, model, t, &mut rng)?,
            };
            Ok(-e.value_bits / d)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(summarize(&values))
}

pub fn summarize(values: &[f64]) -> EvalReport {
    let count = values.len();
    let mean = values.iter().sum::<f64>() / count.max(1) as f64;
    let var = if count > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64 } else { 0.0 };
    EvalReport { bits_per_dim: mean, stderr: (var / count.max(1) as f64).sqrt(), count }
}

/// Exact order-averaged likelihood; `D ≤ 6`.
pub fn exact_nll<M: ConditionalModel + Sync>(model: &M, variant: &Variant, data: &Dataset) -> Result<f64> {
    check_shapes(model, data)?;
    if data.dims() > MAX_ORACLE_DIMS {
        return Err(Error::TooLarge(format!("exact evaluation needs D ≤ {MAX_ORACLE_DIMS}")));
    }
    let d = data.dims() as f64;
    let values = data
        .records()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|x| {
            let ll = match variant {
                Variant::OrderAgnostic { absorbing } => exact_oa_loglik(x, model, absorbing)?,
                Variant::Upscale(t) => exact_stagewise_loglik(x, model, t)?,
            };
            Ok(-ll / d)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean `L_t` per `(stage, step)` over the dataset, one random order per
/// record and slot. Stage-major, `S·D` entries.
pub fn estimate_components<M: ConditionalModel + Sync>(
    model: &M,
    variant: &Variant,
    data: &Dataset,
    seed: u64,
) -> Result<Vec<f64>> {
    check_shapes(model, data)?;
    let d = data.dims();
    let stages = variant.stages();
    let per_record = data
        .records()
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(i, x)| {
            let mut rng = stream(seed, i as u64);
            let mut row = Vec::with_capacity(stages * d);
            for s in 1..=stages {
                for t in 1..=d {
                    let sigma = sample_permutation(&mut rng, d)?;
                    let e = match variant {
                        Variant::OrderAgnostic { absorbing } => elbo_at(x, model, absorbing, &sigma, t)?,
                        Variant::Upscale(tr) => upscale_elbo_at(x, model, tr, s, t, &sigma)?,
                    };
                    row.push(e.component_bits);
                }
            }
            Ok(row)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut mean = vec![0.0; stages * d];
    for row in &per_record {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / per_record.len() as f64;
        }
    }
    Ok(mean)
}
