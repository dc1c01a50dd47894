//! Lossless compression with a trained model: one rANS stream per file, the
//! generative walk replayed identically by encoder and decoder.

mod file;
mod rans;

pub(crate) use file::Reader;
pub use file::{CompressedFile, MAGIC, VERSION};
pub use rans::{
    quantize, rans_decode, rans_encode, FrequencyTable, RansDecoder, RansEncoder, DEFAULT_PRECISION, MAX_PRECISION,
    MIN_PRECISION,
};

use crate::error::{Error, Result};
use crate::model::ConditionalModel;
use crate::ordering::{sample_permutation, Permutation};
use crate::process::{order_loglik, stage_targets, walk, Choice, Variant, Visitor};
use crate::rng::Rng;
use crate::schedule::Schedule;

/// Accounting for one compress or decompress call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CodecReport {
    /// `−Σ log₂ θ` of the coded symbols under the unquantized model.
    pub ideal_bits: f64,
    /// The same sum under the quantized tables.
    pub table_bits: f64,
    pub network_calls: usize,
    pub payload_bits: usize,
}

/// Everything the encoder and decoder must agree on besides the model.
#[derive(Debug, Clone, PartialEq)]
pub struct CodingPlan {
    pub permutation: Permutation,
    /// One schedule, or one per stage.
    pub schedules: Vec<Schedule>,
    pub precision: u32,
    pub model_hash: u64,
}

struct Encoding<'a> {
    targets: Vec<Vec<u32>>,
    encoder: &'a mut RansEncoder,
    precision: u32,
    report: &'a mut CodecReport,
}

fn table_for(choice: &Choice, precision: u32, dim: usize) -> Result<FrequencyTable> {
    quantize(&choice.probs, precision).map_err(|e| match e {
        Error::Unnormalized { sum, .. } => Error::Unnormalized { row: dim, sum },
        e => e,
    })
}

impl Visitor for Encoding<'_> {
    fn choose(&mut self, stage: usize, dim: usize, choice: &Choice) -> Result<usize> {
        let v = self.targets[stage - 1][dim];
        let j = choice.index_of(v).ok_or_else(|| Error::Shape(format!("value {v} unreachable at stage {stage}")))?;
        let table = table_for(choice, self.precision, dim)?;
        self.report.ideal_bits -= choice.probs[j].log2();
        self.report.table_bits += table.bits(j);
        self.encoder.push(j, &table)?;
        Ok(j)
    }

    fn network_call(&mut self, _: usize, _: usize) {
        self.report.network_calls += 1;
    }
}

struct Decoding<'a, 'b> {
    decoder: &'a mut RansDecoder<'b>,
    precision: u32,
    report: &'a mut CodecReport,
}

impl Visitor for Decoding<'_, '_> {
    fn choose(&mut self, _: usize, dim: usize, choice: &Choice) -> Result<usize> {
        let table = table_for(choice, self.precision, dim)?;
        let j = self.decoder.decode(&table)?;
        self.report.ideal_bits -= choice.probs[j].log2();
        self.report.table_bits += table.bits(j);
        Ok(j)
    }

    fn network_call(&mut self, _: usize, _: usize) {
        self.report.network_calls += 1;
    }
}

fn header_fields<M: ConditionalModel>(model: &M, variant: &Variant) -> Result<(u16, u16)> {
    let (b, s) = match variant {
        Variant::OrderAgnostic { .. } => (0, 1),
        Variant::Upscale(t) => {
            if t.classes() != model.classes() {
                return Err(Error::Shape(format!(
                    "transitions cover {} classes, model {}",
                    t.classes(),
                    model.classes()
                )));
            }
            (t.branching(), t.stages())
        }
    };
    let too_large = |what: &str| Error::TooLarge(format!("{what} does not fit the header"));
    Ok((u16::try_from(b).map_err(|_| too_large("branching"))?, u16::try_from(s).map_err(|_| too_large("stage count"))?))
}

fn expand_schedules(schedules: &[Schedule], stages: usize, dims: usize) -> Result<Vec<Schedule>> {
    let expanded: Vec<Schedule> = match schedules.len() {
        1 => vec![schedules[0].clone(); stages],
        n if n == stages => schedules.to_vec(),
        n => return Err(Error::Shape(format!("{n} schedules for {stages} stages"))),
    };
    if expanded.iter().any(|s| s.dims() != dims || s.budget() != expanded[0].budget()) {
        return Err(Error::Shape("schedules must cover D with a common budget".into()));
    }
    Ok(expanded)
}

/// Codes `records` back to back into one stream.
pub fn compress_many<M: ConditionalModel>(
    records: &[Vec<u32>],
    model: &M,
    variant: &Variant,
    plan: &CodingPlan,
) -> Result<(CompressedFile, CodecReport)> {
    let d = model.dims();
    let (branching, stages) = header_fields(model, variant)?;
    if !(MIN_PRECISION..=MAX_PRECISION).contains(&plan.precision) {
        return Err(Error::Precision { classes: model.classes(), precision: plan.precision });
    }
    if plan.permutation.dims() != d {
        return Err(Error::Shape(format!("order covers {} dims, model {d}", plan.permutation.dims())));
    }
    let schedules = expand_schedules(&plan.schedules, stages as usize, d)?;
    let mut encoder = RansEncoder::new();
    let mut report = CodecReport::default();
    for x in records {
        if x.len() != d {
            return Err(Error::Shape(format!("record has {} dims, model {d}", x.len())));
        }
        if let Some(&bad) = x.iter().find(|&&v| v as usize >= model.classes()) {
            return Err(Error::Shape(format!("class {bad} out of range")));
        }
        let mut visitor = Encoding {
            targets: stage_targets(x, variant)?,
            encoder: &mut encoder,
            precision: plan.precision,
            report: &mut report,
        };
        walk(model, variant, std::slice::from_ref(&plan.permutation), &schedules, &mut visitor)?;
    }
    let payload = encoder.finish();
    report.payload_bits = 8 * payload.len();
    let file = CompressedFile {
        dims: d as u32,
        classes: model.classes() as u32,
        branching,
        stages,
        precision: plan.precision as u16,
        model_hash: plan.model_hash,
        schedules,
        permutation: plan.permutation.clone(),
        payload,
    };
    Ok((file, report))
}

pub fn compress<M: ConditionalModel>(
    x: &[u32],
    model: &M,
    variant: &Variant,
    plan: &CodingPlan,
) -> Result<(CompressedFile, CodecReport)> {
    compress_many(&[x.to_vec()], model, variant, plan)
}

/// Decodes `count` records; refuses files made for a different model.
pub fn decompress_many<M: ConditionalModel>(
    file: &CompressedFile,
    model: &M,
    variant: &Variant,
    model_hash: u64,
    count: usize,
) -> Result<(Vec<Vec<u32>>, CodecReport)> {
    if file.model_hash != model_hash {
        return Err(Error::ModelMismatch { file: file.model_hash, model: model_hash });
    }
    let (branching, stages) = header_fields(model, variant)?;
    if file.dims as usize != model.dims()
        || file.classes as usize != model.classes()
        || file.branching != branching
        || file.stages != stages
    {
        return Err(Error::Shape("file header does not match the model".into()));
    }
    let schedules = expand_schedules(&file.schedules, stages as usize, model.dims())?;
    let mut decoder = RansDecoder::new(&file.payload)?;
    let mut report = CodecReport::default();
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let mut visitor = Decoding { decoder: &mut decoder, precision: file.precision as u32, report: &mut report };
        records.push(walk(model, variant, std::slice::from_ref(&file.permutation), &schedules, &mut visitor)?);
    }
    decoder.finish()?;
    report.payload_bits = 8 * file.payload.len();
    Ok((records, report))
}

pub fn decompress<M: ConditionalModel>(
    file: &CompressedFile,
    model: &M,
    variant: &Variant,
    model_hash: u64,
) -> Result<(Vec<u32>, CodecReport)> {
    let (mut records, report) = decompress_many(file, model, variant, model_hash, 1)?;
    Ok((records.pop().expect("one record"), report))
}

/// Draws `n_candidates` orders and keeps the one with the highest mean
/// sequential log-likelihood over `batch`; ties keep the earlier candidate.
/// Returns the order and every candidate's mean in bits/dim.
pub fn select_order<M: ConditionalModel>(
    model: &M,
    variant: &Variant,
    batch: &[Vec<u32>],
    n_candidates: usize,
    rng: &mut Rng,
) -> Result<(Permutation, Vec<f64>)> {
    if n_candidates == 0 {
        return Err(Error::Config("need at least one candidate order".into()));
    }
    let d = model.dims();
    let mut best: Option<(Permutation, f64)> = None;
    let mut scores = Vec::with_capacity(n_candidates);
    for _ in 0..n_candidates {
        let sigma = sample_permutation(rng, d)?;
        let mut total = 0.0;
        for x in batch {
            total += order_loglik(x, model, variant, &sigma)?;
        }
        let mean = total / batch.len().max(1) as f64;
        scores.push(-mean / d as f64);
        if best.as_ref().is_none_or(|(_, b)| mean > *b) {
            best = Some((sigma, mean));
        }
    }
    Ok((best.expect("at least one candidate").0, scores))
}

#[cfg(test)]
mod tests;
