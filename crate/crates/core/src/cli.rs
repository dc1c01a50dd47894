//! Command-line front end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use crate::backbone::Real;
use crate::checkpoint::{model_hash, Checkpoint};
use crate::codec::{
    compress_many, decompress_many, select_order, CodingPlan, CompressedFile, Reader, DEFAULT_PRECISION,
};
use crate::config::Config;
use crate::data::{Dataset, DatasetSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, exact_nll};
use crate::ordering::sample_permutation;
use crate::process::sample_with;
use crate::rng::seeded;
use crate::schedule::{path_cost, plan_stages, Schedule};
use crate::train::Trainer;

#[derive(Debug, Parser)]
#[command(
    name = "ardm",
    version,
    about = "Autoregressive diffusion models: training, sampling, scheduling and compression"
)]
pub struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Key-value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Floating-point width of network evaluation and training.
    #[arg(long, global = true, value_enum, default_value_t = Precision::Single)]
    pub precision: Precision,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    #[value(name = "32")]
    Single,
    #[value(name = "64")]
    Double,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write the checkpoint.
    Train {
        /// Training set; defaults to `train_data`, else the generated split.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Validation set for periodic evaluation.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Overrides the configured step count.
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from the checkpoint instead of starting fresh.
        #[arg(long)]
        resume: bool,
    },
    /// Estimate the negative log-likelihood bound with EMA parameters.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        passes: usize,
        /// Also average exactly over all orders (D ≤ 6).
        #[arg(long)]
        exact: bool,
    },
    /// Draw samples, optionally with a parallel schedule.
    Sample {
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Network calls per stage; sequential when omitted.
        #[arg(long)]
        budget: Option<usize>,
        /// Write a dataset file instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan a budgeted schedule from the checkpoint's loss components.
    Schedule {
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compress a dataset file, or any file with `--raw`.
    Compress {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        raw: bool,
        /// Network calls per stage; planned from the loss components.
        #[arg(long)]
        budget: Option<usize>,
        /// Schedule file written by `schedule`; overrides `--budget`.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Random orders tried; the best on the input is kept.
        #[arg(long, default_value_t = 1)]
        candidates: usize,
        /// Frequency-table precision in bits (8–16).
        #[arg(long, default_value_t = DEFAULT_PRECISION)]
        table_bits: u32,
    },
    /// Invert `compress`.
    Decompress { input: PathBuf, output: PathBuf },
    /// Generate train/val/test splits from the `data.*` keys.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match cli.precision {
        Precision::Single => run_typed::<f32>(cli),
        Precision::Double => run_typed::<f64>(cli),
    }
}

fn config(cli: &Cli) -> Result<Config> {
    match &cli.config {
        Some(p) => Config::load(p),
        None => Err(Error::Config("--config is required".into())),
    }
}

fn checkpoint_path(cli: &Cli) -> Result<&Path> {
    cli.checkpoint.as_deref().ok_or_else(|| Error::Config("--checkpoint is required".into()))
}

/// The trainer restored from `--checkpoint` and the checkpoint's hash.
fn load<F: Real>(cli: &Cli) -> Result<(Trainer<F>, u64)> {
    let bytes = std::fs::read(checkpoint_path(cli)?)?;
    let ck = Checkpoint::from_bytes(&bytes)?;
    Ok((Trainer::from_checkpoint(&ck)?, model_hash(&bytes)))
}

fn run_typed<F: Real>(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train { train, val, steps, resume } => {
            cmd_train::<F>(cli, train.as_deref(), val.as_deref(), *steps, *resume)
        }
        Command::Eval { data, passes, exact } => {
            let (trainer, _) = load::<F>(cli)?;
            let data = Dataset::load(data)?;
            let model = trainer.model();
            let r = evaluate(&model, &trainer.variant, &data, *passes, cli.seed)?;
            println!(
                "nll: {:.5} ± {:.5} bits/dim ({} single-call estimates, EMA parameters)",
                r.bits_per_dim, r.stderr, r.count
            );
            if *exact {
                println!("exact nll: {:.5} bits/dim", exact_nll(&model, &trainer.variant, &data)?);
            }
            Ok(())
        }
        Command::Sample { count, budget, out } => {
            let (trainer, _) = load::<F>(cli)?;
            let d = trainer.train.model.dims;
            let schedules = match budget {
                Some(b) => plan_stages(trainer.ledger.components(), trainer.ledger.stages(), *b)?,
                None => vec![Schedule::sequential(d)],
            };
            let model = trainer.model();
            let mut rng = seeded(cli.seed);
            let mut samples = Vec::with_capacity(*count);
            for _ in 0..*count {
                let orders = (0..trainer.variant.stages())
                    .map(|_| sample_permutation(&mut rng, d))
                    .collect::<Result<Vec<_>>>()?;
                samples.push(sample_with(&model, &trainer.variant, &orders, &schedules, &mut rng)?);
            }
            match out {
                Some(path) => Dataset::new(d, trainer.train.model.classes, &samples)?.save(path)?,
                None => {
                    for s in samples {
                        println!("{}", s.iter().map(u32::to_string).collect::<Vec<_>>().join(" "));
                    }
                }
            }
            Ok(())
        }
        Command::Schedule { budget, out } => {
            let ck = Checkpoint::load(checkpoint_path(cli)?)?;
            let ledger = &ck.ledger;
            if !ledger.is_complete() {
                return Err(Error::Config("the checkpoint's loss ledger has unobserved steps".into()));
            }
            let schedules = plan_stages(ledger.components(), ledger.stages(), *budget)?;
            let raw: f64 = ledger
                .components()
                .chunks(ledger.dims())
                .zip(&schedules)
                .map(|(l, sch)| path_cost(l, sch.steps()))
                .sum();
            info!("same schedule under the unsorted ledger: {:.5} bits/dim", raw / ledger.dims() as f64);
            let text = schedule_text(&schedules, ledger.dims());
            print!("{text}");
            if let Some(path) = out {
                std::fs::write(path, text)?;
            }
            Ok(())
        }
        Command::Compress { input, output, raw, budget, schedule, candidates, table_bits } => {
            let (trainer, hash) = load::<F>(cli)?;
            let m = &trainer.train.model;
            let bytes = std::fs::read(input)?;
            let (kind, records) = if *raw {
                if m.classes != 256 {
                    return Err(Error::Shape(format!("raw files need a 256-class model, not {}", m.classes)));
                }
                (ArchiveKind::Raw, bytes_to_records(&bytes, m.dims))
            } else {
                let ds = Dataset::from_bytes(&bytes)?;
                (ArchiveKind::Dataset, ds.to_vecs())
            };
            let schedules = match (schedule, budget) {
                (Some(p), _) => parse_schedule_text(&std::fs::read_to_string(p)?)?,
                (None, Some(b)) => plan_stages(trainer.ledger.components(), trainer.ledger.stages(), *b)?,
                (None, None) => vec![Schedule::sequential(m.dims)],
            };
            let model = trainer.model();
            let mut rng = seeded(cli.seed);
            let permutation = if *candidates <= 1 {
                sample_permutation(&mut rng, m.dims)?
            } else {
                let probe = &records[..records.len().min(64)];
                let (best, scores) = select_order(&model, &trainer.variant, probe, *candidates, &mut rng)?;
                let spread =
                    scores.iter().cloned().fold(f64::MIN, f64::max) - scores.iter().cloned().fold(f64::MAX, f64::min);
                info!("order candidates span {spread:.4} bits/dim");
                best
            };
            let plan = CodingPlan { permutation, schedules, precision: *table_bits, model_hash: hash };
            let (file, report) = compress_many(&records, &model, &trainer.variant, &plan)?;
            let archive = Archive { kind, original_len: bytes.len() as u64, records: records.len() as u64, file };
            let out = archive.to_bytes();
            std::fs::write(output, &out)?;
            let symbols = (records.len() * m.dims).max(1) as f64;
            println!(
                "{} records, {} network calls, payload {:.5} bits/dim (ideal {:.5}), file {} bytes",
                records.len(),
                report.network_calls,
                report.payload_bits as f64 / symbols,
                report.ideal_bits / symbols,
                out.len()
            );
            Ok(())
        }
        Command::Decompress { input, output } => {
            let (trainer, hash) = load::<F>(cli)?;
            let archive = Archive::from_bytes(&std::fs::read(input)?)?;
            let count = usize::try_from(archive.records).map_err(|_| Error::Format("record count too large".into()))?;
            let (records, report) = decompress_many(&archive.file, &trainer.model(), &trainer.variant, hash, count)?;
            let m = &trainer.train.model;
            let bytes = match archive.kind {
                ArchiveKind::Raw => {
                    let mut b: Vec<u8> = records.concat().into_iter().map(|v| v as u8).collect();
                    b.truncate(archive.original_len as usize);
                    b
                }
                ArchiveKind::Dataset => Dataset::new(m.dims, m.classes, &records)?.to_bytes(),
            };
            if bytes.len() as u64 != archive.original_len {
                return Err(Error::Corrupt("decoded length differs from the original".into()));
            }
            std::fs::write(output, bytes)?;
            println!("{} records, {} network calls", records.len(), report.network_calls);
            Ok(())
        }
        Command::GenData { out } => {
            let spec = DatasetSpec::from_config(&config(cli)?)?;
            let splits = spec.generate(cli.seed)?;
            std::fs::create_dir_all(out)?;
            for (name, ds) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
                ds.save(&out.join(format!("{name}.bin")))?;
                println!("{name}: {} records of {} dims, {} classes", ds.len(), ds.dims(), ds.classes());
            }
            if let Some(h) = spec.entropy() {
                println!("entropy: {:.5} bits/dim (rate {:.5} bits/dim)", h.block, h.rate);
            }
            Ok(())
        }
    }
}

fn cmd_train<F: Real>(
    cli: &Cli,
    train: Option<&Path>,
    val: Option<&Path>,
    steps: Option<u64>,
    resume: bool,
) -> Result<()> {
    let path = checkpoint_path(cli)?;
    let mut trainer = if resume {
        Trainer::<F>::from_checkpoint(&Checkpoint::load(path)?)?
    } else {
        Trainer::<F>::new(config(cli)?, cli.seed)?
    };
    let c = trainer.config.clone();
    let data_seed = trainer.seed;
    let dataset =
        |flag: Option<&Path>, key: &str, split: fn(crate::data::Splits) -> Dataset| -> Result<Option<Dataset>> {
            if let Some(p) = flag.map(Path::to_path_buf).or_else(|| c.raw(key).map(PathBuf::from)) {
                return Dataset::load(&p).map(Some);
            }
            if c.raw("data.kind").is_some() {
                return Ok(Some(split(DatasetSpec::from_config(&c)?.generate(data_seed)?)));
            }
            Ok(None)
        };
    let train_set = dataset(train, "train_data", |s| s.train)?
        .ok_or_else(|| Error::Config("no training data: pass --train, set train_data or data.kind".into()))?;
    let val_set = dataset(val, "val_data", |s| s.val)?;
    let until = steps.unwrap_or(trainer.train.steps);
    let (log_every, eval_every, passes) =
        (trainer.train.log_every, trainer.train.eval_every, trainer.train.eval_passes);
    let seed = cli.seed;
    let mut failure = None;
    trainer.train_until(&train_set, until, |t, s| {
        if log_every > 0 && s.step % log_every == 0 {
            info!(
                "step {}: loss {:.4} bits/dim, bound {:.4} bits/dim, |g| {:.3}",
                s.step, s.loss_bits, s.elbo_bits, s.grad_norm
            );
        }
        if let (Some(v), true) = (&val_set, eval_every > 0 && s.step % eval_every == 0) {
            match evaluate(&t.model(), &t.variant, v, passes, seed) {
                Ok(r) => info!("step {}: val {:.4} ± {:.4} bits/dim", s.step, r.bits_per_dim, r.stderr),
                Err(e) => failure = Some(e),
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    trainer.checkpoint().save(path)?;
    println!("trained to step {}; checkpoint written to {}", trainer.store.step, path.display());
    if let Some(v) = &val_set {
        let r = evaluate(&trainer.model(), &trainer.variant, v, passes, seed)?;
        println!("val nll: {:.5} ± {:.5} bits/dim", r.bits_per_dim, r.stderr);
    }
    Ok(())
}

/// Records of `dims` bytes; the last one is zero-padded.
fn bytes_to_records(bytes: &[u8], dims: usize) -> Vec<Vec<u32>> {
    bytes
        .chunks(dims)
        .map(|c| {
            let mut r: Vec<u32> = c.iter().map(|&b| b as u32).collect();
            r.resize(dims, 0);
            r
        })
        .collect()
}

/// Text form of per-stage schedules: `#` comments, then one line of
/// comma-separated end states per stage.
pub fn schedule_text(schedules: &[Schedule], dims: usize) -> String {
    let total: f64 = schedules.iter().map(Schedule::total_bits).sum();
    let mut out = String::new();
    let budget = schedules.first().map_or(0, Schedule::budget);
    let _ = writeln!(out, "# budget {budget} per stage, {} stages", schedules.len());
    let _ = writeln!(out, "# predicted {total:.5} bits, {:.5} bits/dim", total / dims as f64);
    for (s, sch) in schedules.iter().enumerate() {
        let widths: Vec<String> = sch.widths().iter().map(usize::to_string).collect();
        let _ = writeln!(out, "# stage {} widths: {}", s + 1, widths.join(" "));
    }
    for sch in schedules {
        let steps: Vec<String> = sch.steps().iter().map(u32::to_string).collect();
        let _ = writeln!(out, "{}", steps.join(","));
    }
    out
}

pub fn parse_schedule_text(text: &str) -> Result<Vec<Schedule>> {
    let schedules = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let steps = l
                .split(',')
                .map(|s| s.trim().parse::<u32>().map_err(|_| Error::Format(format!("bad schedule entry `{s}`"))))
                .collect::<Result<Vec<_>>>()?;
            Schedule::new(steps, 0.0)
        })
        .collect::<Result<Vec<_>>>()?;
    if schedules.is_empty() {
        return Err(Error::Format("empty schedule file".into()));
    }
    Ok(schedules)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchiveKind {
    Dataset = 0,
    Raw = 1,
}

/// `"ARDX"`, u8 kind, u64 original length, u64 record count, then the
/// compressed file.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub kind: ArchiveKind,
    pub original_len: u64,
    pub records: u64,
    pub file: CompressedFile,
}

impl Archive {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = b"ARDX".to_vec();
        out.push(self.kind as u8);
        out.extend(self.original_len.to_le_bytes());
        out.extend(self.records.to_le_bytes());
        out.extend(self.file.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != b"ARDX" {
            return Err(Error::Format("not an archive".into()));
        }
        let kind = match r.take(1)?[0] {
            0 => ArchiveKind::Dataset,
            1 => ArchiveKind::Raw,
            k => return Err(Error::Format(format!("unknown archive kind {k}"))),
        };
        let original_len = r.u64()?;
        let records = r.u64()?;
        let file = CompressedFile::from_bytes(&bytes[r.pos..])?;
        Ok(Self { kind, original_len, records, file })
    }
}
