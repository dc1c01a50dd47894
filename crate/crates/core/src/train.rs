//! Training loop: one stochastic single-call objective per batch element,
//! Adam, parameter EMA and loss-component tracking.

use rand::Rng as _;

use crate::backbone::{
    adam_step, clip_grad_norm, ema_update, AdamConfig, BackboneModel, ModelConfig, Network, Objective, ParamStore,
    Parametrization, Real,
};
use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::oa::{LossLedger, LEDGER_MOMENTUM};
use crate::process::Variant;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub steps: u64,
    pub batch: usize,
    pub adam: AdamConfig,
    pub ema: f64,
    pub clip: f64,
    pub ce_weight: f64,
    pub ledger_momentum: f64,
    pub eval_every: u64,
    pub eval_passes: usize,
    pub log_every: u64,
}

impl TrainConfig {
    pub fn from_config(c: &Config) -> Result<Self> {
        let parametrization = match c.get_or("parametrization", "data".to_string())?.as_str() {
            "data" => Parametrization::Data,
            "direct" => Parametrization::Direct,
            other => return Err(Error::Config(format!("unknown parametrization `{other}`"))),
        };
        let model = ModelConfig {
            dims: c.require("dims")?,
            classes: c.require("classes")?,
            branching: c.get_or("branching", 0)?,
            parametrization,
            hidden: c.get_or("hidden", 32)?,
            depth: c.get_or("depth", 2)?,
            time_input: c.get_or("time_input", true)?,
            positional: c.get_or("positional", true)?,
            absorbing: c.get_or("absorbing", 0)?,
        };
        model.validate()?;
        let adam = AdamConfig {
            learning_rate: c.get_or("learning_rate", 1e-3)?,
            warmup: c.get_or("warmup", 100)?,
            ..AdamConfig::default()
        };
        let config = Self {
            model,
            steps: c.get_or("steps", 1000)?,
            batch: c.get_or("batch", 32)?,
            adam,
            ema: c.get_or("ema", 0.995)?,
            clip: c.get_or("clip", 100.0)?,
            ce_weight: c.get_or("ce_weight", 0.0)?,
            ledger_momentum: c.get_or("ledger_momentum", LEDGER_MOMENTUM)?,
            eval_every: c.get_or("eval_every", 0)?,
            eval_passes: c.get_or("eval_passes", 1)?,
            log_every: c.get_or("log_every", 100)?,
        };
        if config.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.ema) || config.ema == 0.0 {
            return Err(Error::Config("ema momentum must lie in (0, 1)".into()));
        }
        if config.adam.learning_rate.is_nan()
            || config.adam.learning_rate <= 0.0
            || config.clip.is_nan()
            || config.clip <= 0.0
            || config.ce_weight < 0.0
        {
            return Err(Error::Config("learning_rate and clip must be positive, ce_weight non-negative".into()));
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: u64,
    /// Mean training objective, bits/dim.
    pub loss_bits: f64,
    /// Mean negative bound, bits/dim.
    pub elbo_bits: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trainer<F> {
    pub config: Config,
    pub train: TrainConfig,
    pub network: Network,
    pub variant: Variant,
    pub store: ParamStore<F>,
    pub ledger: LossLedger,
    pub seed: u64,
}

impl<F: Real> Trainer<F> {
    /// Fresh initialization drawn from stream 0 of `seed`.
    pub fn new(config: Config, seed: u64) -> Result<Self> {
        let train = TrainConfig::from_config(&config)?;
        let network = Network::new(train.model.clone())?;
        let variant = train.model.variant()?;
        let params = network.init(&mut stream(seed, 0));
        let ledger = LossLedger::new(train.model.dims, train.model.stages(), train.ledger_momentum)?;
        Ok(Self { config, train, network, variant, store: ParamStore::new(params), ledger, seed })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(ck.config.clone(), ck.seed)?;
        let n = t.network.param_count();
        if [ck.params.len(), ck.ema.len(), ck.adam_m.len(), ck.adam_v.len()].iter().any(|&l| l != n) {
            return Err(Error::Format(format!("checkpoint arrays do not match {n} parameters")));
        }
        if ck.ledger.dims() != t.ledger.dims() || ck.ledger.stages() != t.ledger.stages() {
            return Err(Error::Format("checkpoint ledger does not match the model".into()));
        }
        let widen = |v: &[f32]| v.iter().map(|&x| F::from_f64(x as f64)).collect::<Vec<F>>();
        t.store = ParamStore {
            params: widen(&ck.params),
            ema: widen(&ck.ema),
            m: widen(&ck.adam_m),
            v: widen(&ck.adam_v),
            step: ck.step,
            ema_ready: ck.step > 0,
        };
        t.ledger = ck.ledger.clone();
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let narrow = |v: &[F]| v.iter().map(|x| x.to_f64() as f32).collect::<Vec<f32>>();
        Checkpoint {
            config: self.config.clone(),
            params: narrow(&self.store.params),
            ema: narrow(&self.store.ema),
            ledger: self.ledger.clone(),
            adam_m: narrow(&self.store.m),
            adam_v: narrow(&self.store.v),
            seed: self.seed,
            step: self.store.step,
        }
    }

    /// The EMA parameters as a conditional model.
    pub fn model(&self) -> BackboneModel<'_, F> {
        BackboneModel::new(&self.network, &self.store.ema)
    }

    /// The raw (non-averaged) parameters as a conditional model.
    pub fn raw_model(&self) -> BackboneModel<'_, F> {
        BackboneModel::new(&self.network, &self.store.params)
    }

    pub fn step(&mut self, data: &Dataset) -> Result<StepStats> {
        let m = &self.train.model;
        if data.dims() != m.dims || data.classes() != m.classes {
            return Err(Error::Shape(format!(
                "dataset is {}×{}, model {}×{}",
                data.dims(),
                data.classes(),
                m.dims,
                m.classes
            )));
        }
        if data.is_empty() {
            return Err(Error::Shape("empty training set".into()));
        }
        let mut rng = stream(self.seed, self.store.step + 1);
        let batch = (0..self.train.batch)
            .map(|_| {
                let x = data.record(rng.random_range(0..data.len()));
                Objective::sample(&self.variant, m.head(), m.classes, x, self.train.ce_weight, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = self.network.loss_and_grad(&self.store.params, &batch)?;
        for (obj, &c) in batch.iter().zip(&out.components) {
            self.ledger.update(obj.stage, obj.step, c)?;
        }
        let grad_norm = clip_grad_norm(&mut out.grads, self.train.clip);
        adam_step(&mut self.store, &out.grads, &self.train.adam)?;
        ema_update(&mut self.store, self.train.ema);
        Ok(StepStats { step: self.store.step, loss_bits: out.loss_bits, elbo_bits: out.elbo_bits_per_dim, grad_norm })
    }

    /// Runs until `store.step == until`, reporting every step.
    pub fn train_until(
        &mut self,
        data: &Dataset,
        until: u64,
        mut on_step: impl FnMut(&Self, &StepStats),
    ) -> Result<()> {
        while self.store.step < until {
            let stats = self.step(data)?;
            on_step(self, &stats);
        }
        Ok(())
    }
}
