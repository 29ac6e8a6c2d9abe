//! The gen → train → eval pipeline, in memory or through checkpoints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aforge_cga::{
    train_generator, train_payment, Cga, Evaluator, Generator, GeneratorEpoch, PaymentEpoch, PaymentNet,
    PointwiseScorer, Scorer, TrainState, Variant,
};
use aforge_core::rng::stream_rng;
use aforge_core::{
    psi, score, AuctionInstance, Decision, GspMechanism, LoggedAuction, Mechanism, OptimalMechanism, PayYourBid,
    PublicAuction, VcgMechanism, World,
};
use aforge_neural::AdamConfig;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::rpm_ctr;
use crate::report::{self, MechanismReport, Report};

/// Id of the first held-out auction; training ids start at 0.
pub const EVAL_FIRST_ID: u64 = 1 << 32;

pub const EVALUATOR_CKPT: &str = "evaluator.ckpt";
pub const GENERATOR_CKPT: &str = "generator.ckpt";
pub const MECHANISM_DIR: &str = "mechanism";
pub const TRAIN_STATE: &str = "train_state.json";

/// A CGA variant after both training stages.
#[derive(Clone, Debug)]
pub struct TrainedCga {
    pub model: Cga,
    pub generator_curve: Vec<GeneratorEpoch>,
    pub payment_curve: Vec<PaymentEpoch>,
    pub state: TrainState,
}

/// A mechanism under evaluation. Learned models decide in batches.
pub enum Contender<'a> {
    Baseline(Box<dyn Mechanism + 'a>),
    Learned(&'a Cga),
}

impl Contender<'_> {
    pub fn mechanism(&self) -> &dyn Mechanism {
        match self {
            Contender::Baseline(m) => m.as_ref(),
            Contender::Learned(m) => *m,
        }
    }

    /// Decisions for every auction; auction `i` uses stream `i` of `seed`.
    pub fn decide_all(&self, auctions: &[&PublicAuction], seed: u64) -> Result<Vec<Decision>> {
        match self {
            Contender::Learned(m) => Ok(m.decide_batch(auctions)?),
            Contender::Baseline(m) => Ok(auctions
                .iter()
                .enumerate()
                .map(|(i, a)| m.decide(a, &mut stream_rng(seed, "eval.decide", i as u64)))
                .collect::<aforge_core::Result<_>>()?),
        }
    }
}

/// One configured run: the world and its train / held-out splits.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub world: World,
    pub train: Vec<LoggedAuction>,
    pub eval: Vec<LoggedAuction>,
}

impl Experiment {
    /// Builds the world and generates both splits.
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let world = World::new(cfg.world.clone())?;
        let train = train_split(&world, &cfg);
        let eval = eval_split(&world, &cfg);
        Ok(Self { cfg, world, train, eval })
    }

    /// Uses already generated splits (e.g. read back from JSONL).
    pub fn with_data(cfg: ExperimentConfig, train: Vec<LoggedAuction>, eval: Vec<LoggedAuction>) -> Result<Self> {
        cfg.validate()?;
        let world = World::new(cfg.world.clone())?;
        Ok(Self { cfg, world, train, eval })
    }

    pub fn train_evaluator(&self) -> Result<(Evaluator, Vec<f64>)> {
        train_evaluator(&self.cfg, &self.train)
    }

    pub fn train_variant(&self, variant: Variant, evaluator: Option<&Evaluator>) -> Result<TrainedCga> {
        let mut model = init_cga(&self.cfg, variant, evaluator)?;
        let generator_curve = train_generator_stage(&self.cfg, &mut model, &self.train)?;
        let (state, payment_curve) = train_payment_stage(&self.cfg, &mut model, &self.train)?;
        Ok(TrainedCga { model, generator_curve, payment_curve, state })
    }

    /// Trains every CGA variant named in the config, sharing one evaluator.
    pub fn train_all(&self) -> Result<BTreeMap<String, TrainedCga>> {
        let variants: Vec<Variant> = self
            .cfg
            .mechanism_names()?
            .iter()
            .filter_map(|n| Variant::from_name(n).ok())
            .collect();
        let evaluator = if variants.iter().any(|v| v.use_evaluator) { Some(self.train_evaluator()?.0) } else { None };
        variants.into_iter().map(|v| Ok((v.name(), self.train_variant(v, evaluator.as_ref())?))).collect()
    }

    /// Baseline mechanisms by name; `None` for CGA variants.
    pub fn baseline(&self, name: &str) -> Option<Box<dyn Mechanism + '_>> {
        let w = &self.world;
        match name {
            "gsp" => Some(Box::new(GspMechanism)),
            "vcg" => Some(Box::new(VcgMechanism::new(w))),
            "optimal" => Some(Box::new(OptimalMechanism::new(w, self.cfg.eval.mc_samples))),
            "pay-your-bid" => Some(Box::new(PayYourBid(VcgMechanism::new(w)))),
            _ => None,
        }
    }

    pub fn eval_instances(&self) -> Vec<AuctionInstance> {
        self.eval.iter().map(|l| l.instance.clone()).collect()
    }

    /// Metrics of one mechanism on the held-out split.
    pub fn evaluate(&self, name: &str, contender: &Contender<'_>) -> Result<MechanismReport> {
        let seed = self.cfg.master_seed();
        let auctions: Vec<&PublicAuction> = self.eval.iter().map(|l| &l.instance.auction).collect();
        let start = Instant::now();
        let decisions = contender.decide_all(&auctions, seed)?;
        let elapsed = start.elapsed();
        let outcomes = decisions
            .into_iter()
            .zip(&auctions)
            .map(|(d, a)| score(d, a, &self.world))
            .collect::<aforge_core::Result<Vec<_>>>()?;
        let clicks = rpm_ctr(&outcomes, seed);

        let count = self.cfg.eval.psi_instances.min(self.eval.len());
        let instances: Vec<AuctionInstance> = self.eval[..count].iter().map(|l| l.instance.clone()).collect();
        let ic = psi(contender.mechanism(), &instances, &self.world, &self.cfg.regret())?;

        let runtime_ms = if self.cfg.eval.record_runtime && !auctions.is_empty() {
            elapsed.as_secs_f64() * 1000.0 / auctions.len() as f64
        } else {
            0.0
        };
        Ok(MechanismReport {
            mechanism: name.to_string(),
            rpm: clicks.rpm,
            ctr: clicks.ctr,
            psi: ic.psi,
            psi_skipped: ic.skipped,
            runtime_ms,
            seed,
            config_hash: self.cfg.hash(),
            expected_rpm: clicks.expected_rpm,
            expected_ctr: clicks.expected_ctr,
            slot_ctr: clicks.slot_ctr,
        })
    }

    /// Evaluates every configured mechanism; CGA variants come from `models`.
    pub fn report(&self, models: &BTreeMap<String, Cga>) -> Result<Report> {
        let mut rows = Vec::new();
        for name in self.cfg.mechanism_names()? {
            let contender = match self.baseline(&name) {
                Some(m) => Contender::Baseline(m),
                None => Contender::Learned(models.get(&name).ok_or_else(|| {
                    HarnessError::Config(format!("no trained model for mechanism `{name}`"))
                })?),
            };
            rows.push(self.evaluate(&name, &contender)?);
        }
        Ok(Report { rows })
    }

    /// Full pipeline in memory.
    pub fn run(&self) -> Result<Report> {
        let trained = self.train_all()?;
        let models = trained.into_iter().map(|(n, t)| (n, t.model)).collect();
        self.report(&models)
    }
}

/// Held-out split; ids start at [`EVAL_FIRST_ID`].
pub fn eval_split(world: &World, cfg: &ExperimentConfig) -> Vec<LoggedAuction> {
    world.gen_dataset(EVAL_FIRST_ID, cfg.data.eval)
}

pub fn train_split(world: &World, cfg: &ExperimentConfig) -> Vec<LoggedAuction> {
    world.gen_dataset(0, cfg.data.train)
}

/// `gen → train → eval` in one call.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    Experiment::new(cfg.clone())?.run()
}

fn adam(cfg: &ExperimentConfig) -> AdamConfig {
    AdamConfig::with_lr(cfg.train.lr)
}

pub fn new_evaluator(cfg: &ExperimentConfig) -> Result<Evaluator> {
    Ok(Evaluator::new(&cfg.model, &mut stream_rng(cfg.train.seed, "init.evaluator", 0))?)
}

/// Fits the evaluator to the click logs; returns it with the loss curve.
pub fn train_evaluator(cfg: &ExperimentConfig, logs: &[LoggedAuction]) -> Result<(Evaluator, Vec<f64>)> {
    let mut e = new_evaluator(cfg)?;
    let mut rng = stream_rng(cfg.train.seed, "train.evaluator", 0);
    let curve = e.train(logs, cfg.train.evaluator_epochs, cfg.train.batch, &adam(cfg), &mut rng)?;
    Ok((e, curve))
}

/// Untrained model of `variant`. Every variant starts from the same
/// generator and payment weights.
pub fn init_cga(cfg: &ExperimentConfig, variant: Variant, evaluator: Option<&Evaluator>) -> Result<Cga> {
    let generator = Generator::new(&cfg.model, &mut stream_rng(cfg.train.seed, "init.generator", 0))?;
    let payment = PaymentNet::new(&cfg.model, cfg.world.k, &mut stream_rng(cfg.train.seed, "init.payment", 0))?;
    let scorer = if variant.use_evaluator {
        let e = evaluator.ok_or_else(|| HarnessError::Config(format!("{} needs a trained evaluator", variant.name())))?;
        Scorer::Evaluator(e.clone())
    } else {
        Scorer::Pointwise(PointwiseScorer { decay: cfg.model.alpha_decay })
    };
    Ok(Cga::new(variant, generator, scorer, payment)?)
}

/// Policy-gradient training of the generator. The end-to-end variant skips
/// it; its generator learns from the payment objective.
pub fn train_generator_stage(
    cfg: &ExperimentConfig,
    model: &mut Cga,
    logs: &[LoggedAuction],
) -> Result<Vec<GeneratorEpoch>> {
    if model.variant.end2end {
        return Ok(Vec::new());
    }
    let auctions: Vec<&PublicAuction> = logs.iter().map(|l| &l.instance.auction).collect();
    let mut rng = stream_rng(cfg.train.seed, "train.generator", 0);
    Ok(train_generator(&mut model.generator, &model.scorer, &auctions, model.variant, &cfg.train, &mut rng)?)
}

pub fn train_payment_stage(
    cfg: &ExperimentConfig,
    model: &mut Cga,
    logs: &[LoggedAuction],
) -> Result<(TrainState, Vec<PaymentEpoch>)> {
    let instances: Vec<&AuctionInstance> = logs.iter().map(|l| &l.instance).collect();
    let mut state = TrainState::from_config(cfg.world.k, &cfg.train);
    let mut rng = stream_rng(cfg.train.seed, "train.payment", 0);
    let curve = train_payment(model, &instances, &cfg.train, &mut state, &mut rng)?;
    Ok((state, curve))
}

/// Checkpoint layout under one directory:
/// `evaluator.ckpt`, then per variant `<name>/generator.ckpt` after the
/// generator stage and `<name>/mechanism/` plus `<name>/train_state.json`
/// after the payment stage.
#[derive(Clone, Debug)]
pub struct CheckpointDir(pub PathBuf);

impl CheckpointDir {
    pub fn evaluator(&self) -> PathBuf {
        self.0.join(EVALUATOR_CKPT)
    }

    pub fn generator(&self, variant: Variant) -> PathBuf {
        self.0.join(variant.name()).join(GENERATOR_CKPT)
    }

    pub fn mechanism(&self, variant: Variant) -> PathBuf {
        self.0.join(variant.name()).join(MECHANISM_DIR)
    }

    pub fn train_state(&self, variant: Variant) -> PathBuf {
        self.0.join(variant.name()).join(TRAIN_STATE)
    }

    fn require(path: &Path, stage: String) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(HarnessError::MissingCheckpoint { path: path.to_path_buf(), stage })
        }
    }

    pub fn save_evaluator(&self, e: &Evaluator) -> Result<()> {
        std::fs::create_dir_all(&self.0).map_err(|err| HarnessError::io(&self.0, err))?;
        Ok(e.store().save(&self.evaluator())?)
    }

    pub fn load_evaluator(&self, cfg: &ExperimentConfig) -> Result<Evaluator> {
        let path = self.evaluator();
        Self::require(&path, "evaluator".into())?;
        let mut e = new_evaluator(cfg)?;
        e.store_mut().load(&path)?;
        Ok(e)
    }

    /// Evaluator for `variant`, or `None` when the variant does not use one.
    fn evaluator_for(&self, cfg: &ExperimentConfig, variant: Variant) -> Result<Option<Evaluator>> {
        variant.use_evaluator.then(|| self.load_evaluator(cfg)).transpose()
    }

    pub fn save_generator(&self, model: &Cga) -> Result<()> {
        let path = self.generator(model.variant);
        let dir = path.parent().expect("variant directory");
        std::fs::create_dir_all(dir).map_err(|err| HarnessError::io(dir, err))?;
        Ok(model.generator.store().save(&path)?)
    }

    /// The model as left by the generator stage.
    pub fn load_generator_stage(&self, cfg: &ExperimentConfig, variant: Variant) -> Result<Cga> {
        let path = self.generator(variant);
        Self::require(&path, format!("generator --variant {}", variant.name()))?;
        let evaluator = self.evaluator_for(cfg, variant)?;
        let mut model = init_cga(cfg, variant, evaluator.as_ref())?;
        model.generator.store_mut().load(&path)?;
        Ok(model)
    }

    pub fn save_trained(&self, model: &Cga, state: &TrainState) -> Result<()> {
        model.save(&self.mechanism(model.variant))?;
        let json = serde_json::to_string_pretty(state)? + "\n";
        report::write(&self.train_state(model.variant), &json)
    }

    /// The model as left by the payment stage.
    pub fn load_trained(&self, cfg: &ExperimentConfig, variant: Variant) -> Result<Cga> {
        let dir = self.mechanism(variant);
        Self::require(&dir.join("payment.ckpt"), format!("payment --variant {}", variant.name()))?;
        let evaluator = self.evaluator_for(cfg, variant)?;
        let mut model = init_cga(cfg, variant, evaluator.as_ref())?;
        model.load(&dir)?;
        Ok(model)
    }
}
