use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aforge_cga::Variant;
use aforge_core::dataset::{read_jsonl, write_jsonl};
use aforge_core::LoggedAuction;
use aforge_harness::checks::{run_check, CheckOptions, CHECKS};
use aforge_harness::experiment::{
    eval_split, train_evaluator, train_generator_stage, train_payment_stage, train_split, CheckpointDir, Contender,
    Experiment,
};
use aforge_harness::{ExperimentConfig, HarnessError, Report, Result};
use aforge_core::World;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aforge", version, about = "Multi-slot ad auction laboratory")]
struct Cli {
    /// Replaces every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Eval,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Evaluator,
    Generator,
    Payment,
}

#[derive(Subcommand)]
enum Command {
    /// Generate logged auctions as JSON Lines.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
    },
    /// Run one training stage and write its checkpoint.
    Train {
        #[arg(value_enum)]
        stage: Stage,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training logs; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "cga")]
        variant: String,
    },
    /// Evaluate mechanisms on the held-out split.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated names; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        mechanisms: Option<Vec<String>>,
        /// Held-out logs; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Trained checkpoints; CGA variants are trained in memory when omitted.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// CSV report; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
        /// Per-slot mean CTR curves.
        #[arg(long)]
        slot_ctr: Option<PathBuf>,
    },
    /// gen, train every stage and eval, with all artifacts under one directory.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Oracle self-checks, or one exact mechanism on the held-out split.
    Oracle {
        /// A check name or `all`.
        #[arg(long, conflicts_with = "mechanism")]
        check: Option<String>,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        mechanism: Option<String>,
        #[arg(long)]
        mc_samples: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn read_logs(path: &Path) -> Result<Vec<LoggedAuction>> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(read_jsonl(BufReader::new(file))?)
}

fn write_logs(path: &Path, logs: &[LoggedAuction]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_jsonl(&mut w, logs)?;
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn variant(name: &str) -> Result<Variant> {
    Variant::from_name(name).map_err(|e| HarnessError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    match cli.command {
        Command::Gen { config, out, split } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let world = World::new(cfg.world.clone())?;
            let logs = match split {
                Split::Train => train_split(&world, &cfg),
                Split::Eval => eval_split(&world, &cfg),
            };
            write_logs(&out, &logs)?;
            eprintln!("wrote {} auctions to {}", logs.len(), out.display());
        }
        Command::Train { stage, config, data, ckpt, variant: name } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let logs = match &data {
                Some(p) => read_logs(p)?,
                None => train_split(&World::new(cfg.world.clone())?, &cfg),
            };
            let dir = CheckpointDir(ckpt);
            train_stage(&cfg, stage, &logs, &dir, variant(&name)?)?;
        }
        Command::Eval { config, mechanisms, data, ckpt, report, json, slot_ctr } => {
            let mut cfg = load_config(config.as_deref(), seed)?;
            if let Some(m) = mechanisms {
                cfg.mechanisms = m;
                cfg.validate()?;
            }
            let exp = match &data {
                Some(p) => Experiment::with_data(cfg, Vec::new(), read_logs(p)?)?,
                None if ckpt.is_some() => {
                    let world = World::new(cfg.world.clone())?;
                    let eval = eval_split(&world, &cfg);
                    Experiment::with_data(cfg, Vec::new(), eval)?
                }
                None => Experiment::new(cfg)?,
            };
            let r = match &ckpt {
                Some(dir) => {
                    let dir = CheckpointDir(dir.clone());
                    let mut models = BTreeMap::new();
                    for name in exp.cfg.mechanism_names()? {
                        if let Ok(v) = Variant::from_name(&name) {
                            models.insert(name, dir.load_trained(&exp.cfg, v)?);
                        }
                    }
                    exp.report(&models)?
                }
                None => exp.run()?,
            };
            emit(&r, report.as_deref(), json.as_deref(), slot_ctr.as_deref())?;
        }
        Command::Run { config, out } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let exp = Experiment::new(cfg)?;
            write_logs(&out.join("train.jsonl"), &exp.train)?;
            write_logs(&out.join("eval.jsonl"), &exp.eval)?;
            let dir = CheckpointDir(out.join("ckpt"));
            let names = exp.cfg.mechanism_names()?;
            let variants: Vec<Variant> = names.iter().filter_map(|n| Variant::from_name(n).ok()).collect();
            if variants.iter().any(|v| v.use_evaluator) {
                train_stage(&exp.cfg, Stage::Evaluator, &exp.train, &dir, Variant::full())?;
            }
            let mut models = BTreeMap::new();
            for v in variants {
                train_stage(&exp.cfg, Stage::Generator, &exp.train, &dir, v)?;
                train_stage(&exp.cfg, Stage::Payment, &exp.train, &dir, v)?;
                models.insert(v.name(), dir.load_trained(&exp.cfg, v)?);
            }
            let r = exp.report(&models)?;
            emit(
                &r,
                Some(&out.join("report.csv")),
                Some(&out.join("report.json")),
                Some(&out.join("slot_ctr.csv")),
            )?;
        }
        Command::Oracle { check, instances, grid, mechanism, mc_samples, config } => {
            if let Some(name) = mechanism {
                if !["optimal", "vcg", "gsp"].contains(&name.as_str()) {
                    return Err(HarnessError::Config(format!("oracle mechanism must be optimal, vcg or gsp, not `{name}`")));
                }
                let mut cfg = load_config(config.as_deref(), seed)?;
                if let Some(s) = mc_samples {
                    cfg.eval.mc_samples = s;
                }
                if let Some(n) = instances {
                    cfg.data.eval = n;
                }
                cfg.validate()?;
                let world = World::new(cfg.world.clone())?;
                let eval = eval_split(&world, &cfg);
                let exp = Experiment::with_data(cfg, Vec::new(), eval)?;
                let mech = exp.baseline(&name).expect("baseline name checked above");
                let row = exp.evaluate(&name, &Contender::Baseline(mech))?;
                print!("{}", Report { rows: vec![row] }.to_csv());
                return Ok(ExitCode::SUCCESS);
            }
            let check = check.unwrap_or_else(|| "all".into());
            let names: Vec<&str> = if check == "all" { CHECKS.to_vec() } else { vec![check.as_str()] };
            let opts = CheckOptions { instances, grid, seed: seed.unwrap_or(0) };
            let mut all_passed = true;
            for name in names {
                let outcome = run_check(name, &opts)?;
                println!("{} {}: {}", if outcome.passed { "PASS" } else { "FAIL" }, outcome.name, outcome.detail);
                all_passed &= outcome.passed;
            }
            if !all_passed {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn train_stage(cfg: &ExperimentConfig, stage: Stage, logs: &[LoggedAuction], dir: &CheckpointDir, v: Variant) -> Result<()> {
    match stage {
        Stage::Evaluator => {
            let (e, curve) = train_evaluator(cfg, logs)?;
            dir.save_evaluator(&e)?;
            eprintln!("evaluator: final training log-loss {:.5}", curve.last().copied().unwrap_or(f64::NAN));
        }
        Stage::Generator => {
            let evaluator = if v.use_evaluator { Some(dir.load_evaluator(cfg)?) } else { None };
            let mut model = aforge_harness::experiment::init_cga(cfg, v, evaluator.as_ref())?;
            let curve = train_generator_stage(cfg, &mut model, logs)?;
            dir.save_generator(&model)?;
            if let Some(e) = curve.last() {
                eprintln!("{}: generator reward {:.5}, welfare {:.5}", v.name(), e.reward, e.welfare);
            }
        }
        Stage::Payment => {
            let mut model = dir.load_generator_stage(cfg, v)?;
            let (state, curve) = train_payment_stage(cfg, &mut model, logs)?;
            dir.save_trained(&model, &state)?;
            if let Some(e) = curve.last() {
                eprintln!("{}: payment revenue {:.5}, regret {:?}", v.name(), e.revenue, e.regret);
            }
        }
    }
    Ok(())
}

fn emit(r: &Report, csv: Option<&Path>, json: Option<&Path>, slots: Option<&Path>) -> Result<()> {
    match csv {
        Some(p) => r.write_csv(p)?,
        None => print!("{}", r.to_csv()),
    }
    if let Some(p) = json {
        r.write_json(p)?;
    }
    if let Some(p) = slots {
        r.write_slot_csv(p)?;
    }
    Ok(())
}
