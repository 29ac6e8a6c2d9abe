use std::path::Path;
use std::process::Command;

use aforge_core::regret::psi_term;
use aforge_core::rng::stream_rng;
use aforge_core::{Allocation, Outcome, RegretConfig};
use aforge_harness::experiment::Contender;
use aforge_harness::{rpm_ctr, run_experiment, Experiment, ExperimentConfig, Report};
use rand::Rng;

const TINY: &str = r#"{
  "world": {"n": 5, "k": 2, "seed": 3},
  "data": {"train": 120, "eval": 30},
  "train": {"batch": 32, "evaluator_epochs": 1, "generator_epochs": 1, "payment_epochs": 2},
  "eval": {"psi_instances": 5, "redraws": 1, "mc_samples": 40, "record_runtime": false},
  "mechanisms": ["gsp", "vcg", "optimal", "cga"]
}"#;

fn tiny() -> ExperimentConfig {
    ExperimentConfig::from_json(TINY).unwrap()
}

fn aforge(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_aforge")).current_dir(dir).args(args).output().unwrap()
}

#[test]
fn simulated_rpm_concentrates_around_the_closed_form() {
    let mut rng = stream_rng(1, "test.rpm", 0);
    let outcomes: Vec<Outcome> = (0..100_000)
        .map(|_| {
            let payments: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let ctrs: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..0.5)).collect();
            Outcome { allocation: Allocation::new(vec![0, 1, 2]), payments, ctrs }
        })
        .collect();
    let m = rpm_ctr(&outcomes, 9);
    let imp = 300_000.0;
    let var_paid: f64 = outcomes.iter().flat_map(|o| o.payments.iter().zip(&o.ctrs)).map(|(p, t)| p * p * t * (1.0 - t)).sum();
    let var_clicks: f64 = outcomes.iter().flat_map(|o| o.ctrs.iter()).map(|t| t * (1.0 - t)).sum();
    let sd_rpm = 1000.0 * var_paid.sqrt() / imp;
    let sd_ctr = var_clicks.sqrt() / imp;
    assert!((m.rpm - m.expected_rpm).abs() <= 2.0 * sd_rpm, "{} vs {} (sd {sd_rpm})", m.rpm, m.expected_rpm);
    assert!((m.ctr - m.expected_ctr).abs() <= 2.0 * sd_ctr, "{} vs {} (sd {sd_ctr})", m.ctr, m.expected_ctr);
    assert_eq!(m.slot_ctr.len(), 3);
}

#[test]
fn report_rows_follow_the_closed_form_and_stay_nonnegative() {
    let exp = Experiment::new(tiny()).unwrap();
    let models = exp.train_all().unwrap().into_iter().map(|(n, t)| (n, t.model)).collect();
    let report = exp.report(&models).unwrap();
    assert_eq!(report.rows.iter().map(|r| r.mechanism.as_str()).collect::<Vec<_>>(), ["gsp", "vcg", "optimal", "cga"]);
    for r in &report.rows {
        assert!(r.psi >= 0.0 && r.rpm >= 0.0, "{r:?}");
        assert_eq!(r.slot_ctr.len(), 2);
        let mean: f64 = r.slot_ctr.iter().sum::<f64>() / 2.0;
        assert!((mean - r.expected_ctr).abs() < 1e-12);
        assert_eq!((r.seed, r.runtime_ms, r.config_hash.as_str()), (3, 0.0, exp.cfg.hash().as_str()));
    }
}

#[test]
fn same_config_gives_identical_reports() {
    let a = run_experiment(&tiny()).unwrap();
    let b = run_experiment(&tiny()).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.to_json(), b.to_json());
    let c = run_experiment(&tiny().with_seed(4)).unwrap();
    assert_ne!(a.to_csv(), c.to_csv());
}

#[test]
fn ablation_emits_six_rows() {
    let mut cfg = tiny();
    cfg.mechanisms = vec!["ablation".into()];
    cfg.eval.psi_instances = 1;
    let report = run_experiment(&cfg).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.mechanism.as_str()).collect();
    assert_eq!(names, ["cga", "cga-theta", "cga-end2end", "cga-rself", "cga-rexternal", "cga-phi"]);
}

#[test]
fn unit_grid_has_no_regret_and_vcg_is_truthful() {
    let mut cfg = tiny();
    cfg.eval.psi_instances = 30;
    cfg.eval.grid = vec![1.0];
    let exp = Experiment::new(cfg.clone()).unwrap();
    let gsp = exp.evaluate("gsp", &Contender::Baseline(exp.baseline("gsp").unwrap())).unwrap();
    assert_eq!(gsp.psi, 0.0);

    cfg.eval.grid = aforge_core::regret::default_grid();
    cfg.eval.redraws = 3;
    let exp = Experiment::new(cfg).unwrap();
    let vcg = exp.evaluate("vcg", &Contender::Baseline(exp.baseline("vcg").unwrap())).unwrap();
    assert!(vcg.psi < 0.005, "{vcg:?}");
    let gsp = exp.evaluate("gsp", &Contender::Baseline(exp.baseline("gsp").unwrap())).unwrap();
    assert!(gsp.psi > 0.05, "{gsp:?}");
}

#[test]
fn pay_your_bid_has_regret_but_no_truthful_utility() {
    let exp = Experiment::new(tiny()).unwrap();
    let mech = exp.baseline("pay-your-bid").unwrap();
    let cfg = RegretConfig { redraws: 1, ..exp.cfg.regret() };
    let (mut regret, mut winners) = (0.0, 0);
    for (i, inst) in exp.eval_instances().iter().enumerate() {
        let term = psi_term(mech.as_ref(), inst, &exp.world, &cfg, i as u64).unwrap();
        assert_eq!(term.counted, 0);
        winners += term.skipped;
        regret += term.regrets.iter().map(|r| r.regret).sum::<f64>();
    }
    assert!(winners > 0 && regret > 0.0);
    let row = exp.evaluate("pay-your-bid", &Contender::Baseline(mech)).unwrap();
    assert_eq!((row.psi, row.psi_skipped), (0.0, 10));
}

#[test]
fn optimal_revenue_is_at_least_vcg() {
    let mut cfg = tiny();
    cfg.data.eval = 400;
    cfg.eval.psi_instances = 1;
    cfg.eval.mc_samples = 400;
    let exp = Experiment::new(cfg).unwrap();
    let opt = exp.evaluate("optimal", &Contender::Baseline(exp.baseline("optimal").unwrap())).unwrap();
    let vcg = exp.evaluate("vcg", &Contender::Baseline(exp.baseline("vcg").unwrap())).unwrap();
    assert!(opt.expected_rpm >= vcg.expected_rpm, "{} < {}", opt.expected_rpm, vcg.expected_rpm);
}

#[test]
fn cli_pipeline_matches_the_in_memory_run() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), TINY).unwrap();
    let out = aforge(dir.path(), &["run", "--config", "c.json", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("run/report.csv")).unwrap();
    assert_eq!(csv, run_experiment(&tiny()).unwrap().to_csv());
    let json: Report = serde_json::from_slice(&std::fs::read(dir.path().join("run/report.json")).unwrap()).unwrap();
    assert_eq!(json.rows.len(), 4);
    let slots = std::fs::read_to_string(dir.path().join("run/slot_ctr.csv")).unwrap();
    assert_eq!(slots.lines().count(), 1 + 4 * 2);
}

#[test]
fn staged_cli_reports_missing_checkpoints_and_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("c.json"), TINY).unwrap();
    std::fs::write(p.join("bad.json"), r#"{"world": {"n": 4}, "extra": 1}"#).unwrap();
    std::fs::write(p.join("grid.json"), r#"{"eval": {"grid": [0.5, 2.0]}}"#).unwrap();
    std::fs::write(p.join("huge.json"), r#"{"world": {"n": 30, "k": 8}, "data": {"train": 5, "eval": 2}}"#).unwrap();

    for cfg in ["bad.json", "grid.json"] {
        assert_eq!(aforge(p, &["gen", "--config", cfg, "--out", "x.jsonl"]).status.code(), Some(2));
    }
    assert_eq!(aforge(p, &["gen", "--config", "missing.json", "--out", "x.jsonl"]).status.code(), Some(3));
    let out = aforge(p, &["train", "payment", "--config", "c.json", "--ckpt", "ckpt"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("aforge train generator --variant cga"));
    let out = aforge(p, &["eval", "--config", "huge.json", "--mechanisms", "optimal", "--report", "r.csv"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(aforge(p, &["eval", "--config", "c.json", "--mechanisms", "nope"]).status.code(), Some(2));

    for args in [
        vec!["gen", "--config", "c.json", "--out", "d/train.jsonl"],
        vec!["train", "evaluator", "--config", "c.json", "--data", "d/train.jsonl", "--ckpt", "ckpt"],
        vec!["train", "generator", "--config", "c.json", "--data", "d/train.jsonl", "--ckpt", "ckpt"],
        vec!["train", "payment", "--config", "c.json", "--data", "d/train.jsonl", "--ckpt", "ckpt"],
        vec!["eval", "--config", "c.json", "--ckpt", "ckpt", "--report", "r.csv"],
    ] {
        let out = aforge(p, &args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let staged = std::fs::read_to_string(p.join("r.csv")).unwrap();
    assert_eq!(staged, run_experiment(&tiny()).unwrap().to_csv());
}

#[test]
fn oracle_subcommands_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = aforge(dir.path(), &["oracle", "--check", "monotonicity", "--instances", "10", "--grid", "11"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("PASS monotonicity"));
    std::fs::write(dir.path().join("c.json"), TINY).unwrap();
    let out = aforge(dir.path(), &["oracle", "--mechanism", "optimal", "--mc-samples", "30", "--config", "c.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().nth(1).unwrap().starts_with("optimal,"));
    assert_eq!(aforge(dir.path(), &["oracle", "--check", "nonsense"]).status.code(), Some(2));
}
