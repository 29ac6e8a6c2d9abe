//! Experiment configuration: one JSON document, unknown keys rejected.

use std::path::Path;

use aforge_cga::{ModelConfig, TrainConfig, Variant};
use aforge_core::regret::default_grid;
use aforge_core::WorldConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Expands to the six ablation rows.
pub const ABLATION: &str = "ablation";

/// Baseline mechanism names accepted in `mechanisms`.
pub const BASELINES: [&str; 4] = ["gsp", "vcg", "optimal", "pay-your-bid"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Logged auctions for training.
    pub train: usize,
    /// Held-out auctions for evaluation.
    pub eval: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { train: 5000, eval: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Held-out auctions (from the front of the eval set) used for Ψ.
    pub psi_instances: usize,
    /// Valuation draws per ad in Ψ (`L`).
    pub redraws: usize,
    pub grid: Vec<f64>,
    /// Monte Carlo samples per payment of the optimal mechanism (`S`).
    pub mc_samples: usize,
    /// Write measured decision times; off gives byte-reproducible reports.
    pub record_runtime: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { psi_instances: 200, redraws: 5, grid: default_grid(), mc_samples: 2000, record_runtime: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When set, replaces the world and training seeds.
    pub seed: Option<u64>,
    pub world: WorldConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub mechanisms: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: None,
            world: WorldConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            mechanisms: ["gsp", "vcg", "optimal", "cga"].map(String::from).to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg.resolved())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Copy with every seed replaced by `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed: Some(seed), ..self.clone() }.resolved()
    }

    fn resolved(mut self) -> Self {
        if let Some(s) = self.seed {
            self.world.seed = s;
            self.train.seed = s;
        }
        self
    }

    /// The seed every stream of the run derives from.
    pub fn master_seed(&self) -> u64 {
        self.seed.unwrap_or(self.world.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(HarnessError::Config(m));
        self.world.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.model.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.model.d_a != self.world.d_a || self.model.d_u != self.world.d_u {
            return cfg_err(format!(
                "model feature sizes ({}, {}) differ from the world's ({}, {})",
                self.model.d_a, self.model.d_u, self.world.d_a, self.world.d_u
            ));
        }
        if self.data.train == 0 || self.data.eval == 0 {
            return cfg_err("data.train and data.eval must be positive".into());
        }
        if !self.eval.grid.contains(&1.0) {
            return cfg_err("eval.grid must contain 1.0".into());
        }
        if self.eval.redraws == 0 {
            return cfg_err("eval.redraws must be at least 1".into());
        }
        if self.eval.mc_samples == 0 {
            return cfg_err("eval.mc_samples must be positive".into());
        }
        self.mechanism_names()?;
        Ok(())
    }

    /// `mechanisms` with `ablation` expanded, duplicates removed, order kept.
    pub fn mechanism_names(&self) -> Result<Vec<String>> {
        expand_mechanisms(&self.mechanisms)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }

    /// Regret settings for Ψ.
    pub fn regret(&self) -> aforge_core::RegretConfig {
        aforge_core::RegretConfig { grid: self.eval.grid.clone(), redraws: self.eval.redraws, seed: self.master_seed() }
    }
}

pub fn expand_mechanisms(names: &[String]) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for name in names {
        let group: Vec<String> = if name == ABLATION {
            Variant::ablation_matrix().iter().map(Variant::name).collect()
        } else if BASELINES.contains(&name.as_str()) || Variant::from_name(name).is_ok() {
            vec![name.clone()]
        } else {
            return Err(HarnessError::Config(format!(
                "unknown mechanism `{name}`; expected one of {}, a cga variant name or `{ABLATION}`",
                BASELINES.join(", ")
            )));
        };
        for g in group {
            if !out.contains(&g) {
                out.push(g);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_is_stable() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        assert_ne!(cfg.with_seed(3).hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for text in [
            r#"{"wrold": {}}"#,
            r#"{"world": {"n": 3, "k": 5}}"#,
            r#"{"eval": {"grid": [0.5]}}"#,
            r#"{"mechanisms": ["gsp", "magic"]}"#,
            r#"{"train": {"rho": -1}}"#,
            "not json",
        ] {
            let err = ExperimentConfig::from_json(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn seed_override_reaches_every_stream() {
        let cfg = ExperimentConfig::from_json(r#"{"seed": 9}"#).unwrap();
        assert_eq!((cfg.world.seed, cfg.train.seed, cfg.master_seed()), (9, 9, 9));
    }

    #[test]
    fn ablation_expands_to_six_rows() {
        let names = expand_mechanisms(&["gsp".into(), "ablation".into(), "cga".into()]).unwrap();
        assert_eq!(names.len(), 7);
        assert_eq!(names[1], "cga");
    }
}
