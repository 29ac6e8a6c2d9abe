use aforge_core::regret::default_grid;
use serde::{Deserialize, Serialize};

use crate::error::{CgaError, Result};

/// Network sizes. The attention and payment sizes follow the reference
/// architecture (embedding 8, 4 heads, MLP hidden layers 128 and 32).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_a: usize,
    pub d_u: usize,
    pub embed: usize,
    pub heads: usize,
    /// Decoder state width (context vector and GRU hidden size).
    pub state: usize,
    pub score_hidden: usize,
    pub lstm_hidden: usize,
    pub head_hidden: Vec<usize>,
    pub payment_hidden: Vec<usize>,
    /// Position decay used to turn position-free pCTRs into point-wise
    /// per-slot CTRs `α`.
    pub alpha_decay: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_a: 4,
            d_u: 4,
            embed: 8,
            heads: 4,
            state: 32,
            score_hidden: 32,
            lstm_hidden: 16,
            head_hidden: vec![128, 32],
            payment_hidden: vec![128, 32],
            alpha_decay: 0.8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed == 0 || self.heads == 0 || self.embed % self.heads != 0 {
            return Err(CgaError::InvalidConfig(format!(
                "embedding size {} must be a positive multiple of the head count {}",
                self.embed, self.heads
            )));
        }
        if self.d_a == 0 || self.d_u == 0 || self.state == 0 || self.score_hidden == 0 || self.lstm_hidden == 0 {
            return Err(CgaError::InvalidConfig("layer widths must be positive".into()));
        }
        if !(self.alpha_decay > 0.0 && self.alpha_decay <= 1.0) {
            return Err(CgaError::InvalidConfig(format!("alpha_decay {} must lie in (0, 1]", self.alpha_decay)));
        }
        Ok(())
    }
}

/// Ablation switches. [`Variant::full`] is the complete mechanism; the other
/// constructors each remove one ingredient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Variant {
    /// Score slates with the learned evaluator; otherwise point-wise `α`.
    pub use_evaluator: bool,
    /// Train generator and payment network jointly on the Lagrangian
    /// instead of policy gradient followed by a frozen generator.
    pub end2end: bool,
    pub use_self_reward: bool,
    pub use_external_reward: bool,
    /// Weigh ads by virtual value; otherwise by bid.
    pub use_virtual_value: bool,
}

impl Default for Variant {
    fn default() -> Self {
        Self::full()
    }
}

impl Variant {
    pub const fn full() -> Self {
        Self {
            use_evaluator: true,
            end2end: false,
            use_self_reward: true,
            use_external_reward: true,
            use_virtual_value: true,
        }
    }

    pub const fn without_evaluator() -> Self {
        Self { use_evaluator: false, ..Self::full() }
    }

    pub const fn end_to_end() -> Self {
        Self { end2end: true, ..Self::full() }
    }

    pub const fn without_self_reward() -> Self {
        Self { use_self_reward: false, ..Self::full() }
    }

    pub const fn without_external_reward() -> Self {
        Self { use_external_reward: false, ..Self::full() }
    }

    pub const fn without_virtual_value() -> Self {
        Self { use_virtual_value: false, ..Self::full() }
    }

    /// The full mechanism followed by the five single-ingredient ablations.
    pub fn ablation_matrix() -> Vec<Variant> {
        vec![
            Self::full(),
            Self::without_evaluator(),
            Self::end_to_end(),
            Self::without_self_reward(),
            Self::without_external_reward(),
            Self::without_virtual_value(),
        ]
    }

    pub fn name(&self) -> String {
        let mut parts = vec!["cga".to_string()];
        if !self.use_evaluator {
            parts.push("theta".into());
        }
        if self.end2end {
            parts.push("end2end".into());
        }
        if !self.use_self_reward {
            parts.push("rself".into());
        }
        if !self.use_external_reward {
            parts.push("rexternal".into());
        }
        if !self.use_virtual_value {
            parts.push("phi".into());
        }
        parts.join("-")
    }

    /// Inverse of [`name`](Self::name).
    pub fn from_name(name: &str) -> Result<Self> {
        let mut parts = name.split('-');
        if parts.next() != Some("cga") {
            return Err(CgaError::InvalidConfig(format!("`{name}` is not a cga variant")));
        }
        let mut v = Self::full();
        for p in parts {
            match p {
                "theta" => v.use_evaluator = false,
                "end2end" => v.end2end = true,
                "rself" => v.use_self_reward = false,
                "rexternal" => v.use_external_reward = false,
                "phi" => v.use_virtual_value = false,
                other => return Err(CgaError::InvalidConfig(format!("unknown cga variant flag `{other}` in `{name}`"))),
            }
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub evaluator_epochs: usize,
    pub generator_epochs: usize,
    pub payment_epochs: usize,
    /// Quadratic regret penalty weight `ρ`.
    pub rho: f64,
    /// Starting value of every Lagrange multiplier.
    pub lambda_init: f64,
    /// Adam steps between two multiplier updates.
    pub lambda_interval: usize,
    /// Misreport factors for the training regret; must contain 1.0.
    pub grid: Vec<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 512,
            evaluator_epochs: 20,
            generator_epochs: 30,
            payment_epochs: 100,
            rho: 30.0,
            lambda_init: 5.0,
            lambda_interval: 10,
            grid: default_grid(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CgaError::InvalidConfig(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch == 0 {
            return Err(CgaError::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(CgaError::InvalidConfig(format!("rho {} must be positive", self.rho)));
        }
        if !(self.lambda_init >= 0.0 && self.lambda_init.is_finite()) {
            return Err(CgaError::InvalidConfig(format!("lambda_init {} must be nonnegative", self.lambda_init)));
        }
        if self.lambda_interval == 0 {
            return Err(CgaError::InvalidConfig("lambda_interval must be positive".into()));
        }
        if !self.grid.contains(&1.0) {
            return Err(CgaError::InvalidConfig("misreport grid must contain 1.0".into()));
        }
        Ok(())
    }
}
