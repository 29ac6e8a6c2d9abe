//! The learned auction: a generator proposing slates, an evaluator scoring
//! them with permutation-aware CTRs, and a payment network trained against
//! ex-post regret.

pub mod batch;
pub mod config;
mod error;
pub mod evaluator;
pub mod generator;
pub mod model;
pub mod payment;
pub mod rewards;
pub mod train;

pub use batch::{AdBatch, SlateBatch};
pub use config::{ModelConfig, TrainConfig, Variant};
pub use error::{CgaError, Result};
pub use evaluator::{pointwise_log_loss, Evaluator, EvaluatorVars, PointwiseScorer, SlateScorer};
pub use generator::{Encoded, Generation, Generator, Mode};
pub use model::{Allocated, Cga, Scorer};
pub use payment::PaymentNet;
pub use rewards::{rewards, Rewards};
pub use train::{train_generator, train_payment, GeneratorEpoch, PaymentEpoch, TrainState};
