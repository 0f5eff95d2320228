//! Mini-batch trainers: the dual learner for delayed feedback and the
//! Oracle, Naive and DFM baselines.
//!
//! Every trainer shuffles the full training set once per epoch with a
//! ChaCha20 stream keyed by the config seed and stops when the relative
//! change of the epoch loss drops below `convergence_tol` or after
//! `max_epochs`. The epoch loss is the sample-weighted mean of the batch
//! losses seen during that epoch.

mod dfm;
mod dla;
mod logistic;

pub use dfm::{dfm_negative_log_likelihood, dfm_objective, train_dfm, DfmModel};
pub use dla::{train_dla, train_dla_with, DlaOutput, PropensitySource};
pub use logistic::{train_naive, train_oracle};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{ClipPolicy, LossVariant};
use crate::model::{Init, Optimizer};
use crate::synthgen::stream;

const STREAM_SHUFFLE: u64 = 101;
const STREAM_INIT: u64 = 102;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub max_epochs: usize,
    pub convergence_tol: f64,
    pub clip: ClipPolicy,
    pub loss_variant: LossVariant,
    pub init: Init,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            learning_rate: 0.01,
            optimizer: Optimizer::Adam,
            max_epochs: 200,
            convergence_tol: 1e-5,
            clip: ClipPolicy::default(),
            loss_variant: LossVariant::Nonneg,
            init: Init::Zeros,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning_rate {}", self.learning_rate)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Config("convergence_tol must be > 0".into()));
        }
        if let Init::Gaussian { std } = self.init {
            if !(std > 0.0 && std.is_finite()) {
                return Err(Error::Config(format!("init std must be > 0, got {std}")));
            }
        }
        Ok(())
    }

    pub(crate) fn validate_for(&self, n: usize) -> Result<()> {
        self.validate()?;
        if self.batch_size > n {
            return Err(Error::Config(format!(
                "batch_size {} exceeds dataset size {n}",
                self.batch_size
            )));
        }
        Ok(())
    }

    pub(crate) fn init_rng(&self) -> ChaCha20Rng {
        stream(self.seed, STREAM_INIT)
    }
}

/// Losses logged at the end of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
    /// Propensity-estimator loss, for the dual learner.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub propensity_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub final_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_propensity_loss: Option<f64>,
    /// Denominators raised to the clip floor, summed over all updates.
    pub clip_activations: usize,
    pub converged: bool,
    pub curve: Vec<EpochLoss>,
}

impl TrainReport {
    /// Loss curve as `epoch,loss[,propensity_loss]` CSV.
    pub fn curve_csv(&self) -> String {
        let dual = self.curve.iter().any(|c| c.propensity_loss.is_some());
        let mut out = String::from(if dual { "epoch,loss,propensity_loss\n" } else { "epoch,loss\n" });
        for c in &self.curve {
            match c.propensity_loss {
                Some(p) if dual => out.push_str(&format!("{},{},{}\n", c.epoch, c.loss, p)),
                _ => out.push_str(&format!("{},{}\n", c.epoch, c.loss)),
            }
        }
        out
    }
}

/// Epoch-wise reshuffled index order.
pub(crate) struct Shuffler {
    order: Vec<usize>,
    rng: ChaCha20Rng,
}

impl Shuffler {
    pub(crate) fn new(n: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            rng: stream(seed, STREAM_SHUFFLE),
        }
    }

    pub(crate) fn next_epoch(&mut self) -> &[usize] {
        self.order.shuffle(&mut self.rng);
        &self.order
    }
}

pub(crate) fn relative_change(prev: f64, cur: f64) -> f64 {
    (cur - prev).abs() / prev.abs().max(1e-12)
}

pub(crate) fn diverged(epoch: usize, err: Error) -> Error {
    match err {
        Error::NonFiniteGradient { step } => Error::TrainingDiverged {
            epoch,
            reason: format!("non-finite gradient at step {step}"),
        },
        other => other,
    }
}

pub(crate) fn check_finite(epoch: usize, what: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::TrainingDiverged {
            epoch,
            reason: format!("{what} is {v}"),
        });
    }
    Ok(())
}
