//! Linear sigmoid models shared by the CVR predictor and the propensity
//! estimator, plus the optimizer both trainers step with.
//!
//! A model keeps its parameters in one contiguous buffer laid out as
//! `[weights..., bias]`, which is also the layout of every gradient in this
//! crate.

use std::ops::Deref;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest double strictly below one.
pub const PROB_MAX: f64 = 1.0 - f64::EPSILON / 2.0;
pub const PROB_MIN: f64 = f64::MIN_POSITIVE;

/// Logistic function, clamped so the result is strictly inside (0, 1).
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(PROB_MIN, PROB_MAX)
}

/// `ln(1 + exp(z))` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `ln(sigmoid(z))`, exact in the tails where `sigmoid` saturates.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// A finite, fixed-length feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("feature {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn with_dim(values: Vec<f64>, dim: usize) -> Result<Self> {
        if values.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: values.len(),
            });
        }
        Self::new(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// How fresh parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    #[default]
    Zeros,
    Gaussian { std: f64 },
}

/// Logistic regression `sigmoid(w·x + b)`.
///
/// When `augmented_with_elapsed` is set the model is a propensity estimator
/// and expects `[x; e]`, so its weight vector is one longer than the raw
/// feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelRepr", try_from = "ModelRepr")]
pub struct LinearSigmoidModel {
    params: Vec<f64>,
    augmented_with_elapsed: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRepr {
    weights: Vec<f64>,
    bias: f64,
    augmented_with_elapsed: bool,
}

impl From<LinearSigmoidModel> for ModelRepr {
    fn from(m: LinearSigmoidModel) -> Self {
        let mut params = m.params;
        let bias = params.pop().unwrap_or(0.0);
        ModelRepr {
            weights: params,
            bias,
            augmented_with_elapsed: m.augmented_with_elapsed,
        }
    }
}

impl TryFrom<ModelRepr> for LinearSigmoidModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        let mut m = LinearSigmoidModel::from_parts(r.weights, r.bias)?;
        m.augmented_with_elapsed = r.augmented_with_elapsed;
        Ok(m)
    }
}

impl LinearSigmoidModel {
    /// Zero-initialised CVR predictor over `p` features.
    pub fn zeros(p: usize) -> Self {
        Self {
            params: vec![0.0; p + 1],
            augmented_with_elapsed: false,
        }
    }

    /// Zero-initialised propensity estimator over `p` features plus elapsed time.
    pub fn zeros_propensity(p: usize) -> Self {
        Self {
            params: vec![0.0; p + 2],
            augmented_with_elapsed: true,
        }
    }

    pub fn init(p: usize, augmented: bool, init: Init, rng: &mut ChaCha20Rng) -> Result<Self> {
        let mut model = if augmented {
            Self::zeros_propensity(p)
        } else {
            Self::zeros(p)
        };
        if let Init::Gaussian { std } = init {
            let normal = Normal::new(0.0, std)
                .map_err(|e| Error::Config(format!("init std {std}: {e}")))?;
            for v in model.params.iter_mut() {
                *v = normal.sample(rng);
            }
        }
        Ok(model)
    }

    pub fn from_parts(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.iter().chain(Some(&bias)).any(|v| !v.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        let mut params = weights;
        params.push(bias);
        Ok(Self {
            params,
            augmented_with_elapsed: false,
        })
    }

    /// Marks the model as a propensity estimator over `[x; e]`.
    pub fn into_propensity(mut self) -> Result<Self> {
        if self.params.len() < 2 {
            return Err(Error::invalid("propensity model needs an elapsed-time weight"));
        }
        self.augmented_with_elapsed = true;
        Ok(self)
    }

    pub fn is_propensity(&self) -> bool {
        self.augmented_with_elapsed
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.params.len() - 1]
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        let n = self.params.len() - 1;
        &mut self.params[..n]
    }

    pub fn bias(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    pub fn set_bias(&mut self, b: f64) {
        let n = self.params.len() - 1;
        self.params[n] = b;
    }

    /// Parameters as `[weights..., bias]`.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Dimension of the raw feature vector `x` (excludes elapsed time).
    pub fn feature_dim(&self) -> usize {
        self.params.len() - 1 - usize::from(self.augmented_with_elapsed)
    }

    /// Logit for raw features `x` and, for propensity models, elapsed time `e`.
    /// Dimensions are not checked.
    #[inline]
    pub(crate) fn logit_unchecked(&self, x: &[f64], e: f64) -> f64 {
        let p = x.len();
        let mut z = dot(&self.params[..p], x) + self.params[self.params.len() - 1];
        if self.augmented_with_elapsed {
            z += self.params[p] * e;
        }
        z
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        if self.augmented_with_elapsed {
            return Err(Error::invalid("propensity model requires elapsed time"));
        }
        self.check_dim(x)?;
        Ok(self.logit_unchecked(x, 0.0))
    }

    pub fn predict_cvr(&self, x: &[f64]) -> Result<f64> {
        self.logit(x).map(sigmoid)
    }

    pub fn propensity_logit(&self, x: &[f64], e: f64) -> Result<f64> {
        if !self.augmented_with_elapsed {
            return Err(Error::invalid("CVR model has no elapsed-time weight"));
        }
        if !(e >= 0.0) || !e.is_finite() {
            return Err(Error::invalid(format!("elapsed time must be finite and >= 0, got {e}")));
        }
        self.check_dim(x)?;
        Ok(self.logit_unchecked(x, e))
    }

    pub fn predict_propensity(&self, x: &[f64], e: f64) -> Result<f64> {
        self.propensity_logit(x, e).map(sigmoid)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        let expected = self.feature_dim();
        if x.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// One optimizer update with gradient laid out as `[weights..., bias]`.
    pub fn apply_gradient_step(
        &mut self,
        state: &mut OptimizerState,
        grad: &[f64],
        lr: f64,
    ) -> Result<()> {
        state.update(&mut self.params, grad, lr)
    }
}

/// Update rule applied by [`OptimizerState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Moment accumulators and step counter for one parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    optimizer: Optimizer,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer, n_params: usize) -> Self {
        let n = if optimizer == Optimizer::Adam { n_params } else { 0 };
        Self {
            optimizer,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn optimizer(&self) -> Optimizer {
        self.optimizer
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                got: grad.len(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { step: self.step });
        }
        self.step += 1;
        match self.optimizer {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for (i, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
                    let m = &mut self.first_moment[i];
                    let v = &mut self.second_moment[i];
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

/// Draws a parameter vector for tests and initialisation helpers.
pub(crate) fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, std).expect("std is finite and positive");
    (0..n).map(|_| normal.sample(rng)).collect()
}
