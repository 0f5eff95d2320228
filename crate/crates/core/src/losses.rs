//! Loss estimators for learning under delayed feedback.
//!
//! The CVR predictor `f` is trained with inverse-propensity weights
//! `y_obs / θ` and the propensity estimator `g` with inverse-CVR weights
//! `y_obs / γ`. Both share one summand,
//!
//! ```text
//! ℓ_i = w_i · δ1_i + (1 − w_i) · δ0_i,    w_i = y_obs_i / clamp(denominator_i)
//! ```
//!
//! so the two estimators differ only in which model is evaluated and which
//! quantity sits in the denominator. `δ1 = −ln p` and `δ0 = −ln(1 − p)`.
//!
//! All reductions run left to right over the batch so results do not depend
//! on how callers schedule work.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{softplus, sigmoid, LinearSigmoidModel};

pub const DEFAULT_CLIP: f64 = 0.01;

/// Per-sample cross-entropy losses for a positive and a negative label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaPair {
    pub delta1: f64,
    pub delta0: f64,
}

impl DeltaPair {
    /// Deltas computed from the logit, exact where the probability saturates.
    #[inline]
    pub fn from_logit(z: f64) -> Self {
        Self {
            delta1: softplus(-z),
            delta0: softplus(z),
        }
    }

    #[inline]
    pub fn weighted(&self, w: f64) -> f64 {
        w * self.delta1 + (1.0 - w) * self.delta0
    }
}

pub fn cross_entropy_deltas(pred: f64) -> Result<DeltaPair> {
    if !(0.0..=1.0).contains(&pred) {
        return Err(Error::invalid(format!("prediction {pred} is outside [0, 1]")));
    }
    Ok(DeltaPair {
        delta1: -pred.ln(),
        delta0: -(1.0 - pred).ln(),
    })
}

/// Lower bound applied to inverse-weight denominators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Option<f64>", into = "Option<f64>")]
pub struct ClipPolicy {
    epsilon: Option<f64>,
}

impl Default for ClipPolicy {
    fn default() -> Self {
        Self {
            epsilon: Some(DEFAULT_CLIP),
        }
    }
}

impl TryFrom<Option<f64>> for ClipPolicy {
    type Error = Error;

    fn try_from(eps: Option<f64>) -> Result<Self> {
        match eps {
            Some(e) => Self::new(e),
            None => Ok(Self::disabled()),
        }
    }
}

impl From<ClipPolicy> for Option<f64> {
    fn from(c: ClipPolicy) -> Self {
        c.epsilon
    }
}

impl ClipPolicy {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::Config(format!(
                "clip epsilon must lie in (0, 0.5), got {epsilon}"
            )));
        }
        Ok(Self {
            epsilon: Some(epsilon),
        })
    }

    pub fn disabled() -> Self {
        Self { epsilon: None }
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    /// Clamps `d` into `[epsilon, 1]`; the flag reports whether the lower bound bit.
    #[inline]
    pub fn clamp(&self, d: f64) -> (f64, bool) {
        match self.epsilon {
            Some(eps) if d < eps => (eps, true),
            _ => (d.min(1.0), false),
        }
    }
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::invalid(format!(
            "{what} has length {got}, expected {expected}"
        )));
    }
    Ok(())
}

fn check_nonempty(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    Ok(())
}

#[inline]
fn inverse_weight(y_obs: bool, denominator: f64, clip: &ClipPolicy, index: usize) -> Result<(f64, f64, bool)> {
    if !(0.0..=1.0).contains(&denominator) {
        return Err(Error::invalid(format!(
            "denominator {denominator} at index {index} is outside [0, 1]"
        )));
    }
    let (d, clipped) = clip.clamp(denominator);
    if !y_obs {
        return Ok((0.0, d, clipped));
    }
    if d == 0.0 {
        return Err(Error::DivisionGuard { index });
    }
    Ok((1.0 / d, d, clipped))
}

/// Mean binary cross entropy against the true labels.
pub fn ideal_loss(preds: &[f64], y_true: Option<&[bool]>) -> Result<f64> {
    let y_true = y_true.ok_or(Error::UnavailableGroundTruth("y_true"))?;
    check_len("y_true", preds.len(), y_true.len())?;
    check_nonempty(preds.len())?;
    let mut total = 0.0;
    for (&p, &y) in preds.iter().zip(y_true) {
        let d = cross_entropy_deltas(p)?;
        total += if y { d.delta1 } else { d.delta0 };
    }
    Ok(total / preds.len() as f64)
}

/// Per-sample inverse-weighted summands and the denominators they used.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTerms {
    pub terms: Vec<f64>,
    pub clamped_denominators: Vec<f64>,
    pub clipped: usize,
}

pub fn weighted_terms(
    preds: &[f64],
    y_obs: &[bool],
    denominators: &[f64],
    clip: &ClipPolicy,
) -> Result<WeightedTerms> {
    check_len("y_obs", preds.len(), y_obs.len())?;
    check_len("denominators", preds.len(), denominators.len())?;
    let mut out = WeightedTerms {
        terms: Vec::with_capacity(preds.len()),
        clamped_denominators: Vec::with_capacity(preds.len()),
        clipped: 0,
    };
    for (i, ((&p, &y), &d)) in preds.iter().zip(y_obs).zip(denominators).enumerate() {
        let (w, used, clipped) = inverse_weight(y, d, clip, i)?;
        out.terms.push(cross_entropy_deltas(p)?.weighted(w));
        out.clamped_denominators.push(used);
        out.clipped += usize::from(clipped);
    }
    Ok(out)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Inverse-propensity-weighted estimate of the CVR ideal loss.
/// Not bounded below: observed positives carry weights above one.
pub fn ips_loss(preds: &[f64], y_obs: &[bool], propensities: &[f64], clip: &ClipPolicy) -> Result<f64> {
    check_nonempty(preds.len())?;
    Ok(mean(&weighted_terms(preds, y_obs, propensities, clip)?.terms))
}

/// Inverse-CVR-weighted estimate of the propensity ideal loss.
pub fn icvr_loss(preds_g: &[f64], y_obs: &[bool], cvrs: &[f64], clip: &ClipPolicy) -> Result<f64> {
    check_nonempty(preds_g.len())?;
    Ok(mean(&weighted_terms(preds_g, y_obs, cvrs, clip)?.terms))
}

/// Mean of per-sample summands clamped at zero.
pub fn nonneg_loss(per_sample: &[f64]) -> f64 {
    if per_sample.is_empty() {
        return 0.0;
    }
    per_sample.iter().map(|&l| l.max(0.0)).sum::<f64>() / per_sample.len() as f64
}

fn weighted_variance(outcome_prob: &[f64], denominators: &[f64], deltas: &[DeltaPair]) -> Result<f64> {
    let n = outcome_prob.len();
    check_len("denominators", n, denominators.len())?;
    check_len("deltas", n, deltas.len())?;
    check_nonempty(n)?;
    let mut total = 0.0;
    for (i, ((&q, &d), dp)) in outcome_prob.iter().zip(denominators).zip(deltas).enumerate() {
        if d == 0.0 {
            return Err(Error::DivisionGuard { index: i });
        }
        let diff = dp.delta1 - dp.delta0;
        total += q * (1.0 / d - q) * diff * diff;
    }
    Ok(total / (n as f64 * n as f64))
}

/// Variance of the IPS estimator given true CVRs and propensities.
pub fn ips_variance(gammas: &[f64], thetas: &[f64], deltas: &[DeltaPair]) -> Result<f64> {
    weighted_variance(gammas, thetas, deltas)
}

/// Variance of the ICVR estimator: the IPS formula with γ and θ swapped.
pub fn icvr_variance(thetas: &[f64], gammas: &[f64], deltas_g: &[DeltaPair]) -> Result<f64> {
    weighted_variance(thetas, gammas, deltas_g)
}

/// A mini-batch of click records, borrowed from a training set.
#[derive(Debug, Clone)]
pub struct LabeledBatch<'a> {
    pub features: Vec<&'a [f64]>,
    pub elapsed: Vec<f64>,
    pub y_obs: Vec<bool>,
    pub y_true: Option<Vec<bool>>,
    pub o_true: Option<Vec<bool>>,
}

impl<'a> LabeledBatch<'a> {
    pub fn new(
        features: Vec<&'a [f64]>,
        elapsed: Vec<f64>,
        y_obs: Vec<bool>,
        y_true: Option<Vec<bool>>,
        o_true: Option<Vec<bool>>,
    ) -> Result<Self> {
        let n = features.len();
        check_len("elapsed", n, elapsed.len())?;
        check_len("y_obs", n, y_obs.len())?;
        if let Some(e) = elapsed.iter().find(|e| !(**e >= 0.0)) {
            return Err(Error::invalid(format!("elapsed time {e} is negative")));
        }
        for (name, col) in [("y_true", &y_true), ("o_true", &o_true)] {
            if let Some(col) = col {
                check_len(name, n, col.len())?;
                if let Some(i) = (0..n).find(|&i| y_obs[i] && !col[i]) {
                    return Err(Error::invalid(format!("y_obs = 1 but {name} = 0 at index {i}")));
                }
            }
        }
        Ok(Self {
            features,
            elapsed,
            y_obs,
            y_true,
            o_true,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Which estimator a trainer minimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    Ips,
    #[default]
    Nonneg,
}

/// Loss value and gradient of one estimator on one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub clipped: usize,
}

/// Loss and exact gradient of the inverse-weighted estimator for `model`.
///
/// CVR models are evaluated on `x`, propensity models on `[x; e]`. The
/// denominators are constants: no gradient flows into whichever model
/// produced them. Under [`LossVariant::Nonneg`] a sample whose summand is
/// negative contributes nothing; a summand of exactly zero keeps its gradient.
pub fn inverse_weighted_objective(
    model: &LinearSigmoidModel,
    batch: &LabeledBatch<'_>,
    denominators: &[f64],
    clip: &ClipPolicy,
    variant: LossVariant,
) -> Result<Objective> {
    let n = batch.len();
    check_nonempty(n)?;
    check_len("denominators", n, denominators.len())?;
    let p = model.feature_dim();
    let mut grad = vec![0.0; model.n_params()];
    let mut loss = 0.0;
    let mut clipped = 0;
    for i in 0..n {
        let x = batch.features[i];
        if x.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: x.len(),
            });
        }
        let e = batch.elapsed[i];
        let (w, _, c) = inverse_weight(batch.y_obs[i], denominators[i], clip, i)?;
        clipped += usize::from(c);
        let z = model.logit_unchecked(x, e);
        let term = DeltaPair::from_logit(z).weighted(w);
        if variant == LossVariant::Nonneg && term < 0.0 {
            continue;
        }
        loss += term;
        // d ℓ / d z = σ(z) − w for cross-entropy deltas
        let coef = sigmoid(z) - w;
        for (g, &xj) in grad[..p].iter_mut().zip(x) {
            *g += coef * xj;
        }
        if model.is_propensity() {
            grad[p] += coef * e;
        }
        let last = grad.len() - 1;
        grad[last] += coef;
    }
    let scale = 1.0 / n as f64;
    for g in grad.iter_mut() {
        *g *= scale;
    }
    Ok(Objective {
        loss: loss * scale,
        grad,
        clipped,
    })
}

fn require_cvr_model(model: &LinearSigmoidModel) -> Result<()> {
    if model.is_propensity() {
        return Err(Error::invalid("expected a CVR model, got a propensity model"));
    }
    Ok(())
}

fn require_propensity_model(model: &LinearSigmoidModel) -> Result<()> {
    if !model.is_propensity() {
        return Err(Error::invalid("expected a propensity model, got a CVR model"));
    }
    Ok(())
}

pub fn grad_ips(
    model: &LinearSigmoidModel,
    batch: &LabeledBatch<'_>,
    propensities: &[f64],
    clip: &ClipPolicy,
) -> Result<Vec<f64>> {
    require_cvr_model(model)?;
    Ok(inverse_weighted_objective(model, batch, propensities, clip, LossVariant::Ips)?.grad)
}

pub fn grad_icvr(
    model: &LinearSigmoidModel,
    batch: &LabeledBatch<'_>,
    cvrs: &[f64],
    clip: &ClipPolicy,
) -> Result<Vec<f64>> {
    require_propensity_model(model)?;
    Ok(inverse_weighted_objective(model, batch, cvrs, clip, LossVariant::Ips)?.grad)
}

/// Subgradient of the clamped estimator; works for either model kind.
pub fn grad_nonneg(
    model: &LinearSigmoidModel,
    batch: &LabeledBatch<'_>,
    denominators: &[f64],
    clip: &ClipPolicy,
) -> Result<Vec<f64>> {
    Ok(inverse_weighted_objective(model, batch, denominators, clip, LossVariant::Nonneg)?.grad)
}
