//! Delayed feedback model: a logistic conversion model joined with an
//! exponential delay whose hazard is log-linear in the features.
//!
//! Per-sample negative log-likelihood, with `p = sigmoid(a·x + a0)` and
//! `λ = exp(b·x + b0)`:
//!
//! ```text
//! observed conversion:   −ln p − ln λ + λ·d
//! not yet observed:      −ln(1 − p + p·exp(−λ·e))
//! ```

use serde::{Deserialize, Serialize};

use crate::data::TrainingData;
use crate::error::{Error, Result};
use crate::losses::{LabeledBatch, Objective};
use crate::model::{dot, log_sigmoid, sigmoid, LinearSigmoidModel, OptimizerState};

use super::{check_finite, diverged, relative_change, EpochLoss, Shuffler, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DfmModel {
    pub conversion: LinearSigmoidModel,
    /// `[weights..., bias]` of the log hazard.
    pub hazard: Vec<f64>,
}

impl DfmModel {
    pub fn zeros(p: usize) -> Self {
        Self {
            conversion: LinearSigmoidModel::zeros(p),
            hazard: vec![0.0; p + 1],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.hazard.len() - 1
    }

    #[inline]
    fn log_hazard(&self, x: &[f64]) -> f64 {
        let p = x.len();
        dot(&self.hazard[..p], x) + self.hazard[p]
    }

    /// Delay hazard rate `λ(x) > 0`, in events per day.
    pub fn hazard_rate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                got: x.len(),
            });
        }
        Ok(self.log_hazard(x).exp())
    }

    /// Eventual-conversion probability `p(x)`, used as the CVR prediction.
    pub fn predict_cvr(&self, x: &[f64]) -> Result<f64> {
        self.conversion.predict_cvr(x)
    }

    /// Parameters as `[conversion..., hazard...]`, the layout of [`dfm_objective`] gradients.
    pub fn params(&self) -> Vec<f64> {
        let mut v = self.conversion.params().to_vec();
        v.extend_from_slice(&self.hazard);
        v
    }

    pub fn from_params(p: usize, params: &[f64]) -> Result<Self> {
        if params.len() != 2 * (p + 1) {
            return Err(Error::DimensionMismatch {
                expected: 2 * (p + 1),
                got: params.len(),
            });
        }
        Ok(Self {
            conversion: LinearSigmoidModel::from_parts(params[..p].to_vec(), params[p])?,
            hazard: params[p + 1..].to_vec(),
        })
    }
}

/// `ln(exp(a) + exp(b))`.
#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Loss and gradient of the mean negative log-likelihood.
/// `delays[i]` is only read for observed conversions.
pub fn dfm_objective(model: &DfmModel, batch: &LabeledBatch<'_>, delays: &[Option<f64>]) -> Result<Objective> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if delays.len() != n {
        return Err(Error::invalid(format!("{} delays for {n} samples", delays.len())));
    }
    let p = model.feature_dim();
    let mut grad = vec![0.0; 2 * (p + 1)];
    let mut loss = 0.0;
    for i in 0..n {
        let x = batch.features[i];
        if x.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: x.len(),
            });
        }
        let zc = model.conversion.logit_unchecked(x, 0.0);
        let zd = model.log_hazard(x);
        let lambda = zd.exp();
        let prob = sigmoid(zc);
        let (gc, gd) = if batch.y_obs[i] {
            let d = delays[i].ok_or(Error::MissingField { field: "d", index: i })?;
            loss += -log_sigmoid(zc) - zd + lambda * d;
            (prob - 1.0, lambda * d - 1.0)
        } else {
            let e = batch.elapsed[i];
            let survival_term = log_sigmoid(zc) - lambda * e;
            // ln(1 − p + p·exp(−λe))
            let log_mix = log_add_exp(log_sigmoid(-zc), survival_term);
            loss -= log_mix;
            let one_minus_s = -(-lambda * e).exp_m1();
            let s_over = (survival_term - log_mix).exp(); // p·s / (1 − p + p·s)
            let gc = one_minus_s * (log_sigmoid(zc) + log_sigmoid(-zc) - log_mix).exp();
            let gd = if s_over == 0.0 { 0.0 } else { s_over * lambda * e };
            (gc, gd)
        };
        for (g, &xj) in grad[..p].iter_mut().zip(x) {
            *g += gc * xj;
        }
        grad[p] += gc;
        for (g, &xj) in grad[p + 1..2 * p + 1].iter_mut().zip(x) {
            *g += gd * xj;
        }
        grad[2 * p + 1] += gd;
    }
    let scale = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(Objective {
        loss: loss * scale,
        grad,
        clipped: 0,
    })
}

pub fn dfm_negative_log_likelihood(
    model: &DfmModel,
    batch: &LabeledBatch<'_>,
    delays: &[Option<f64>],
) -> Result<f64> {
    Ok(dfm_objective(model, batch, delays)?.loss)
}

pub fn train_dfm(data: &TrainingData, config: &TrainConfig) -> Result<(DfmModel, TrainReport)> {
    config.validate_for(data.len())?;
    data.require_delays()?;
    let p = data.dim();
    let mut rng = config.init_rng();
    let conversion = LinearSigmoidModel::init(p, false, config.init, &mut rng)?;
    let hazard_init = LinearSigmoidModel::init(p, false, config.init, &mut rng)?;
    let mut params = conversion.params().to_vec();
    params.extend_from_slice(hazard_init.params());
    let mut model = DfmModel::from_params(p, &params)?;
    let mut opt = OptimizerState::new(config.optimizer, params.len());
    let mut shuffler = Shuffler::new(data.len(), config.seed);

    let mut curve = Vec::new();
    let mut converged = false;
    let mut prev: Option<f64> = None;
    for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        for chunk in shuffler.next_epoch().chunks(config.batch_size) {
            let batch = data.batch(chunk);
            let delays: Vec<Option<f64>> = chunk.iter().map(|&i| data.delay[i]).collect();
            let obj = dfm_objective(&model, &batch, &delays)?;
            total += obj.loss * chunk.len() as f64;
            opt.update(&mut params, &obj.grad, config.learning_rate)
                .map_err(|e| diverged(epoch, e))?;
            model = DfmModel::from_params(p, &params).map_err(|e| Error::TrainingDiverged {
                epoch,
                reason: e.to_string(),
            })?;
        }
        let loss = total / data.len() as f64;
        check_finite(epoch, "DFM loss", loss)?;
        curve.push(EpochLoss {
            epoch,
            loss,
            propensity_loss: None,
        });
        if let Some(pl) = prev {
            if relative_change(pl, loss) < config.convergence_tol {
                converged = true;
                break;
            }
        }
        prev = Some(loss);
    }
    let last = curve.last().expect("at least one epoch runs");
    let report = TrainReport {
        epochs: last.epoch,
        final_loss: last.loss,
        final_propensity_loss: None,
        clip_activations: 0,
        converged,
        curve,
    };
    Ok((model, report))
}
