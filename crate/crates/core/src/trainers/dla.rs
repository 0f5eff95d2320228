//! Dual learning for delayed feedback.
//!
//! Each iteration samples one mini-batch, takes a gradient step on the CVR
//! predictor `f` with inverse-propensity weights from the current `g`, then a
//! step on the propensity estimator `g` with inverse-CVR weights from the
//! freshly updated `f`. The model supplying the weights is held constant.

use crate::data::TrainingData;
use crate::error::{Error, Result};
use crate::losses::{inverse_weighted_objective, LabeledBatch};
use crate::model::{sigmoid, LinearSigmoidModel, OptimizerState};

use super::{check_finite, diverged, relative_change, EpochLoss, Shuffler, TrainConfig, TrainReport};

/// Where the CVR step takes its propensities from.
#[derive(Debug, Clone, PartialEq)]
pub enum PropensitySource {
    /// Learned jointly by alternating updates.
    Learned,
    /// Held fixed at the given per-sample values (e.g. the true θ); `g` is
    /// then never updated.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlaOutput {
    pub cvr: LinearSigmoidModel,
    pub propensity: LinearSigmoidModel,
    pub report: TrainReport,
}

pub fn train_dla(data: &TrainingData, config: &TrainConfig) -> Result<DlaOutput> {
    train_dla_with(data, config, &PropensitySource::Learned)
}

pub fn train_dla_with(
    data: &TrainingData,
    config: &TrainConfig,
    source: &PropensitySource,
) -> Result<DlaOutput> {
    config.validate_for(data.len())?;
    if let PropensitySource::Fixed(v) = source {
        if v.len() != data.len() {
            return Err(Error::invalid(format!(
                "{} fixed propensities for {} samples",
                v.len(),
                data.len()
            )));
        }
    }
    let learned = matches!(source, PropensitySource::Learned);
    let mut rng = config.init_rng();
    let mut f = LinearSigmoidModel::init(data.dim(), false, config.init, &mut rng)?;
    let mut g = LinearSigmoidModel::init(data.dim(), true, config.init, &mut rng)?;
    let mut opt_f = OptimizerState::new(config.optimizer, f.n_params());
    let mut opt_g = OptimizerState::new(config.optimizer, g.n_params());
    let mut shuffler = Shuffler::new(data.len(), config.seed);

    let mut curve = Vec::new();
    let mut clip_activations = 0;
    let mut converged = false;
    let mut prev: Option<(f64, f64)> = None;
    let mut denom = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.max_epochs {
        let mut total_f = 0.0;
        let mut total_g = 0.0;
        for chunk in shuffler.next_epoch().chunks(config.batch_size) {
            let batch: LabeledBatch<'_> = data.batch(chunk);

            denom.clear();
            match source {
                PropensitySource::Learned => denom.extend(
                    batch
                        .features
                        .iter()
                        .zip(&batch.elapsed)
                        .map(|(x, &e)| sigmoid(g.logit_unchecked(x, e))),
                ),
                PropensitySource::Fixed(theta) => denom.extend(chunk.iter().map(|&i| theta[i])),
            }
            let obj_f = inverse_weighted_objective(&f, &batch, &denom, &config.clip, config.loss_variant)?;
            clip_activations += obj_f.clipped;
            total_f += obj_f.loss * chunk.len() as f64;
            f.apply_gradient_step(&mut opt_f, &obj_f.grad, config.learning_rate)
                .map_err(|e| diverged(epoch, e))?;

            if learned {
                denom.clear();
                denom.extend(batch.features.iter().map(|x| sigmoid(f.logit_unchecked(x, 0.0))));
                let obj_g = inverse_weighted_objective(&g, &batch, &denom, &config.clip, config.loss_variant)?;
                clip_activations += obj_g.clipped;
                total_g += obj_g.loss * chunk.len() as f64;
                g.apply_gradient_step(&mut opt_g, &obj_g.grad, config.learning_rate)
                    .map_err(|e| diverged(epoch, e))?;
            }
        }
        let n = data.len() as f64;
        let loss_f = total_f / n;
        let loss_g = total_g / n;
        check_finite(epoch, "CVR loss", loss_f)?;
        check_finite(epoch, "propensity loss", loss_g)?;
        curve.push(EpochLoss {
            epoch,
            loss: loss_f,
            propensity_loss: learned.then_some(loss_g),
        });
        if let Some((pf, pg)) = prev {
            let f_done = relative_change(pf, loss_f) < config.convergence_tol;
            let g_done = !learned || relative_change(pg, loss_g) < config.convergence_tol;
            if f_done && g_done {
                converged = true;
                break;
            }
        }
        prev = Some((loss_f, loss_g));
    }

    let last = curve.last().expect("at least one epoch runs");
    let report = TrainReport {
        epochs: last.epoch,
        final_loss: last.loss,
        final_propensity_loss: last.propensity_loss,
        clip_activations,
        converged,
        curve,
    };
    Ok(DlaOutput {
        cvr: f,
        propensity: g,
        report,
    })
}
