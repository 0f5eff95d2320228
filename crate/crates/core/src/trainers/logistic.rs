use crate::data::TrainingData;
use crate::error::Result;
use crate::losses::{inverse_weighted_objective, LabeledBatch, LossVariant};
use crate::model::{LinearSigmoidModel, OptimizerState};

use super::{check_finite, diverged, relative_change, EpochLoss, Shuffler, TrainConfig, TrainReport};

/// Logistic regression on the observed labels.
pub fn train_naive(data: &TrainingData, config: &TrainConfig) -> Result<(LinearSigmoidModel, TrainReport)> {
    fit_logistic(data, &data.y_obs, config)
}

/// Logistic regression on the true labels; needs ground truth.
pub fn train_oracle(data: &TrainingData, config: &TrainConfig) -> Result<(LinearSigmoidModel, TrainReport)> {
    let labels = data.require_y_true()?;
    fit_logistic(data, labels, config)
}

/// Cross-entropy fit expressed as the inverse-weighted objective with unit
/// denominators, which keeps it arithmetically identical to the dual
/// learner's CVR step when propensities are all one.
fn fit_logistic(
    data: &TrainingData,
    labels: &[bool],
    config: &TrainConfig,
) -> Result<(LinearSigmoidModel, TrainReport)> {
    config.validate_for(data.len())?;
    let mut model = LinearSigmoidModel::init(data.dim(), false, config.init, &mut config.init_rng())?;
    let mut opt = OptimizerState::new(config.optimizer, model.n_params());
    let mut shuffler = Shuffler::new(data.len(), config.seed);
    let ones = vec![1.0; config.batch_size];
    let mut curve = Vec::new();
    let mut converged = false;
    let mut prev: Option<f64> = None;

    for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        for chunk in shuffler.next_epoch().chunks(config.batch_size) {
            let batch = LabeledBatch {
                features: chunk.iter().map(|&i| data.row(i)).collect(),
                elapsed: chunk.iter().map(|&i| data.elapsed[i]).collect(),
                y_obs: chunk.iter().map(|&i| labels[i]).collect(),
                y_true: None,
                o_true: None,
            };
            let obj = inverse_weighted_objective(&model, &batch, &ones[..chunk.len()], &config.clip, LossVariant::Ips)?;
            total += obj.loss * chunk.len() as f64;
            model
                .apply_gradient_step(&mut opt, &obj.grad, config.learning_rate)
                .map_err(|e| diverged(epoch, e))?;
        }
        let loss = total / data.len() as f64;
        check_finite(epoch, "training loss", loss)?;
        curve.push(EpochLoss {
            epoch,
            loss,
            propensity_loss: None,
        });
        if let Some(p) = prev {
            if relative_change(p, loss) < config.convergence_tol {
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
